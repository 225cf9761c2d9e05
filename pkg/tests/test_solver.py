"""Scene contacts and the quasi-static equilibrium solve.

Cross-checks: penalty contacts against hand-worked disk/polygon overlaps,
the analytic potential gradient against central finite differences (free
and in contact), and the solved equilibria against closed-form limits
(zero load, cancelling loads, the small-tension linearization, and the
fully curled pose under saturating tension).
"""
import math

import numpy as np
import pytest

from spiralarm.geometry import DesignSpec, design_from_spec
from spiralarm.chain import build_chain, cable_length_grads, cable_lengths_fast
from spiralarm.solver import (Contact, SceneObject, SolverOptions, arm_potential,
                              contact_response, solve_equilibrium,
                              solve_equilibrium_tension)


def ref_chain(cable_count=2):
    spec = DesignSpec(robot_length=250.0, tip_width=5.5,
                      taper_angle=math.radians(15.0), cable_count=cable_count)
    return build_chain(design_from_spec(spec))


# one fake unit: a unit square with midpoint vertices on top and bottom,
# matching the six-vertex layout real units use
SQUARE = np.array([(0.0, 0.0), (0.5, 0.0), (1.0, 0.0),
                   (1.0, 1.0), (0.5, 1.0), (0.0, 1.0)])


class TestSceneObject:
    def test_disk_constructor(self):
        d = SceneObject.disk((1.0, 2.0), 3.0)
        assert d.kind == "disk"
        assert d.radius == 3.0
        assert np.allclose(d.center, [1.0, 2.0])

    def test_disk_rejects_bad_radius(self):
        with pytest.raises(ValueError):
            SceneObject.disk((0.0, 0.0), 0.0)
        with pytest.raises(ValueError):
            SceneObject.disk((0.0, 0.0), -1.0)

    def test_polygon_must_be_ccw(self):
        with pytest.raises(ValueError):
            SceneObject.polygon([(0, 0), (0, 1), (1, 1), (1, 0)])

    def test_polygon_must_be_convex(self):
        with pytest.raises(ValueError):
            SceneObject.polygon([(0, 0), (2, 0), (2, 2), (1, 0.5), (0, 2)])

    def test_polygon_needs_three_vertices(self):
        with pytest.raises(ValueError):
            SceneObject.polygon([(0, 0), (1, 0)])

    def test_probe_needs_stiffness(self):
        with pytest.raises(ValueError):
            SceneObject(kind="probe", center=np.zeros(2), radius=1.0)
        with pytest.raises(ValueError):
            SceneObject.probe((0.0, 0.0), 1.0, -0.5)
        assert SceneObject.probe((0.0, 0.0), 1.0, 0.5).stiffness == 0.5
        # zero-stiffness probe is legal: it yields without pushing back
        assert SceneObject.probe((0.0, 0.0), 1.0, 0.0).stiffness == 0.0

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            SceneObject(kind="wall")

    def test_negative_friction(self):
        with pytest.raises(ValueError):
            SceneObject.disk((0.0, 0.0), 1.0, friction_mu=-0.1)


class TestContactResponse:
    def test_empty_scene(self):
        assert contact_response([SQUARE], None) == (0.0, [])
        assert contact_response([SQUARE], []) == (0.0, [])

    def test_distant_disk(self):
        e, cs = contact_response([SQUARE], [SceneObject.disk((10.0, 10.0), 1.0)])
        assert e == 0.0 and cs == []

    def test_face_graze(self):
        e, cs = contact_response([SQUARE], [SceneObject.disk((0.5, 1.2), 0.3)])
        assert len(cs) == 1
        c = cs[0]
        assert c.depth == pytest.approx(0.1, rel=1e-12)
        assert c.force == pytest.approx(100.0, rel=1e-12)
        assert np.allclose(c.point, [0.5, 1.0])
        assert np.allclose(c.normal, [0.0, -1.0])
        assert e == pytest.approx(0.5 * 1e3 * 0.1**2, rel=1e-12)

    def test_buried_center_resolves_through_nearest_face(self):
        # disk center inside the polygon: depth = radius + clearance to exit
        e, cs = contact_response([SQUARE], [SceneObject.disk((0.5, 0.3), 0.2)])
        assert len(cs) == 1
        assert cs[0].depth == pytest.approx(0.5, rel=1e-12)
        assert np.allclose(cs[0].point, [0.5, 0.0])
        assert e == pytest.approx(125.0, rel=1e-12)

    def test_corner_owned_by_one_edge(self):
        e, cs = contact_response([SQUARE], [SceneObject.disk((1.1, 1.1), 0.2)])
        assert len(cs) == 1
        c = cs[0]
        assert c.depth == pytest.approx(0.2 - math.sqrt(0.02), rel=1e-12)
        assert np.allclose(c.point, [1.0, 1.0])
        s = math.sqrt(0.5)
        assert np.allclose(c.normal, [-s, -s])

    def test_one_contact_per_penetrated_face(self):
        # big disk over the corner: both top faces register, shared vertex once
        e, cs = contact_response([SQUARE], [SceneObject.disk((0.75, 1.5), 0.6)])
        assert len(cs) == 2
        depths = sorted(c.depth for c in cs)
        assert depths[1] == pytest.approx(0.1, rel=1e-12)
        assert depths[0] == pytest.approx(0.6 - math.sqrt(0.3125), rel=1e-12)

    def test_probe_uses_own_stiffness(self):
        e, cs = contact_response([SQUARE], [SceneObject.probe((0.5, 1.2), 0.3, 2.5)])
        assert len(cs) == 1
        assert cs[0].force == pytest.approx(2.5 * 0.1, rel=1e-12)
        assert e == pytest.approx(0.5 * 2.5 * 0.1**2, rel=1e-12)

    def test_polygon_obstacle_overlap(self):
        obstacle = SceneObject.polygon([(0.8, 0.2), (1.6, 0.2), (1.6, 0.8), (0.8, 0.8)])
        e, cs = contact_response([SQUARE], [obstacle])
        assert len(cs) == 2
        for c in cs:
            assert c.depth == pytest.approx(0.2, rel=1e-12)
            assert np.allclose(c.normal, [-1.0, 0.0])
        assert e == pytest.approx(40.0, rel=1e-12)

    def test_energy_matches_contact_list(self):
        scene = [SceneObject.disk((0.75, 1.5), 0.6),
                 SceneObject.probe((0.5, -0.2), 0.3, 2.0)]
        e, cs = contact_response([SQUARE], scene)
        k = {0: 1e3, 1: 2.0}
        recomputed = sum(0.5 * k[c.object_index] * c.depth**2 for c in cs)
        assert e == pytest.approx(recomputed, rel=1e-12)
        for c in cs:
            assert c.force == pytest.approx(k[c.object_index] * c.depth, rel=1e-12)

    def test_contact_fields(self):
        _, cs = contact_response([SQUARE], [SceneObject.disk((0.5, 1.2), 0.3)])
        c = cs[0]
        assert isinstance(c, Contact)
        assert c.unit == 0
        assert c.object_index == 0
        assert np.linalg.norm(c.normal) == pytest.approx(1.0, rel=1e-12)


class TestArmPotential:
    def test_rest_is_zero(self):
        chain = ref_chain()
        e, g, cs = arm_potential(chain, np.zeros(chain.n_joints),
                                 [("tension", 0.0), ("tension", 0.0)])
        assert e == 0.0
        assert np.all(g == 0.0)
        assert cs == []

    def test_tension_term_is_tension_times_length(self):
        chain = ref_chain()
        z = np.zeros(chain.n_joints)
        L = cable_lengths_fast(chain, z)
        e, _, _ = arm_potential(chain, z, [("tension", 7.0), ("tension", 0.0)])
        assert e == pytest.approx(7.0 * L[0], rel=1e-12)

    def test_rejects_wrong_shape(self):
        chain = ref_chain()
        with pytest.raises(ValueError):
            arm_potential(chain, np.zeros(3), [("tension", 0.0), ("tension", 0.0)])

    def test_evaluates_just_past_the_limit(self):
        # difference probes straddle the box; the evaluation must not balk
        chain = ref_chain()
        q = np.full(chain.n_joints, chain.limit + 1e-6)
        e, g, _ = arm_potential(chain, q, [("tension", 1.0), ("tension", 0.0)])
        assert np.isfinite(e) and np.all(np.isfinite(g))

    def test_gradient_matches_differences_free(self):
        chain = ref_chain()
        act = [("tension", 40.0), ("tension", 5.0)]
        rng = np.random.default_rng(5)
        h = 1e-6
        worst = 0.0
        for _ in range(50):
            q = rng.uniform(-0.9, 0.9, chain.n_joints) * chain.limit
            _, g, _ = arm_potential(chain, q, act)
            fd = np.empty_like(g)
            for i in range(chain.n_joints):
                qp, qm = q.copy(), q.copy()
                qp[i] += h
                qm[i] -= h
                fd[i] = (arm_potential(chain, qp, act)[0]
                         - arm_potential(chain, qm, act)[0]) / (2 * h)
            worst = max(worst, np.max(np.abs(fd - g)) / max(1.0, np.max(np.abs(g))))
        assert worst <= 1e-5

    def test_gradient_matches_differences_in_contact(self):
        # disk parked across the rest sweep: every sampled state overlaps it
        chain = ref_chain()
        act = [("tension", 60.0), ("tension", 0.0)]
        scene = [SceneObject.disk((150.0, 10.0), 20.0)]
        rng = np.random.default_rng(5)
        h = 1e-6
        worst = 0.0
        for _ in range(50):
            q = rng.uniform(-0.05, 0.05, chain.n_joints) * chain.limit
            _, g, cs = arm_potential(chain, q, act, scene)
            assert len(cs) >= 2
            fd = np.empty_like(g)
            for i in range(chain.n_joints):
                qp, qm = q.copy(), q.copy()
                qp[i] += h
                qm[i] -= h
                fd[i] = (arm_potential(chain, qp, act, scene)[0]
                         - arm_potential(chain, qm, act, scene)[0]) / (2 * h)
            worst = max(worst, np.max(np.abs(fd - g)) / max(1.0, np.max(np.abs(g))))
        assert worst <= 1e-5


class TestSolveEquilibrium:
    def test_zero_tension_stays_at_rest(self):
        chain = ref_chain()
        res = solve_equilibrium(chain, [("tension", 0.0), ("tension", 0.0)])
        assert res.converged
        assert res.iterations == 0
        assert res.residual == 0.0
        assert np.all(res.state.q == 0.0)

    def test_equal_tensions_cancel(self):
        chain = ref_chain()
        res = solve_equilibrium(chain, [("tension", 25.0), ("tension", 25.0)])
        assert res.converged
        assert np.max(np.abs(res.state.q)) <= 1e-10

    def test_small_tension_linearizes(self):
        # dE/dq = k q + T dL/dq vanishes at q = -T g0 / k to first order
        chain = ref_chain()
        T = 0.01
        res = solve_equilibrium(chain, [("tension", T), ("tension", 0.0)])
        g0 = cable_length_grads(chain, np.zeros(chain.n_joints))[0]
        q_lin = -T * g0 / chain.stiffness
        rel = np.linalg.norm(res.state.q - q_lin) / np.linalg.norm(q_lin)
        assert res.converged
        assert rel <= 1e-3

    def test_single_cable_curls_one_way(self):
        chain = ref_chain()
        for T in (5.0, 40.0, 120.0):
            res = solve_equilibrium(chain, [("tension", T), ("tension", 0.0)])
            assert res.converged
            assert np.all(res.state.q >= -1e-12)

    def test_swapping_cables_mirrors_the_pose(self):
        chain = ref_chain()
        ra = solve_equilibrium(chain, [("tension", 30.0), ("tension", 5.0)])
        rb = solve_equilibrium(chain, [("tension", 5.0), ("tension", 30.0)])
        assert ra.converged and rb.converged
        assert np.max(np.abs(ra.state.q + rb.state.q)) <= 1e-6

    def test_feasibility_under_saturating_tension(self):
        chain = ref_chain()
        res = solve_equilibrium(chain, [("tension", 5000.0), ("tension", 0.0)])
        assert res.converged
        assert np.all(np.abs(res.state.q) <= chain.limit + 1e-12)
        at_limit = int(np.sum(res.state.q >= chain.limit - 1e-9))
        assert at_limit >= math.ceil(0.95 * chain.n_joints)

    def test_deterministic(self):
        chain = ref_chain()
        scene = [SceneObject.disk((150.0, 40.0), 30.0)]
        act = [("tension", 37.5), ("tension", 4.0)]
        qa = solve_equilibrium(chain, act, scene).state.q
        qb = solve_equilibrium(chain, act, scene).state.q
        assert np.array_equal(qa, qb)

    def test_warm_start_at_solution_converges_immediately(self):
        chain = ref_chain()
        act = [("tension", 30.0), ("tension", 5.0)]
        first = solve_equilibrium(chain, act)
        again = solve_equilibrium(chain, act,
                                  options=SolverOptions(warm_start=first.state))
        assert again.iterations == 0
        assert np.array_equal(again.state.q, first.state.q)

    def test_accepted_energies_never_increase(self):
        chain = ref_chain()
        iterations, energies = [], []

        def record(i, q, e):
            iterations.append(i)
            energies.append(e)

        res = solve_equilibrium(chain, [("tension", 40.0), ("tension", 2.0)],
                                options=SolverOptions(callback=record))
        assert res.converged
        assert iterations == list(range(len(iterations)))
        assert len(energies) >= 2
        for a, b in zip(energies, energies[1:]):
            assert b <= a + 1e-12
        assert energies[-1] == pytest.approx(res.energy, rel=1e-12)

    def test_tension_wrapper_matches(self):
        chain = ref_chain()
        ra = solve_equilibrium(chain, [("tension", 12.0), ("tension", 3.0)])
        rb = solve_equilibrium_tension(chain, [12.0, 3.0])
        assert np.array_equal(ra.state.q, rb.state.q)

    def test_rejects_bad_actuation(self):
        chain = ref_chain()
        for act in ([("tension", -1.0), ("tension", 0.0)],
                    [("length", 0.0), ("tension", 0.0)],
                    [("spin", 1.0), ("tension", 0.0)],
                    [("tension", 1.0)]):
            with pytest.raises(ValueError):
                solve_equilibrium(chain, act)


class TestJointBounds:
    def test_narrow_box_is_respected(self):
        chain = ref_chain()
        nb = 0.1 * chain.limit
        bounds = (-nb * np.ones(chain.n_joints), nb * np.ones(chain.n_joints))
        res = solve_equilibrium(chain, [("tension", 100.0), ("tension", 0.0)],
                                options=SolverOptions(joint_bounds=bounds))
        assert res.converged
        assert np.all(res.state.q <= nb + 1e-12)
        # a pull this hard parks every joint on the box
        assert np.all(res.state.q >= nb - 1e-9)

    def test_rejects_wrong_shape(self):
        chain = ref_chain()
        with pytest.raises(ValueError, match="one entry per joint"):
            solve_equilibrium(chain, [("tension", 1.0), ("tension", 0.0)],
                              options=SolverOptions(
                                  joint_bounds=(np.zeros(3), np.ones(3))))

    def test_rejects_inverted_bounds(self):
        chain = ref_chain()
        bad = (0.2 * np.ones(chain.n_joints), -0.2 * np.ones(chain.n_joints))
        with pytest.raises(ValueError, match="lower bound exceeds"):
            solve_equilibrium(chain, [("tension", 1.0), ("tension", 0.0)],
                              options=SolverOptions(joint_bounds=bad))


class TestLengthControl:
    def test_slack_targets_leave_arm_at_rest(self):
        chain = ref_chain()
        L = cable_lengths_fast(chain, np.zeros(chain.n_joints))
        res = solve_equilibrium(chain, [("length", L[0] + 5.0),
                                        ("length", L[1] + 5.0)])
        assert res.converged
        assert np.max(np.abs(res.state.q)) <= 1e-10
        assert np.all(res.cable_tensions == 0.0)

    def test_shortening_reports_spring_tension(self):
        chain = ref_chain()
        L = cable_lengths_fast(chain, np.zeros(chain.n_joints))
        target = L[0] - 30.0
        res = solve_equilibrium(chain, [("length", target), ("tension", 0.0)])
        assert res.converged
        assert res.cable_lengths[0] >= target
        stretch = res.cable_lengths[0] - target
        assert res.cable_tensions[0] == pytest.approx(1e3 * stretch, rel=1e-9)
        assert np.sum(res.state.q) > 0.0

    def test_progressive_shortening_curls_monotonically(self):
        chain = ref_chain()
        L = cable_lengths_fast(chain, np.zeros(chain.n_joints))
        warm, last = None, -np.inf
        for pull in (5.0, 10.0, 15.0, 20.0, 25.0):
            res = solve_equilibrium(chain, [("length", L[0] - pull),
                                            ("tension", 0.0)],
                                    options=SolverOptions(warm_start=warm))
            assert res.converged
            total = float(np.sum(res.state.q))
            assert total > last
            last, warm = total, res.state

    def test_mixed_modes_converge(self):
        chain = ref_chain()
        L = cable_lengths_fast(chain, np.zeros(chain.n_joints))
        res = solve_equilibrium(chain, [("length", L[0] - 10.0), ("tension", 3.0)])
        assert res.converged
        assert np.sum(res.state.q) > 0.0


class TestContactEquilibrium:
    # contact stiffness is sized so a gentle grasp sinks in by at most a
    # thousandth of the tip width; this is the regime the penalty is tuned for
    BUDGET = 1e-3 * 5.5

    def test_gentle_disk_contact_stays_within_budget(self):
        chain = ref_chain()
        res = solve_equilibrium(chain, [("tension", 5.0), ("tension", 0.0)],
                                [SceneObject.disk((150.0, 40.0), 30.0)])
        assert res.converged
        assert len(res.contacts) >= 1
        assert max(c.depth for c in res.contacts) <= self.BUDGET
        assert np.all(np.abs(res.state.q) <= chain.limit + 1e-12)

    def test_gentle_polygon_contact_stays_within_budget(self):
        chain = ref_chain()
        wall = SceneObject.polygon([(120.0, 25.0), (190.0, 25.0),
                                    (190.0, 95.0), (120.0, 95.0)])
        res = solve_equilibrium(chain, [("tension", 5.0), ("tension", 0.0)], [wall])
        assert res.converged
        assert len(res.contacts) >= 1
        assert max(c.depth for c in res.contacts) <= self.BUDGET

    def test_depth_scales_inversely_with_stiffness(self):
        # penalty depth is force over stiffness: stiffer scene, shallower dent
        chain = ref_chain()
        act = [("tension", 5.0), ("tension", 0.0)]
        disk = [SceneObject.disk((150.0, 40.0), 30.0)]
        soft = solve_equilibrium(chain, act, disk,
                                 options=SolverOptions(k_contact=1e3))
        stiff = solve_equilibrium(chain, act, disk,
                                  options=SolverOptions(k_contact=1e4))
        d_soft = max(c.depth for c in soft.contacts)
        d_stiff = max(c.depth for c in stiff.contacts)
        assert d_stiff < d_soft
        assert d_stiff <= 0.12 * d_soft

    def test_yielding_probe_reports_its_own_force(self):
        chain = ref_chain()
        probe = SceneObject.probe((150.0, 40.0), 30.0, 0.01)
        res = solve_equilibrium(chain, [("tension", 20.0), ("tension", 0.0)],
                                [probe])
        assert res.converged
        assert len(res.contacts) >= 1
        for c in res.contacts:
            assert c.force == pytest.approx(0.01 * c.depth, abs=1e-12)
        # a near-weightless probe barely slows the arm: it sinks in deep
        assert max(c.depth for c in res.contacts) > 1.0
