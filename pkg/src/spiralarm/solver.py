"""Quasi-static equilibrium of the cable-driven chain.

The arm's rest state is straight; cables and obstacles deform it. The
potential minimized over joint angles q (box-constrained to the joint
limits) is

    E(q) = sum_i  1/2 k_i q_i^2                      elastic hinges
         + sum_c  T_c * L_c(q)                       tension-controlled cables
         + sum_c  1/2 K_cable * max(0, L_c - Lt_c)^2 length-controlled cables
         + sum    1/2 K * d^2                        contact penalties

where L_c is the cable polyline length, Lt_c a commanded target length, and
d a penetration depth against a scene object (K is the global contact
stiffness, or the probe's own stiffness for probe objects). Cables only
pull: the length penalty is one-sided.

Minimization runs a box-constrained limited-memory quasi-Newton iteration
(L-BFGS-B) on the analytic gradient; its line search only accepts decreases,
so iterate energies are non-increasing. Convergence is judged on the
infinity norm of the projected gradient step, q - clip(q - dE/dq), in
N*mm/rad, recomputed independently of the inner iteration's own criteria.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from .chain import (JointChain, RobotState, cable_length_grads,
                    cable_lengths_fast, cable_segment_lengths, forward_shape)

TENSION = "tension"
LENGTH = "length"


@dataclass(frozen=True)
class SceneObject:
    """A fixed rigid object the arm can press against.

    kind "disk": circle at center with radius. kind "polygon": convex,
    counterclockwise vertices. kind "probe": a disk that yields, with its own
    (low) contact stiffness standing in for a compliant sensor target.
    friction_mu only feeds the load-prediction arithmetic; the equilibrium
    itself is frictionless.
    """

    kind: str
    center: np.ndarray | None = None
    radius: float = 0.0
    vertices: np.ndarray | None = None
    stiffness: float | None = None
    friction_mu: float = 0.0

    def __post_init__(self):
        if self.kind not in ("disk", "polygon", "probe"):
            raise ValueError(f"unknown scene object kind {self.kind!r}")
        if self.friction_mu < 0:
            raise ValueError("friction coefficient must be >= 0")
        if self.kind in ("disk", "probe"):
            if self.center is None or self.radius <= 0:
                raise ValueError("disk needs a center and radius > 0")
            object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
            # stiffness 0 is a legal probe: it yields freely and reads nothing
            if self.kind == "probe" and (self.stiffness is None or self.stiffness < 0):
                raise ValueError("probe needs stiffness >= 0")
        else:
            v = np.asarray(self.vertices, dtype=float)
            if v.ndim != 2 or v.shape[0] < 3 or v.shape[1] != 2:
                raise ValueError("polygon needs at least 3 planar vertices")
            e = np.roll(v, -1, axis=0) - v
            cross = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
            if np.any(cross < -1e-9):
                raise ValueError("polygon must be convex and counterclockwise")
            area2 = float(np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1]))
            if area2 <= 0:
                raise ValueError("polygon must be counterclockwise with positive area")
            object.__setattr__(self, "vertices", v)

    @staticmethod
    def disk(center, radius: float, friction_mu: float = 0.0) -> "SceneObject":
        return SceneObject(kind="disk", center=np.asarray(center, dtype=float),
                           radius=float(radius), friction_mu=friction_mu)

    @staticmethod
    def polygon(vertices, friction_mu: float = 0.0) -> "SceneObject":
        return SceneObject(kind="polygon", vertices=np.asarray(vertices, dtype=float),
                           friction_mu=friction_mu)

    @staticmethod
    def probe(center, radius: float, stiffness: float,
              friction_mu: float = 0.0) -> "SceneObject":
        return SceneObject(kind="probe", center=np.asarray(center, dtype=float),
                           radius=float(radius), stiffness=float(stiffness),
                           friction_mu=friction_mu)


@dataclass(frozen=True)
class Contact:
    """One penalty contact: the scene pushes the arm at point along normal.

    force = stiffness * depth >= 0; normal is a unit vector, the direction of
    the push on the arm. object_index is the position in the scene list.
    """

    unit: int
    point: np.ndarray
    normal: np.ndarray
    force: float
    depth: float
    object_index: int


def _closest_on_segment(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    t = float(np.dot(p - a, ab) / np.dot(ab, ab))
    return a + min(1.0, max(0.0, t)) * ab


def _point_in_polygon(p: np.ndarray, poly: np.ndarray) -> bool:
    # even-odd crossing test; robust enough for the slightly nonconvex units
    x, y = p
    inside = False
    n = poly.shape[0]
    for i in range(n):
        x0, y0 = poly[i]
        x1, y1 = poly[(i + 1) % n]
        if (y0 > y) != (y1 > y):
            xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            if x < xc:
                inside = not inside
    return inside


def _closest_on_boundary(p: np.ndarray, poly: np.ndarray) -> np.ndarray:
    best = None
    best_d2 = math.inf
    n = poly.shape[0]
    for i in range(n):
        c = _closest_on_segment(p, poly[i], poly[(i + 1) % n])
        d2 = float(np.dot(c - p, c - p))
        if d2 < best_d2:
            best_d2, best = d2, c
    return best


def _disk_unit_contacts(poly: np.ndarray, center: np.ndarray, radius: float):
    """Penetrations of a disk against one unit polygon, one per clipped face.

    Each polygon edge is a distinct surface patch; a unit curling around a
    small disk touches it on several faces, and the contact arc metric needs
    every patch. Shared vertices are owned by the edge that starts there."""
    if _point_in_polygon(center, poly):
        nearest = _closest_on_boundary(center, poly)
        gap = float(np.linalg.norm(center - nearest))
        normal = center - nearest
        nn = float(np.linalg.norm(normal))
        if nn < 1e-12:
            normal = nearest - poly.mean(axis=0)
            nn = float(np.linalg.norm(normal))
        return [(radius + gap, nearest, normal / nn)]
    found = []
    n = poly.shape[0]
    for i in range(n):
        a = poly[i]
        ab = poly[(i + 1) % n] - a
        t = float(np.dot(center - a, ab) / np.dot(ab, ab))
        if t >= 1.0:     # endpoint belongs to the next edge
            continue
        point = a + max(0.0, t) * ab
        away = point - center
        gap = float(np.linalg.norm(away))
        depth = radius - gap
        if depth <= 0.0:
            continue
        if gap < 1e-12:  # center on the face: push along the outward edge normal
            away = np.array([ab[1], -ab[0]])
            gap = float(np.linalg.norm(away))
        found.append((depth, point, away / gap))
    return found


def _polygon_pair_contacts(unit_poly: np.ndarray, obstacle: np.ndarray):
    """Vertex-in-polygon penalties, both directions."""
    found = []
    # outward normals of the convex ccw obstacle
    e = np.roll(obstacle, -1, axis=0) - obstacle
    n_out = np.stack([e[:, 1], -e[:, 0]], axis=1)
    n_out /= np.linalg.norm(n_out, axis=1)[:, None]
    for v in unit_poly:
        behind = np.einsum("ej,j->e", n_out, v) - np.einsum("ej,ej->e", n_out, obstacle)
        if np.all(behind <= 0.0):
            i = int(np.argmax(behind))   # least-deep face = exit face
            depth = -float(behind[i])
            if depth > 0.0:
                found.append((depth, v.copy(), n_out[i].copy()))
    for v in obstacle:
        if _point_in_polygon(v, unit_poly):
            nearest = _closest_on_boundary(v, unit_poly)
            d = float(np.linalg.norm(nearest - v))
            if d > 1e-12:
                found.append((d, nearest, (v - nearest) / d))
    return found


def _bounding_circles(posed_polygons):
    """Center and radius of a circle covering each posed polygon."""
    quads = all(p.shape == posed_polygons[0].shape for p in posed_polygons)
    if quads:
        stack = np.stack(posed_polygons)
        centers = stack.mean(axis=1)
        radii = np.sqrt(((stack - centers[:, None, :]) ** 2).sum(axis=2)).max(axis=1)
        return centers, radii
    centers = np.array([p.mean(axis=0) for p in posed_polygons])
    radii = np.array([np.linalg.norm(p - c, axis=1).max()
                      for p, c in zip(posed_polygons, centers)])
    return centers, radii


def contact_response(posed_polygons, scene: Sequence[SceneObject] | None,
                     k_contact: float = 1e3) -> tuple[float, list[Contact]]:
    """Penalty energy and contact list for posed unit polygons in a scene.

    Every contact contributes 1/2 * K * depth^2 with K = k_contact, except
    against probe objects which use their own stiffness. A bounding-circle
    pass culls the unit/object pairs that cannot touch, so scenes cost little
    until the arm is actually near something.
    """
    contacts: list[Contact] = []
    energy = 0.0
    if not scene:
        return energy, contacts
    centers, radii = _bounding_circles(posed_polygons)
    for oi, obj in enumerate(scene):
        k = obj.stiffness if obj.kind == "probe" else k_contact
        if obj.kind in ("disk", "probe"):
            ob_center, ob_radius = obj.center, obj.radius
        else:
            ob_center = obj.vertices.mean(axis=0)
            ob_radius = float(np.linalg.norm(obj.vertices - ob_center,
                                             axis=1).max())
        near = np.linalg.norm(centers - ob_center, axis=1) <= radii + ob_radius
        for ui in np.flatnonzero(near):
            poly = posed_polygons[ui]
            if obj.kind in ("disk", "probe"):
                found = _disk_unit_contacts(poly, obj.center, obj.radius)
            else:
                found = _polygon_pair_contacts(poly, obj.vertices)
            for depth, point, normal in found:
                energy += 0.5 * k * depth * depth
                contacts.append(Contact(unit=int(ui), point=point, normal=normal,
                                        force=k * depth, depth=depth,
                                        object_index=oi))
    return energy, contacts


def _contact_torques(contacts: Sequence[Contact], hinge_world: np.ndarray,
                     n_joints: int, hessian: np.ndarray | None = None) -> np.ndarray:
    """dE/dq from the contact list; hinge_world[i] is joint i posed.

    With hessian given, accumulates the Gauss-Newton penalty curvature
    (stiffness recovered as force/depth) into it in place.
    """
    g = np.zeros(n_joints)
    for c in contacts:
        rel = c.point[None, :] - hinge_world[c.unit:]
        # d(point)/dq_i is the perpendicular of rel; scene force opposes it
        torque = rel[:, 0] * c.normal[1] - rel[:, 1] * c.normal[0]
        g[c.unit:] -= c.force * torque
        if hessian is not None:
            row = np.zeros(n_joints)
            row[c.unit:] = torque
            hessian += (c.force / c.depth) * np.outer(row, row)
    return g


def _cable_curvatures(chain: JointChain, q: np.ndarray,
                      grads: np.ndarray) -> np.ndarray:
    """d2L_c/dq_i^2 per cable and joint (each joint owns one segment)."""
    seg = np.maximum(cable_segment_lengths(chain, q), 1e-12)
    num2 = chain.cable_dot * np.cos(q)[None, :] + chain.cable_cross * np.sin(q)[None, :]
    return num2 / seg - grads * grads / seg


@dataclass
class SolverOptions:
    """Knobs for the equilibrium solve.

    tolerance defaults to 1e-8 * max stiffness * joint limit, the natural
    torque scale of the stiffest hinge. callback, if set, receives
    (iteration, q, energy) at every accepted iterate. joint_bounds, if set,
    narrows the per-joint search box inside the structural limits: (lo, hi)
    arrays in radians, used by scripted scenarios to hold joints near a
    commanded pose the way stuck (non-sliding) contacts would.
    """

    tolerance: float | None = None
    max_iterations: int = 10_000
    k_contact: float = 1e3       # N/mm
    k_cable: float = 1e3         # N/mm, length-mode cable stiffness
    warm_start: RobotState | None = None
    callback: Callable[[int, np.ndarray, float], None] | None = None
    joint_bounds: tuple[np.ndarray, np.ndarray] | None = None


@dataclass(frozen=True)
class EquilibriumResult:
    state: RobotState
    energy: float
    residual: float
    cable_lengths: np.ndarray
    cable_tensions: np.ndarray
    contacts: tuple[Contact, ...]
    converged: bool
    iterations: int


def _hinge_world(chain: JointChain, centerline: np.ndarray) -> np.ndarray:
    # centerline[m] is station n - m (root first); joint i hinges at station i + 1
    n = chain.n_units
    return centerline[n - 1 - np.arange(chain.n_joints)]


def _parse_actuation(chain: JointChain,
                     actuation: Sequence[tuple[str, float]]):
    if len(actuation) != chain.n_cables:
        raise ValueError(f"{len(actuation)} actuation entries for {chain.n_cables} cables")
    modes = []
    values = np.zeros(chain.n_cables)
    for c, (mode, value) in enumerate(actuation):
        if mode == TENSION:
            if value < 0:
                raise ValueError(f"cable {c}: negative tension {value}")
        elif mode == LENGTH:
            if value <= 0:
                raise ValueError(f"cable {c}: target length must be > 0, got {value}")
        else:
            raise ValueError(f"cable {c}: unknown actuation mode {mode!r}")
        modes.append(mode)
        values[c] = value
    return np.array([m == TENSION for m in modes]), values


def _potential(chain: JointChain, q: np.ndarray, tension_mask: np.ndarray,
               values: np.ndarray, scene: Sequence[SceneObject],
               k_cable: float, k_contact: float,
               need_grad: bool, need_hess: bool = False):
    k = chain.stiffness
    lengths = cable_lengths_fast(chain, q)
    energy = 0.5 * float(k @ (q * q))
    stretch = np.where(tension_mask, 0.0, np.maximum(0.0, lengths - values))
    energy += float(np.sum(np.where(tension_mask, values * lengths,
                                    0.5 * k_cable * stretch * stretch)))
    contacts: list[Contact] = []
    shape = None
    if scene:
        shape = forward_shape(chain, RobotState(q))
        c_energy, contacts = contact_response(shape.unit_polygons, scene,
                                              k_contact)
        energy += c_energy
    if not need_grad:
        return energy, None, None, lengths, contacts
    grads = cable_length_grads(chain, q)
    weights = np.where(tension_mask, values, k_cable * stretch)
    grad = k * q + weights @ grads
    hess = None
    if need_hess:
        # Gauss-Newton curvature: exact elastic and per-segment cable
        # terms, first-order penalty terms for taut cables and contacts
        hess = np.diag(k + weights @ _cable_curvatures(chain, q, grads))
        active = ~tension_mask & (stretch > 0)
        for c in np.flatnonzero(active):
            hess += k_cable * np.outer(grads[c], grads[c])
    if contacts:
        hinges = _hinge_world(chain, shape.centerline)
        grad += _contact_torques(contacts, hinges, chain.n_joints, hess)
    return energy, grad, hess, lengths, contacts


def arm_potential(chain: JointChain, q,
                  actuation: Sequence[tuple[str, float]],
                  scene: Sequence[SceneObject] | None = None,
                  options: SolverOptions | None = None):
    """Energy and analytic gradient of the arm potential at a given pose.

    Returns (energy, gradient, contacts) for the same functional the
    equilibrium solve minimizes. The pose need not respect the joint limits,
    so finite-difference probes can straddle them.
    """
    if options is None:
        options = SolverOptions()
    tension_mask, values = _parse_actuation(chain, actuation)
    q = np.asarray(q, dtype=float)
    if q.shape != (chain.n_joints,):
        raise ValueError(f"q must have {chain.n_joints} entries, got {q.shape}")
    energy, grad, _, _, contacts = _potential(
        chain, q, tension_mask, values, list(scene) if scene else [],
        options.k_cable, options.k_contact, need_grad=True)
    return energy, grad, contacts


def solve_equilibrium(chain: JointChain,
                      actuation: Sequence[tuple[str, float]],
                      scene: Sequence[SceneObject] | None = None,
                      options: SolverOptions | None = None) -> EquilibriumResult:
    """Minimize the arm potential under mixed per-cable actuation.

    actuation[c] is ("tension", newtons) or ("length", millimeters) for cable
    c. The two public wrappers fix one mode for every cable; the controller
    mixes them (e.g. one side holds a tension while the other pays out to a
    length).
    """
    if options is None:
        options = SolverOptions()
    tension_mask, values = _parse_actuation(chain, actuation)
    scene = list(scene) if scene else []

    k = chain.stiffness
    limit = chain.limit
    tol = options.tolerance
    if tol is None:
        tol = 1e-8 * float(k.max()) * limit

    lo = np.full(chain.n_joints, -limit)
    hi = np.full(chain.n_joints, limit)
    if options.joint_bounds is not None:
        blo = np.asarray(options.joint_bounds[0], dtype=float)
        bhi = np.asarray(options.joint_bounds[1], dtype=float)
        if blo.shape != (chain.n_joints,) or bhi.shape != (chain.n_joints,):
            raise ValueError("joint_bounds arrays must have one entry per joint")
        lo = np.maximum(lo, blo)
        hi = np.minimum(hi, bhi)
        if np.any(lo > hi):
            raise ValueError("joint_bounds lower bound exceeds upper bound")

    def project(q):
        return np.clip(q, lo, hi)

    def evaluate(q, need_grad: bool, need_hess: bool = False):
        return _potential(chain, q, tension_mask, values, scene,
                          options.k_cable, options.k_contact,
                          need_grad, need_hess)

    q0 = project(np.asarray(options.warm_start.q, dtype=float).copy()
                 if options.warm_start is not None else np.zeros(chain.n_joints))

    def objective(q):
        energy, grad, _, _, _ = evaluate(q, True)
        return energy, grad

    counter = [0]
    if options.callback is not None:
        options.callback(0, q0.copy(), evaluate(q0, False)[0])

        def scipy_cb(qk):
            counter[0] += 1
            options.callback(counter[0], qk.copy(), evaluate(qk, False)[0])
    else:
        scipy_cb = None

    energy, grad, _, lengths, contacts = evaluate(q0, True)
    residual = float(np.abs(q0 - project(q0 - grad)).max())
    q = q0
    iterations = 0
    bound_eps = 1e-9 * (hi - lo + 1.0)

    state = [q, energy, grad, lengths, contacts, residual, iterations]

    def newton_polish(max_steps: int) -> None:
        """Active-set Newton with the analytic curvature, applied in place.

        Accepts a step only when it closes in on stationarity, or buys an
        energy decrease at a bounded residual detour (that escapes misjudged
        active sets); stalls just end the loop, they never raise.
        """
        q, energy, grad, lengths, contacts, residual, iterations = state
        polish = 0
        while residual > tol and polish < max_steps \
                and iterations < options.max_iterations:
            polish += 1
            iterations += 1
            energy, grad, hess, lengths, contacts = evaluate(q, True,
                                                             need_hess=True)
            at_lo = (q <= lo + bound_eps) & (grad > 0)
            at_hi = (q >= hi - bound_eps) & (grad < 0)
            free = ~(at_lo | at_hi)
            if not np.any(free):
                break
            idx = np.flatnonzero(free)
            h_ff = hess[np.ix_(idx, idx)] + 1e-12 * float(k.max()) * np.eye(idx.size)
            try:
                step = np.linalg.solve(h_ff, -grad[idx])
            except np.linalg.LinAlgError:
                break
            improved = False
            t = 1.0
            for _ in range(30):
                q_try = q.copy()
                q_try[idx] += t * step
                q_try = project(q_try)
                e_try, g_try, _, l_try, c_try = evaluate(q_try, True)
                r_try = float(np.abs(q_try - project(q_try - g_try)).max())
                no_worse = e_try <= energy + 1e-12 * (1.0 + abs(energy))
                strictly_down = e_try < energy - 1e-14 * (1.0 + abs(energy))
                if (no_worse and r_try < residual) or (strictly_down
                                                       and r_try <= 4.0 * residual):
                    q, energy, grad = q_try, e_try, g_try
                    lengths, contacts = l_try, c_try
                    residual = r_try
                    improved = True
                    if options.callback is not None:
                        counter[0] += 1
                        options.callback(counter[0], q.copy(), energy)
                    break
                t *= 0.5
            if not improved:
                break
        state[:] = [q, energy, grad, lengths, contacts, residual, iterations]

    # a warm start sits near the answer: Newton alone usually closes it in a
    # few steps, and every L-BFGS-B round below is a cold restart by contrast
    newton_polish(60)

    # the quasi-Newton loop stalls at its f-noise floor near stiff penalty
    # valleys; active-set Newton steps with the analytic curvature close the
    # last decades, and a fresh-memory restart cracks line-search stalls
    rounds = 0
    while state[5] > tol and state[6] < options.max_iterations and rounds < 4:
        rounds += 1
        res = minimize(objective, state[0], jac=True, method="L-BFGS-B",
                       bounds=list(zip(lo, hi)),
                       callback=scipy_cb,
                       options=dict(maxiter=options.max_iterations - state[6],
                                    maxfun=50 * options.max_iterations,
                                    ftol=1e-16, gtol=0.25 * tol, maxls=60))
        q = project(np.asarray(res.x, dtype=float))
        energy, grad, _, lengths, contacts = evaluate(q, True)
        residual = float(np.abs(q - project(q - grad)).max())
        state[:] = [q, energy, grad, lengths, contacts, residual,
                    state[6] + int(res.nit)]
        newton_polish(60)
    q, energy, grad, lengths, contacts, residual, iterations = state

    stretch = np.where(tension_mask, 0.0, np.maximum(0.0, lengths - values))
    tensions = np.where(tension_mask, values, options.k_cable * stretch)
    return EquilibriumResult(
        state=RobotState(q=q),
        energy=energy,
        residual=residual,
        cable_lengths=lengths.copy(),
        cable_tensions=tensions,
        contacts=tuple(contacts),
        converged=residual <= tol,
        iterations=iterations,
    )


def solve_equilibrium_tension(chain: JointChain, tensions,
                              scene: Sequence[SceneObject] | None = None,
                              options: SolverOptions | None = None) -> EquilibriumResult:
    """Equilibrium with every cable held at a commanded tension (newtons)."""
    tensions = np.asarray(tensions, dtype=float)
    return solve_equilibrium(chain, [(TENSION, float(t)) for t in tensions],
                             scene, options)


def solve_equilibrium_length(chain: JointChain, target_lengths,
                             scene: Sequence[SceneObject] | None = None,
                             options: SolverOptions | None = None) -> EquilibriumResult:
    """Equilibrium with every cable held at a commanded length (mm).

    Targets act one-sided: a cable shorter than its target goes slack with
    zero tension, never pushes.
    """
    targets = np.asarray(target_lengths, dtype=float)
    return solve_equilibrium(chain, [(LENGTH, float(t)) for t in targets],
                             scene, options)
