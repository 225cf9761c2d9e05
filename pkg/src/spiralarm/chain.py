"""Serial elastic-joint chain built from a discretized arm design.

The straightened design becomes a chain of rigid unit bodies joined by
revolute hinges on the axis, one joint per adjacent unit pair. Joint i sits
between unit i (tipward) and unit i + 1, at straightened station i + 1; the
root unit is welded at the origin with the body along +x. A positive joint
angle turns the tipward side counterclockwise, toward the +y ("left") flank,
and q = +limit at every joint reproduces the packed spiral; q = -limit packs
the mirror way.

Cable k runs from a fixed guide on the root face through one hole per unit
(on each unit's tip-side face) to a knot on the tipmost unit. Segment i of
that polyline crosses exactly joint i, so its length depends on q_i alone;
the per-joint closed forms below give cable lengths and moment arms without
posing the chain.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import RobotDesign, body_width

_LIMIT_SLACK = 1e-12


def hinge_stiffness(elastic_modulus: float, depth: float, thickness: float,
                    hinge_length: float) -> float:
    """Torsional stiffness of one elastic hinge, N*mm/rad.

    Rectangular-beam bending law E*w*t^3 / (12*h) for a strip of thickness t,
    out-of-plane depth w and free length h.
    """
    if min(elastic_modulus, depth, thickness, hinge_length) <= 0:
        raise ValueError("material constants and hinge geometry must be > 0")
    return elastic_modulus * depth * thickness ** 3 / (12.0 * hinge_length)


@dataclass(frozen=True)
class MaterialConfig:
    """Elastic-layer material. depth=None uses the design's root face width.

    depth is a single scalar for the whole arm so that consecutive joint
    stiffnesses keep the exact t^3/h scaling of the self-similar layer
    (ratio beta^2 between neighbors).
    """

    elastic_modulus: float = 26.0  # N/mm^2, elastomer scale
    depth: float | None = None     # mm, out-of-plane

    def resolved_depth(self, design: RobotDesign) -> float:
        if self.depth is not None:
            return self.depth
        return float(body_width(design.params, design.params.theta0))


@dataclass(frozen=True)
class CableRouting:
    """One cable's polyline plan in the straightened frame, tip first.

    holes[j] is the point on unit j's tip-side face; holes[0] is the knot.
    anchor is the fixed guide on the root face that the motor pulls through.
    """

    cable_id: int
    side: str
    holes: np.ndarray
    anchor: np.ndarray


@dataclass
class RobotState:
    """Joint angles, radians, tip-first; |q_i| <= limit + 1e-12."""

    q: np.ndarray

    def copy(self) -> "RobotState":
        return RobotState(q=self.q.copy())


@dataclass(frozen=True)
class JointChain:
    """The simulation-ready arm: joints, rigid bodies, cables.

    station_x[j] is the straightened x of ray j (root face at 0); joint i
    hinges at (station_x[i+1], 0). unit_polygons[j] is unit j's merged
    left+right outline at rest, counterclockwise. The cable tables hold the
    per-joint constants of the separable length model: segment i spans
    u = hole_i - hinge_i on the tipward unit and v = hole_{i+1} - hinge_i on
    the rootward one, giving
    len_i(q)^2 = |u|^2 + |v|^2 - 2*((u.v)*cos q + (u x v)*sin q).
    """

    design: RobotDesign
    stiffness: np.ndarray       # (n_joints,) N*mm/rad
    limit: float                # rad, symmetric box per joint
    station_x: np.ndarray       # (n_units + 1,)
    unit_polygons: np.ndarray   # (n_units, 6, 2) rest outlines
    cables: tuple[CableRouting, ...]
    cable_const: np.ndarray     # (n_cables,) root-segment length
    cable_sq: np.ndarray        # (n_cables, n_joints) |u|^2 + |v|^2
    cable_dot: np.ndarray       # (n_cables, n_joints) u.v
    cable_cross: np.ndarray     # (n_cables, n_joints) u x v

    @property
    def n_units(self) -> int:
        return self.unit_polygons.shape[0]

    @property
    def n_joints(self) -> int:
        return self.stiffness.shape[0]

    @property
    def n_cables(self) -> int:
        return len(self.cables)

    @property
    def hinge_points(self) -> np.ndarray:
        pts = np.zeros((self.n_joints, 2))
        pts[:, 0] = self.station_x[1:-1]
        return pts

    def zero_state(self) -> RobotState:
        return RobotState(q=np.zeros(self.n_joints))

    def packed_state(self, side: int = +1) -> RobotState:
        return RobotState(q=np.full(self.n_joints, side * self.limit))


def _merged_outline(unit) -> np.ndarray:
    # counterclockwise hexagon: root axis point, up the +y flank to the tip
    # face, across the axis, back along the -y flank
    c1, c0, pl0, pl1 = unit.quad_left
    pr0 = pl0 * np.array([1.0, -1.0])
    pr1 = pl1 * np.array([1.0, -1.0])
    return np.array([c0, pl0, pl1, c1, pr1, pr0])


def build_chain(design: RobotDesign, material: MaterialConfig | None = None) -> JointChain:
    """Assemble joints, stiffnesses and cable tables from a design.

    Joint i's stiffness is hinge_stiffness of the layer at its face; limits
    are the discretization step on both sides, so the packed pose is exactly
    the all-limits-active state.
    """
    if material is None:
        material = MaterialConfig()
    if design.cable_count == 3:
        raise ValueError("three-cable mechanics is not simulated; "
                         "the three-cable design is geometry output only")
    t = np.asarray(design.layer_thickness_per_joint, dtype=float)
    h = np.asarray(design.gap_per_joint, dtype=float)
    if np.any(t <= 0) or np.any(h <= 0):
        raise ValueError("hinge layer thickness and gap must be > 0")
    depth = material.resolved_depth(design)
    stiffness = np.array([
        hinge_stiffness(material.elastic_modulus, depth, float(ti), float(hi))
        for ti, hi in zip(t, h)])

    n = design.n_units
    station_x = design.station_x
    spec = design.spec
    root_width = float(body_width(design.params, design.params.theta0))
    margin = 1.5 * spec.cable_diameter
    root_edge = 0.5 * root_width - margin

    holes_per_unit = np.array([u.cable_holes for u in design.units])  # (n, k, 2)
    n_cables = holes_per_unit.shape[1]
    sides = {2: ("left", "right"), 1: ("left",)}[design.cable_count]
    anchor_y = {2: (root_edge, -root_edge), 1: (min(margin, 0.5 * root_width),)}[
        design.cable_count]

    cables = []
    n_joints = n - 1
    sq = np.zeros((n_cables, n_joints))
    dot = np.zeros((n_cables, n_joints))
    cross = np.zeros((n_cables, n_joints))
    const = np.zeros(n_cables)
    for k in range(n_cables):
        holes = holes_per_unit[:, k, :]
        anchor = np.array([0.0, anchor_y[k]])
        cables.append(CableRouting(cable_id=k, side=sides[k], holes=holes, anchor=anchor))
        const[k] = float(np.linalg.norm(anchor - holes[n - 1]))
        for i in range(n_joints):
            hinge = np.array([station_x[i + 1], 0.0])
            u = holes[i] - hinge
            v = holes[i + 1] - hinge
            sq[k, i] = u @ u + v @ v
            dot[k, i] = u @ v
            cross[k, i] = u[0] * v[1] - u[1] * v[0]

    return JointChain(
        design=design,
        stiffness=stiffness,
        limit=design.params.delta_theta,
        station_x=station_x,
        unit_polygons=np.array([_merged_outline(u) for u in design.units]),
        cables=tuple(cables),
        cable_const=const,
        cable_sq=sq,
        cable_dot=dot,
        cable_cross=cross,
    )


def _check_state(chain: JointChain, state: RobotState) -> np.ndarray:
    q = np.asarray(state.q, dtype=float)
    if q.shape != (chain.n_joints,):
        raise ValueError(f"state has {q.shape} angles, chain has {chain.n_joints} joints")
    # slack covers finite-difference probes that straddle the limit
    if np.any(np.abs(q) > chain.limit + 1e-5):
        worst = int(np.argmax(np.abs(q)))
        raise ValueError(f"joint {worst} angle {q[worst]:.6f} exceeds limit {chain.limit:.6f}")
    return q


def unit_transforms(chain: JointChain, state: RobotState) -> tuple[np.ndarray, np.ndarray]:
    """World pose of every unit: rotations (n,2,2) and translations (n,2).

    Unit n-1 is the identity; each tipward unit adds a rotation by its joint
    angle about the joint's hinge point.
    """
    q = _check_state(chain, state)
    n = chain.n_units
    rots = np.empty((n, 2, 2))
    trans = np.empty((n, 2))
    rots[n - 1] = np.eye(2)
    trans[n - 1] = 0.0
    for i in range(chain.n_joints - 1, -1, -1):
        c, s = math.cos(q[i]), math.sin(q[i])
        r_joint = np.array([[c, -s], [s, c]])
        hinge = np.array([chain.station_x[i + 1], 0.0])
        rots[i] = rots[i + 1] @ r_joint
        trans[i] = trans[i + 1] + rots[i + 1] @ (hinge - r_joint @ hinge)
    return rots, trans


@dataclass(frozen=True)
class ArmShape:
    """Posed geometry: per-unit outlines, axis polyline root to tip, tip pose."""

    unit_polygons: np.ndarray  # (n_units, 6, 2)
    centerline: np.ndarray     # (n_units + 1, 2), root first
    tip_position: np.ndarray   # (2,)
    tip_angle: float           # rad, accumulated joint rotation

    @property
    def centerline_length(self) -> float:
        return float(np.linalg.norm(np.diff(self.centerline, axis=0), axis=1).sum())


def forward_shape(chain: JointChain, state: RobotState) -> ArmShape:
    """Rigid forward kinematics from the fixed base."""
    rots, trans = unit_transforms(chain, state)
    polys = np.einsum("nij,nvj->nvi", rots, chain.unit_polygons) + trans[:, None, :]
    n = chain.n_units
    centerline = np.empty((n + 1, 2))
    centerline[0] = 0.0  # root face station, welded
    for j in range(n - 1, -1, -1):
        st = np.array([chain.station_x[j], 0.0])
        centerline[n - j] = rots[j] @ st + trans[j]
    tip_angle = float(np.sum(state.q))
    return ArmShape(unit_polygons=polys, centerline=centerline,
                    tip_position=centerline[-1].copy(), tip_angle=tip_angle)


def cable_length(chain: JointChain, state: RobotState, cable_id: int) -> float:
    """Length of the cable polyline through the posed holes (frictionless)."""
    if not 0 <= cable_id < chain.n_cables:
        raise ValueError(f"unknown cable {cable_id}")
    rots, trans = unit_transforms(chain, state)
    holes = chain.cables[cable_id].holes
    world = np.einsum("nij,nj->ni", rots, holes) + trans
    pts = np.vstack([chain.cables[cable_id].anchor, world[::-1]])  # root to tip
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def cable_segment_lengths(chain: JointChain, q: np.ndarray) -> np.ndarray:
    """(n_cables, n_joints) joint-crossing segment lengths, closed form."""
    cos_q = np.cos(q)[None, :]
    sin_q = np.sin(q)[None, :]
    sq = chain.cable_sq - 2.0 * (chain.cable_dot * cos_q + chain.cable_cross * sin_q)
    return np.sqrt(np.maximum(sq, 0.0))


def cable_lengths_fast(chain: JointChain, q: np.ndarray) -> np.ndarray:
    """All cable lengths at q without posing the chain."""
    return chain.cable_const + cable_segment_lengths(chain, q).sum(axis=1)


def cable_length_grads(chain: JointChain, q: np.ndarray) -> np.ndarray:
    """(n_cables, n_joints) dL/dq; the negated entries are the moment arms."""
    seg = cable_segment_lengths(chain, q)
    cos_q = np.cos(q)[None, :]
    sin_q = np.sin(q)[None, :]
    num = chain.cable_dot * sin_q - chain.cable_cross * cos_q
    return num / np.maximum(seg, 1e-12)


def packed_spiral_origin(chain: JointChain, side: int = +1) -> np.ndarray:
    """World point where the spiral's origin sits when fully packed.

    The root unit never moves, so the packed coil's center is fixed by the
    design alone; side +1 is the +y (left) coil, -1 its mirror.
    """
    from .geometry import central_radius  # local import to avoid cycle noise

    p = chain.design.params
    n = chain.n_units
    th_n = n * p.delta_theta
    th_m = (n - 1) * p.delta_theta
    c_n = np.array([float(central_radius(p, th_n)) * math.cos(th_n),
                    -float(central_radius(p, th_n)) * math.sin(th_n)])
    c_m = np.array([float(central_radius(p, th_m)) * math.cos(th_m),
                    -float(central_radius(p, th_m)) * math.sin(th_m)])
    # rigid map taking c_n -> origin and c_m onto +x, like the root unit's
    # straightening; the spiral origin rides along
    u = (c_m - c_n) / np.linalg.norm(c_m - c_n)
    rot = np.array([[u[0], u[1]], [-u[1], u[0]]])
    origin = rot @ (np.zeros(2) - c_n)
    if side < 0:
        origin = origin * np.array([1.0, -1.0])
    return origin
