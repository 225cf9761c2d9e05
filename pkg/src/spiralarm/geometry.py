"""Closed-form geometry of a logarithmic-spiral arm and its discretization.

The arm's body is designed on a log spiral rho(theta) = a * exp(b * theta).
The wall one turn out, rho(theta + 2*pi), bounds the body on the other side;
midway between the two runs the central curve that becomes the arm's axis.
Cutting the packed body along rays every delta_theta yields N self-similar
quadrilateral units joined by elastic hinges on the central curve.

Angles are radians everywhere in this module. Lengths are millimeters.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

TWO_PI = 2.0 * math.pi

# taper angles this close to zero give an unbuildable (zero width) arm
_MIN_TAPER = 1e-9


def spiral_radius(params: "SpiralParams", theta):
    """Radius of the design spiral at angle theta: a * exp(b * theta)."""
    return params.a * np.exp(params.b * np.asarray(theta, dtype=float))


def central_radius(params: "SpiralParams", theta):
    """Radius of the arm's central curve, the mean of the two walls.

    Equals (a/2) * (exp(2*pi*b) + 1) * exp(b*theta), i.e. the average of
    spiral_radius at theta and theta + 2*pi.
    """
    e2pb = math.exp(TWO_PI * params.b)
    return 0.5 * params.a * (e2pb + 1.0) * np.exp(params.b * np.asarray(theta, dtype=float))


def body_width(params: "SpiralParams", theta):
    """Body width at angle theta: the radial distance between the walls."""
    th = np.asarray(theta, dtype=float)
    return params.a * (np.exp(params.b * (th + TWO_PI)) - np.exp(params.b * th))


def taper_angle(b: float) -> float:
    """Opening angle of the straightened arm's conical contour.

    2 * arctan(b * (exp(2*pi*b) - 1) / (exp(2*pi*b) + 1)); zero at b = 0 and
    strictly increasing in b. Constant along the body.
    """
    if b < 0:
        raise ValueError(f"spiral slope b must be >= 0, got {b}")
    e2pb = math.exp(TWO_PI * b)
    return 2.0 * math.atan(b * (e2pb - 1.0) / (e2pb + 1.0))


def solve_b_for_taper(phi: float) -> float:
    """Invert taper_angle: the slope b giving taper phi, phi in [0, pi/2)."""
    if not 0.0 <= phi < math.pi / 2:
        raise ValueError(f"taper angle must be in [0, pi/2), got {phi}")
    if phi == 0.0:
        return 0.0
    hi = 1.0
    while taper_angle(hi) < phi:
        hi *= 2.0
        if hi > 64.0:  # taper_angle -> pi as b -> inf, so this cannot trigger
            raise ValueError(f"no slope reaches taper {phi}")
    return brentq(lambda b: taper_angle(b) - phi, 0.0, hi, xtol=1e-15, rtol=1e-15)


def robot_length(params: "SpiralParams", theta0: float) -> float:
    """Arm length from the tip (theta = 0) out to theta0.

    Length convention: the integral of central_radius over theta, in closed
    form a * (exp(2*pi*b) + 1) * (exp(b*theta0) - 1) / (2*b). Continuous in b
    at b = 0, where it reduces to a * theta0.
    """
    if theta0 < 0:
        raise ValueError(f"theta0 must be >= 0, got {theta0}")
    a, b = params.a, params.b
    if b == 0.0:
        return a * theta0
    e2pb = math.exp(TWO_PI * b)
    return a * (e2pb + 1.0) * math.expm1(b * theta0) / (2.0 * b)


def central_arc_length_true(params: "SpiralParams", theta0: float) -> float:
    """True arc length of the central curve on [0, theta0].

    The design-length convention (robot_length) integrates the radius only;
    the geometric arc length carries an extra sqrt(1 + b^2) factor. Provided
    for reference, not used by the design pipeline.
    """
    return math.sqrt(1.0 + params.b ** 2) * robot_length(params, theta0)


def packed_curvature(params: "SpiralParams", theta):
    """Curvature of the central curve at theta in the packed state.

    2 * exp(-b*theta) / (a * (exp(2*pi*b) + 1) * sqrt(b^2 + 1)); the maximum
    curvature the body can take, reached when adjacent units touch.
    """
    a, b = params.a, params.b
    e2pb = math.exp(TWO_PI * b)
    th = np.asarray(theta, dtype=float)
    return 2.0 * np.exp(-b * th) / (a * (e2pb + 1.0) * math.sqrt(b * b + 1.0))


def deformation_rate(b: float) -> float:
    """Surface stretch ratio between the two opposite packed states: exp(2*pi*b)."""
    if b < 0:
        raise ValueError(f"spiral slope b must be >= 0, got {b}")
    return math.exp(TWO_PI * b)


def unit_scale_ratio(b: float, delta_theta: float) -> float:
    """Similarity ratio between adjacent units: exp(b * delta_theta)."""
    if b < 0 or delta_theta < 0:
        raise ValueError("b and delta_theta must be >= 0")
    return math.exp(b * delta_theta)


def solve_theta0_for_length(a: float, b: float, length: float) -> float:
    """Invert robot_length for theta0 at fixed a, b."""
    if length < 0:
        raise ValueError(f"length must be >= 0, got {length}")
    if b == 0.0:
        return length / a
    e2pb = math.exp(TWO_PI * b)
    return math.log1p(2.0 * b * length / (a * (e2pb + 1.0))) / b


def solve_b_for_widths(length: float, tip_width: float, root_width: float) -> float:
    """Slope b of the arm with the given length and tip/root widths.

    Bracketed root find on the closed forms: a = tip_width/(exp(2*pi*b) - 1),
    theta0 from the length, then root width tip_width * exp(b * theta0).
    """
    if min(length, tip_width, root_width) <= 0:
        raise ValueError("length and widths must be > 0")
    if root_width <= tip_width:
        raise ValueError("root must be wider than the tip")

    def residual(b):
        e2pb = math.exp(TWO_PI * b)
        a = tip_width / (e2pb - 1.0)
        th0 = math.log1p(2.0 * b * length / (a * (e2pb + 1.0))) / b
        return tip_width * math.exp(b * th0) - root_width

    lo = 1e-6
    while residual(lo) > 0:
        lo /= 10.0
        if lo < 1e-15:
            raise ValueError("no slope matches the requested widths")
    hi = 1.0
    while residual(hi) < 0:
        hi *= 2.0
        if hi > 64.0:
            raise ValueError("no slope matches the requested widths")
    return brentq(residual, lo, hi, xtol=1e-14, rtol=1e-15)


@dataclass(frozen=True)
class SpiralParams:
    """The spiral (a, b, theta0) plus derived angles; single source of truth.

    theta0 is the snapped root angle, an exact float product n * delta_theta.
    theta0_presnap keeps the root angle that solves the requested length
    before snapping. psi is the polar tangential angle (b = cot psi) and phi
    the taper angle.
    """

    a: float
    b: float
    theta0: float
    delta_theta: float
    theta0_presnap: float = None  # type: ignore[assignment]
    psi: float = field(init=False)
    phi: float = field(init=False)

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError(f"scale a must be > 0, got {self.a}")
        if self.b < 0:
            raise ValueError(f"slope b must be >= 0, got {self.b}")
        if self.theta0 <= 0:
            raise ValueError(f"theta0 must be > 0, got {self.theta0}")
        if self.delta_theta <= 0:
            raise ValueError(f"delta_theta must be > 0, got {self.delta_theta}")
        if self.theta0_presnap is None:
            object.__setattr__(self, "theta0_presnap", self.theta0)
        # psi = arccot(b); pi/2 at b = 0
        object.__setattr__(self, "psi", math.atan2(1.0, self.b))
        object.__setattr__(self, "phi", taper_angle(self.b))

    @property
    def n_units(self) -> int:
        return int(round(self.theta0 / self.delta_theta))


@dataclass(frozen=True)
class DesignSpec:
    """What the user asks for: overall size, taper, and build options."""

    robot_length: float
    tip_width: float
    taper_angle: float
    delta_theta: float = math.pi / 6
    cable_count: int = 2
    layer_fraction: float = 0.075
    cable_diameter: float = 0.8

    def __post_init__(self):
        if self.robot_length <= 0:
            raise ValueError(f"robot_length must be > 0, got {self.robot_length}")
        if self.tip_width <= 0:
            raise ValueError(f"tip_width must be > 0, got {self.tip_width}")
        if not _MIN_TAPER < self.taper_angle < math.pi / 2:
            raise ValueError(
                f"taper_angle must be in (0, pi/2) for a buildable arm, got {self.taper_angle}")
        if self.delta_theta <= 0:
            raise ValueError(f"delta_theta must be > 0, got {self.delta_theta}")
        if self.cable_count not in (1, 2, 3):
            raise ValueError(f"cable_count must be 1, 2 or 3, got {self.cable_count}")
        if not 0 < self.layer_fraction < 0.5:
            raise ValueError(f"layer_fraction must be in (0, 0.5), got {self.layer_fraction}")
        if not 0.05 <= self.layer_fraction <= 0.10:
            warnings.warn(
                f"layer_fraction {self.layer_fraction} outside the usual 0.05..0.10 band",
                stacklevel=2)
        if self.cable_diameter <= 0:
            raise ValueError(f"cable_diameter must be > 0, got {self.cable_diameter}")


def solve_spiral_params(spec: DesignSpec) -> SpiralParams:
    """Solve (a, b, theta0) from length, tip width and taper, then snap.

    b inverts the taper, a = tip_width / (exp(2*pi*b) - 1), theta0 inverts the
    length in closed form. theta0 is then snapped up to a whole number of
    delta_theta steps (the arm is never shorter than requested).
    """
    b = solve_b_for_taper(spec.taper_angle)
    e2pb = math.exp(TWO_PI * b)
    a = spec.tip_width / (e2pb - 1.0)
    if a <= 0 or not math.isfinite(a):
        raise ValueError("infeasible spec: non-positive spiral scale")
    theta0_presnap = solve_theta0_for_length(a, b, spec.robot_length)
    # 1e-9 slack so an exact integer ratio does not round up on float dust
    n = math.ceil(theta0_presnap / spec.delta_theta - 1e-9)
    return SpiralParams(a=a, b=b, theta0=n * spec.delta_theta,
                        delta_theta=spec.delta_theta, theta0_presnap=theta0_presnap)


def exact_length_spec(robot_length: float, tip_width: float,
                      taper_angle: float, reference_step: float = math.pi / 6,
                      **kwargs) -> DesignSpec:
    """Design spec whose unit count spans the requested length exactly.

    With a fixed discretization step the snap-up can leave the arm up to one
    root unit longer than asked, and root units are big: a wide-taper arm
    lands several percent long while a narrow one lands near target, which
    poisons any side-by-side comparison at "equal" length. This keeps the
    unit count the reference step would give but shaves the step so the
    units tile the requested length with zero snap shift. The shaved step is
    never larger than the reference, so packing stays feasible.
    """
    b = solve_b_for_taper(taper_angle)
    if b == 0.0:
        # b = 0 is fine analytically but a constant-width strip never closes
        # onto a tip width, so no design exists for it
        raise ValueError("infeasible spec: taper angle must be > 0")
    a = tip_width / (math.exp(TWO_PI * b) - 1.0)
    if a <= 0 or not math.isfinite(a):
        raise ValueError("infeasible spec: non-positive spiral scale")
    theta0 = solve_theta0_for_length(a, b, robot_length)
    n = math.ceil(theta0 / reference_step - 1e-9)
    return DesignSpec(robot_length=robot_length, tip_width=tip_width,
                      taper_angle=taper_angle, delta_theta=theta0 / n,
                      **kwargs)


@dataclass(frozen=True)
class UnitGeometry:
    """One rigid block of the arm in the straightened frame.

    index runs from the tip (0) to the root (n_units - 1). quad_left is the
    +y half, counterclockwise; quad_right its exact mirror about the axis.
    hinge_point is the unit's root-side articulation point on the axis.
    cable_holes are points on the tip-side face, one per cable.
    width is the body width at the tip-side face; scale the similarity factor
    relative to unit 0.
    """

    index: int
    quad_left: np.ndarray
    quad_right: np.ndarray
    hinge_point: np.ndarray
    cable_holes: np.ndarray
    width: float
    scale: float


@dataclass(frozen=True)
class RobotDesign:
    """The discretized arm: units, per-joint elastic layer sizes, cable plan.

    station_x[j] is the straightened x of the ray-j face plane, with the root
    face at x = 0 and the tip face at the largest x. Joint i articulates at
    station i + 1. gap_per_joint is the open material notch at the axis in
    the straightened state; unit material spans shrink by half a notch on
    each jointed side.
    """

    params: SpiralParams
    spec: DesignSpec
    units: tuple[UnitGeometry, ...]
    layer_thickness_per_joint: np.ndarray
    gap_per_joint: np.ndarray
    cable_count: int

    @property
    def n_units(self) -> int:
        return len(self.units)

    @property
    def station_x(self) -> np.ndarray:
        xs = [u.quad_left[1, 0] for u in self.units]  # tip-side axis vertex
        xs.append(0.0)
        return np.asarray(xs)

    @property
    def chord_lengths(self) -> np.ndarray:
        s = self.station_x
        return s[:-1] - s[1:]

    @property
    def unit_material_lengths(self) -> np.ndarray:
        """Axial material span per unit: the chord minus adjacent half-notches."""
        half = 0.5 * self.gap_per_joint
        trim_tip = np.concatenate([[0.0], half])       # joint i-1 side of unit i
        trim_root = np.concatenate([half, [0.0]])      # joint i side of unit i
        return self.chord_lengths - trim_tip - trim_root

    @property
    def realized_length(self) -> float:
        """Design length at the snapped root angle (>= the requested length)."""
        return robot_length(self.params, self.params.theta0)


def _cw_point(radius: float, theta: float) -> np.ndarray:
    # clockwise polar convention: growing theta winds toward -y, so that the
    # straightened arm packs at joint angles +delta_theta (left/inner = +y)
    return np.array([radius * math.cos(theta), -radius * math.sin(theta)])


def _hole_offsets(width: float, spec: DesignSpec) -> np.ndarray:
    """Lateral hole offsets along a face of the given width, one per cable."""
    margin = 1.5 * spec.cable_diameter
    edge = 0.5 * width - margin
    if spec.cable_count == 2:
        return np.array([edge, -edge])
    if spec.cable_count == 1:
        # single hole just off the axis toward the pulled (+y) side
        return np.array([min(margin, 0.5 * width)])
    # three cables sit on a ring at 120 degrees; these are the planar
    # projections of that ring (one on top, two sharing the bottom)
    return np.array([edge, -0.5 * edge, -0.5 * edge])


def discretize(params: SpiralParams, spec: DesignSpec) -> RobotDesign:
    """Cut the packed spiral into units and lay them out straightened.

    Rays at theta_j = j * delta_theta intersect the spiral (p_j) and the
    central curve (c_j). The packed left quad of unit j is p_j p_j+1 c_j+1
    c_j; straightening maps each central chord onto the x axis, root chord
    ending at the origin, tip toward +x. The right half is the mirror image.
    """
    n = params.n_units
    if abs(params.theta0 - n * params.delta_theta) > 1e-9:
        raise ValueError("theta0 is not an integer multiple of delta_theta; "
                         "build params via solve_spiral_params")
    if n < 3:
        raise ValueError(f"degenerate chain: need at least 3 units, got {n}")

    dth = params.delta_theta
    thetas = np.arange(n + 1) * dth
    c_pts = np.array([_cw_point(float(central_radius(params, t)), t) for t in thetas])
    p_pts = np.array([_cw_point(float(spiral_radius(params, t)), t) for t in thetas])

    chords = np.linalg.norm(np.diff(c_pts, axis=0), axis=1)
    # station_x[j]: straightened x of ray j; root (j = n) at 0, tip at max x
    station_x = np.concatenate([np.cumsum(chords[::-1])[::-1], [0.0]])

    widths = np.asarray(body_width(params, thetas))
    units = []
    for j in range(n):
        u = (c_pts[j + 1] - c_pts[j]) / chords[j]
        # proper rotation taking the chord direction u onto (-1, 0)
        rot = np.array([[-u[0], -u[1]], [u[1], -u[0]]])
        p0 = rot @ (p_pts[j] - c_pts[j]) + np.array([station_x[j], 0.0])
        p1 = rot @ (p_pts[j + 1] - c_pts[j]) + np.array([station_x[j], 0.0])
        c0 = np.array([station_x[j], 0.0])
        c1 = np.array([station_x[j + 1], 0.0])
        quad_left = np.array([c1, c0, p0, p1])          # counterclockwise, +y
        mirror = quad_left * np.array([1.0, -1.0])
        quad_right = mirror[::-1].copy()                # counterclockwise, -y

        offsets = _hole_offsets(float(widths[j]), spec)
        if offsets.max() <= 0:
            raise ValueError(
                f"infeasible cable holes: unit {j} face width {widths[j]:.3f} mm "
                f"leaves no room at cable diameter {spec.cable_diameter} mm")
        face_dir = (p0 - c0) / np.linalg.norm(p0 - c0)  # +y side of the tip face
        # the tip face is kinked at the axis: the -y half is the mirror of the
        # +y half, so a negative offset rides the mirrored face direction
        holes = c0[None, :] + np.abs(offsets)[:, None] * face_dir[None, :]
        holes[offsets < 0, 1] *= -1.0

        units.append(UnitGeometry(
            index=j,
            quad_left=quad_left,
            quad_right=quad_right,
            hinge_point=c1,
            cable_holes=holes,
            width=float(widths[j]),
            scale=math.exp(params.b * float(thetas[j])),
        ))

    joint_faces = widths[1:n]  # face width at joints 0..n-2 (stations 1..n-1)
    layer_t = spec.layer_fraction * joint_faces
    gaps = 2.0 * layer_t * math.tan(0.5 * dth)

    return RobotDesign(
        params=params,
        spec=spec,
        units=tuple(units),
        layer_thickness_per_joint=layer_t,
        gap_per_joint=gaps,
        cable_count=spec.cable_count,
    )


def design_from_spec(spec: DesignSpec) -> RobotDesign:
    """Convenience: solve the spiral and discretize in one call."""
    return discretize(solve_spiral_params(spec), spec)
