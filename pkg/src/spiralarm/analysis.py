"""Wrap construction, grasp-capability prediction, and workspace sampling.

Wrap scenarios are scripted: a geometric construction poses the arm around a
disk, then the equilibrium solver verifies force balance with the joints held
in a narrow stick box (static friction at real contacts keeps a wrapped pose
from sliding back; the box is its stand-in). Two constructions cover the size
range. Small disks nest in the eye of the fully curled arm: every joint curls
to its limit until the coil closes within reach of the disk, after which each
unit rotates just far enough for its outer flat to kiss the disk surface.
Large disks sit against the outside of the arm (cradled on the root block
when they span it, otherwise resting on the proximal wall) and the arm peels
up from straight, again unit by unit until each flat kisses the surface.

The kiss construction never penetrates: a unit stops exactly where the
closest point of its contact flat reaches the disk. The scene disk is then
grown by a hair so that kissing faces register as contacts with measurable
force instead of grazing at zero depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .chain import JointChain, RobotState, packed_spiral_origin
from .solver import (Contact, EquilibriumResult, SceneObject, SolverOptions,
                     solve_equilibrium)

# Scene disks are oversized by this much (mm) so a kissing face shows up in
# the contact list; it is the floor of every reported penetration.
CONTACT_REGISTRATION = 0.015

# A wrap counts when contacts cover at least this arc without the solve
# drifting deeper than the penetration ceiling.
MIN_WRAP_ARC_DEG = 180.0
MAX_WRAP_PENETRATION = 0.1   # mm

_ANCHOR_SLACK = math.radians(1.0)   # stick-box width for outer-wall wraps
_BUDGET_FLOOR = 0.9 * math.pi       # minimum plan arc to attempt an outer wrap


def contact_arc_deg(contacts, center) -> float:
    """Angular span of the object's circumference covered by contacts.

    Measured about the object center as 360 deg minus the largest angular gap
    between consecutive contact points; fewer than two contacts span nothing.
    """
    c = np.asarray(center, dtype=float)
    angs = sorted(
        math.degrees(math.atan2(p[1], p[0])) % 360.0
        for p in (np.asarray(k.point, dtype=float) - c for k in contacts))
    if len(angs) < 2:
        return 0.0
    gaps = np.diff(angs + [angs[0] + 360.0])
    return 360.0 - float(gaps.max())


@dataclass(frozen=True)
class WrapResult:
    """Outcome of one scripted wrap attempt."""

    diameter: float
    center: np.ndarray
    regime: str                  # "nested", "cradled", or "anchored"
    equilibrium: EquilibriumResult
    contact_arc_deg: float
    max_penetration: float
    succeeded: bool


def _top_flats(chain: JointChain):
    """Per unit: the +y contact flat of the rest outline.

    Returns (segments, corners): segments[j] = (x0, x1, y) in world rest
    coordinates, corners[j] = both flat endpoints relative to the unit's
    root-side articulation station.
    """
    sx = chain.station_x
    segments, corners = [], []
    for j in range(chain.n_units):
        poly = chain.unit_polygons[j]
        top = poly[poly[:, 1] > 1e-9]
        y = top[:, 1].max()
        flat = top[np.abs(top[:, 1] - y) < 1e-9]
        x0, x1 = float(flat[:, 0].min()), float(flat[:, 0].max())
        segments.append((x0, x1, float(y)))
        corners.append(np.array([[x0 - sx[j + 1], y], [x1 - sx[j + 1], y]]))
    return segments, corners


def _seg_dist(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    t = float(np.clip(np.dot(p - a, ab) / float(np.dot(ab, ab)), 0.0, 1.0))
    return float(np.linalg.norm(p - (a + t * ab)))


def _march(chain: JointChain, corners, center: np.ndarray, radius: float,
           m_start: int | None = None) -> np.ndarray:
    """Pose the arm so successive contact flats kiss the disk surface.

    Walks joints root to tip accumulating the pose; joints at or beyond
    m_start stay straight. Each walked joint takes the smallest non-negative
    angle that brings its unit's flat segment exactly to distance `radius`
    from `center`; a joint that cannot reach curls to its limit when that
    closes the gap, else stays straight. Angles stay in [0, limit], so the
    result is always feasible and never penetrating.
    """
    n = chain.n_joints
    if m_start is None:
        m_start = n
    sx = chain.station_x
    chords = np.abs(np.diff(sx))
    limit = chain.limit
    q = np.zeros(n)
    pos = np.array([sx[m_start], 0.0])
    heading = 0.0
    for j in range(m_start - 1, -1, -1):
        v1, v2 = corners[j]

        def flat_gap(angle):
            cs, sn = math.cos(heading + angle), math.sin(heading + angle)
            rot = np.array([[cs, -sn], [sn, cs]])
            return _seg_dist(center, pos + rot @ v1, pos + rot @ v2) - radius

        gap0 = flat_gap(0.0)
        if gap0 <= 0.0:
            qj = 0.0
        elif flat_gap(limit) > 0.0:
            # kiss unreachable: close in if curling helps at all
            qj = limit if flat_gap(limit) < gap0 else 0.0
        else:
            lo, hi = 0.0, limit
            for _ in range(45):
                mid = 0.5 * (lo + hi)
                if flat_gap(mid) > 0.0:
                    lo = mid
                else:
                    hi = mid
            qj = lo
        q[j] = qj
        heading += qj
        pos = pos + chords[j] * np.array([math.cos(heading), math.sin(heading)])
    return q


def _wrap_budget(chain: JointChain, radius: float):
    """Joints usable for an outer wrap of this radius and the arc they buy.

    Joint j can ride the surface when the turn between consecutive flats,
    2 asin(chord / 2(radius + halfwidth)), fits inside the limit. The prefix
    of such joints, capped just under a full turn, is the plan.
    """
    chords = np.abs(np.diff(chain.station_x))
    m, total = 0, 0.0
    while m < chain.n_joints:
        ride = radius + 0.5 * chain.design.units[m].width
        arg = chords[m] / (2.0 * ride)
        need = 2.0 * math.asin(arg) if arg <= 1.0 else math.inf
        if need > chain.limit + 1e-9 or total >= 0.95 * 2.0 * math.pi:
            break
        total += need
        m += 1
    return m, total


def _two_circle_upper(p1: np.ndarray, p2: np.ndarray, r: float):
    dd = float(np.linalg.norm(p2 - p1))
    if dd >= 2.0 * r or dd < 1e-12:
        return None
    mid = 0.5 * (p1 + p2)
    h = math.sqrt(r * r - 0.25 * dd * dd)
    perp = np.array([-(p2 - p1)[1], (p2 - p1)[0]]) / dd
    if perp[1] < 0:
        perp = -perp
    return mid + h * perp


def _cradle_center(chain: JointChain, segments, radius: float):
    """Rest the disk on the root block's flat corner and the last hinged
    unit's flat (line contact when the foot falls inside the flat, corner
    contact otherwise). None when no clear cradle exists."""
    n = chain.n_joints
    p1 = np.array([segments[n][1], segments[n][2]])   # root flat, tipward corner
    fx0, fx1, fy = segments[n - 1]
    dy = fy + radius - p1[1]
    center = None
    if radius > abs(dy):
        cx = p1[0] + math.sqrt(radius * radius - dy * dy)
        if fx0 <= cx <= fx1:
            center = np.array([cx, fy + radius])
    if center is None:
        for qx in (fx0, fx1):
            cand = _two_circle_upper(p1, np.array([qx, fy]), radius)
            if cand is None:
                continue
            foot = min(max(cand[0], fx0), fx1)
            if abs(foot - qx) < 1e-9 and cand[1] > fy:
                center = cand
                break
    if center is None:
        return None
    if _seg_dist(center, np.array([fx0, fy]), np.array([fx1, fy])) < radius - 1e-6:
        return None
    poly = chain.unit_polygons[n]
    clear = min(
        _seg_dist(center, poly[i], poly[(i + 1) % len(poly)])
        for i in range(len(poly)))
    if clear < radius - 1e-6:
        return None
    return center


def _anchor_center(segments, m: int, radius: float) -> np.ndarray:
    """Seat the disk over the most proximal planned unit's flat, lifted just
    clear of every flat that stays straight (root block included)."""
    x0, x1, y = segments[m - 1]
    cx = 0.5 * (x0 + x1)
    cy = radius + y
    for fx0, fx1, fy in segments[m:]:
        foot = min(max(cx, fx0), fx1)
        dx = cx - foot
        if abs(dx) < radius:
            cy = max(cy, fy + math.sqrt(radius * radius - dx * dx))
    return np.array([cx, cy])


def _held_solve(chain: JointChain, q: np.ndarray, center: np.ndarray,
                radius: float, max_tension: float,
                slack: float) -> EquilibriumResult:
    limit = chain.limit
    cage = (np.maximum(q - slack, -limit), np.minimum(q, limit))
    tensions = [("tension", max_tension)] + \
               [("tension", 0.0)] * (chain.n_cables - 1)
    scene = [SceneObject.disk(center, radius + CONTACT_REGISTRATION)]
    return solve_equilibrium(
        chain, tensions, scene,
        SolverOptions(warm_start=RobotState(q=q.copy()), joint_bounds=cage))


def _finish(chain: JointChain, diameter: float, regime: str, q: np.ndarray,
            center: np.ndarray, max_tension: float, slack: float) -> WrapResult:
    res = _held_solve(chain, q, center, diameter / 2.0, max_tension, slack)
    rel = np.asarray(center, dtype=float)
    arc = contact_arc_deg(res.contacts, rel)
    pen = max((k.depth for k in res.contacts), default=0.0)
    ok = bool(res.converged and arc >= MIN_WRAP_ARC_DEG
              and pen <= MAX_WRAP_PENETRATION)
    return WrapResult(diameter=diameter, center=rel, regime=regime,
                      equilibrium=res, contact_arc_deg=arc,
                      max_penetration=pen, succeeded=ok)


def wrap_disk(chain: JointChain, diameter: float,
              max_tension: float = 100.0) -> WrapResult:
    """Scripted wrap of a disk of the given diameter; tries the nested (in
    the eye of the coil) construction first, then the outer-wall one."""
    if diameter <= 0:
        raise ValueError(f"diameter must be > 0, got {diameter}")
    radius = diameter / 2.0
    segments, corners = _top_flats(chain)

    eye = packed_spiral_origin(chain, +1)
    q = _march(chain, corners, eye, radius)
    nested = _finish(chain, diameter, "nested", q, eye, max_tension, 0.0)
    if nested.succeeded:
        return nested

    m, budget = _wrap_budget(chain, radius)
    if budget < _BUDGET_FLOOR:
        return nested
    center = _cradle_center(chain, segments, radius) if m == chain.n_joints \
        else None
    if center is not None:
        regime, slack, m_start = "cradled", 0.0, chain.n_joints
    else:
        center, regime, slack, m_start = _anchor_center(segments, m, radius), \
            "anchored", _ANCHOR_SLACK, m
    q = _march(chain, corners, center, radius, m_start)
    return _finish(chain, diameter, regime, q, center, max_tension, slack)


def predict_min_graspable_diameter(chain: JointChain,
                                   max_tension: float = 100.0,
                                   resolution: float = 0.05) -> float:
    """Smallest disk diameter (mm) the scripted wrap can cover 180 degrees
    of, found by bisection; never below the packed-core cavity bound."""
    cavity = 2.0 * chain.design.params.a
    lo = cavity
    hi = None
    probe = 4.0 * cavity
    for _ in range(6):
        if wrap_disk(chain, probe, max_tension).succeeded:
            hi = probe
            break
        lo = probe
        probe *= 2.0
    if hi is None:
        raise RuntimeError(
            f"no wrappable diameter up to {probe:.1f} mm; arm too short?")
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if wrap_disk(chain, mid, max_tension).succeeded:
            hi = mid
        else:
            lo = mid
    return hi


def predict_max_load(chain: JointChain, object_diameter: float,
                     max_tension: float, friction_mu: float = 0.3) -> float:
    """Holding force (N) of the wrap at full tension against pull-out.

    Two limits are computed and the smaller one returned. Surface limit:
    tension is metered out over the covered arc the way a belt presses on a
    pulley (a contact owning an arc span dphi carries normal force
    max_tension * dphi); pull-out points through the middle of the largest
    contact gap (the mouth of the wrap); contacts whose surface overhangs
    that direction resist with their normal force projection, and every
    contact adds a Coulomb friction share. Transmission limit: the arm
    cannot push on the object harder than its most proximal joint can
    transmit, tension times that joint's cable moment arm over the object's
    lever about it. Deterministic, zero at zero tension.
    """
    wrap = wrap_disk(chain, object_diameter,
                     max_tension if max_tension > 0 else 100.0)
    if not wrap.succeeded:
        raise ValueError(
            f"diameter {object_diameter} mm is not wrappable "
            f"(arc {wrap.contact_arc_deg:.0f} deg)")
    if max_tension <= 0:
        return 0.0

    from .chain import cable_length_grads
    grads = cable_length_grads(chain, wrap.equilibrium.state.q)
    root = chain.n_joints - 1
    rho_root = abs(float(grads[0, root]))
    hinge = np.array([chain.station_x[chain.n_joints], 0.0])
    lever = float(np.linalg.norm(wrap.center - hinge))
    transmission = max_tension * rho_root / lever

    rel = [np.asarray(k.point, dtype=float) - wrap.center
           for k in wrap.equilibrium.contacts]
    angs = np.sort([math.atan2(p[1], p[0]) % (2.0 * math.pi) for p in rel])
    gaps = np.diff(np.append(angs, angs[0] + 2.0 * math.pi))
    mouth = int(np.argmax(gaps))
    pull = angs[mouth] + 0.5 * gaps[mouth]
    d_hat = np.array([math.cos(pull), math.sin(pull)])

    # open-chain arc allotment: half-gap to each neighbor, none across the mouth
    n = len(angs)
    share = np.zeros(n)
    for i in range(n):
        if i != mouth:
            share[(i + 1) % n] += 0.5 * gaps[i]
            share[i] += 0.5 * gaps[i]

    surface = 0.0
    for ang, dphi in zip(angs, share):
        r_hat = np.array([math.cos(ang), math.sin(ang)])
        t_hat = np.array([-r_hat[1], r_hat[0]])
        normal_force = max_tension * dphi
        surface += normal_force * (max(0.0, float(r_hat @ d_hat))
                                   + friction_mu * abs(float(t_hat @ d_hat)))
    return float(min(surface, transmission))


def saturation_tension(chain: JointChain, curl_fraction: float = 0.98) -> float:
    """Single-cable tension that curls the arm to `curl_fraction` of full limit.

    Designs differ enormously in stiffness (thin elastic layers on a slender
    arm saturate at a few newtons; a fat root needs a hundred), so any fixed
    tension range over- or under-drives one of them. This is the natural
    upper end for an actuation sweep: beyond it, extra tension barely moves
    the arm. Found by doubling then bisection on total curl.
    """
    if not 0.0 < curl_fraction < 1.0:
        raise ValueError(f"curl_fraction must be in (0, 1), got {curl_fraction}")
    full = chain.limit * chain.n_joints
    pull = [("tension", 0.0)] * chain.n_cables
    warm = None

    def curl(t: float) -> float:
        nonlocal warm
        loads = list(pull)
        loads[0] = ("tension", t)
        res = solve_equilibrium(chain, loads, None, SolverOptions(warm_start=warm))
        warm = res.state
        return float(np.sum(np.abs(res.state.q))) / full

    hi = 10.0
    while curl(hi) < curl_fraction:
        hi *= 2.0
        if hi > 1e7:
            raise RuntimeError("no tension saturates this chain")
    lo = 0.0
    for _ in range(32):
        mid = 0.5 * (lo + hi)
        if curl(mid) < curl_fraction:
            lo = mid
        else:
            hi = mid
    return hi


@dataclass(frozen=True)
class WorkspaceSample:
    """Tip positions reachable under sampled cable tensions."""

    tips: np.ndarray             # (n_kept, 2)
    n_dropped: int
    boundary: np.ndarray         # (n_boundary, 2) closed concave outline
    area: float                  # mm^2 enclosed by the outline
    spiral_center: np.ndarray
    spiral_a: float
    spiral_b: float
    fit_rms: float               # mm, radial misfit on the +y outer rim
    tension_range: tuple


def sample_workspace(chain: JointChain, n_samples: int, tension_range=None,
                     seed: int = 0) -> WorkspaceSample:
    """Sample equilibria under independent uniform cable tensions.

    Each sample solves from rest with its own tension draw; non-converged
    solves are dropped and counted. `tension_range=None` spans (0, the
    chain's saturation tension) so differently stiff designs are each swept
    over their whole curl range rather than a fixed newton window.

    With two antagonist cables the equilibrium tip traces a one-parameter
    curve: from the straight pose it sweeps through either lobe down to the
    packed coil as the net tension grows. The boundary is that curve,
    ordered by signed total curl and closed across the base, and the area is
    its signed enclosed area; winding makes the unreachable hole inside each
    coil eye drop out instead of being counted as workspace. The fitted
    logarithmic spiral tracks the +y outer rim.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    if tension_range is None:
        tension_range = (0.0, saturation_tension(chain))
    t_lo, t_hi = float(tension_range[0]), float(tension_range[1])
    if t_lo < 0 or t_hi < t_lo:
        raise ValueError(f"bad tension range ({t_lo}, {t_hi})")
    rng = np.random.default_rng(seed)
    draws = rng.uniform(t_lo, t_hi, size=(n_samples, chain.n_cables))

    from .chain import forward_shape
    tips = []
    curls = []
    dropped = 0
    for row in draws:
        res = solve_equilibrium(chain, [("tension", t) for t in row],
                                None, SolverOptions())
        if not res.converged:
            dropped += 1
            continue
        tips.append(forward_shape(chain, res.state).tip_position)
        curls.append(float(np.sum(res.state.q)))
    tips = np.asarray(tips, dtype=float).reshape(-1, 2)
    curls = np.asarray(curls, dtype=float)

    boundary = tips[np.argsort(curls)]
    area = _signed_area(boundary)
    outer = _outer_rim(tips)
    center, a_fit, b_fit, rms = _fit_log_spiral(outer[outer[:, 1] >= 0.0]
                                                if len(outer) else outer)
    return WorkspaceSample(tips=tips, n_dropped=dropped, boundary=boundary,
                           area=area, spiral_center=center, spiral_a=a_fit,
                           spiral_b=b_fit, fit_rms=rms,
                           tension_range=(t_lo, t_hi))


def _outer_rim(tips: np.ndarray) -> np.ndarray:
    """Outermost tip per angular bin about the base (the sweep envelope)."""
    if len(tips) == 0:
        return tips.reshape(0, 2)
    ang = np.arctan2(tips[:, 1], tips[:, 0])
    rad = np.hypot(tips[:, 0], tips[:, 1])
    n_bins = int(min(96, max(18, len(tips) // 25)))
    edges = np.linspace(ang.min() - 1e-9, ang.max() + 1e-9, n_bins + 1)
    rim = []
    for k in range(n_bins):
        idx = np.flatnonzero((ang >= edges[k]) & (ang < edges[k + 1]))
        if len(idx):
            rim.append(tips[idx[np.argmax(rad[idx])]])
    rim = np.asarray(rim)
    order = np.argsort(np.arctan2(rim[:, 1], rim[:, 0]))
    return rim[order]


def _signed_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _fit_log_spiral(points: np.ndarray):
    """Fit rho = A exp(B theta) about a free center to ordered rim points.

    The log-radius residual is linear in (ln A, B) but the center enters
    through an angle unwrap, which is full of shallow local minima; a few
    center starts spread over the reach keep the solver out of the
    degenerate far-center (near-circle) basin.
    """
    if len(points) < 4:
        return np.zeros(2), 0.0, 0.0, math.inf

    def unwrapped(c):
        d = points - c
        theta = np.unwrap(np.arctan2(d[:, 1], d[:, 0]))
        rho = np.hypot(d[:, 0], d[:, 1])
        return theta, rho

    def residuals(x):
        theta, rho = unwrapped(x[:2])
        return np.log(np.maximum(rho, 1e-9)) - (x[2] + x[3] * theta)

    reach = float(np.max(np.hypot(points[:, 0], points[:, 1])))
    starts = [np.zeros(2),
              np.array([0.65 * reach, 0.0]),
              np.array([0.4 * reach, 0.3 * reach]),
              np.array([0.4 * reach, -0.3 * reach]),
              points.mean(axis=0)]
    best = None
    for c0 in starts:
        theta0, rho0 = unwrapped(c0)
        rho0 = np.maximum(rho0, 1e-9)
        b0 = 0.0
        if abs(theta0[-1] - theta0[0]) > 1e-9:
            b0 = (math.log(rho0[-1]) - math.log(rho0[0])) / (theta0[-1] - theta0[0])
        x0 = np.array([c0[0], c0[1], math.log(float(np.mean(rho0))), b0])
        try:
            fit = least_squares(residuals, x0, method="lm", max_nfev=2000)
        except Exception:
            continue
        theta, rho = unwrapped(fit.x[:2])
        model = np.exp(fit.x[2] + fit.x[3] * theta)
        rms = float(np.sqrt(np.mean((rho - model) ** 2)))
        if best is None or rms < best[0]:
            best = (rms, fit.x)
    if best is None:
        return np.zeros(2), 0.0, 0.0, math.inf
    rms, x = best
    return x[:2].copy(), float(math.exp(x[2])), float(x[3]), rms
