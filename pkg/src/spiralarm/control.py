"""Grasp controller: motor model, phase machine, calibration, episodes.

The arm is driven by two cable motors. Control is quasi-static: each step
commands per-cable targets (length or tension), hands them to the
equilibrium solver, and reads back realized tensions as motor currents.
Contact is felt entirely through those currents, the way a stalled motor
announces itself: no tactile sensing, no vision.

The reach primitive is a belayed unroll. From the packed spiral the left
motor pays the arm out down a pre-recorded length schedule against the hinge
springs while the right motor takes up exactly the slack the unroll creates,
so the right cable rides at zero tension along its natural route. Anything
that blocks the unroll makes the right route run long, and the right current
jumps off its calibrated noise floor. That jump is the contact detector:
sensitive enough to feel a probe three orders softer than the hinges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .analysis import contact_arc_deg, saturation_tension
from .chain import JointChain, cable_lengths_fast, forward_shape
from .solver import EquilibriumResult, SceneObject, SolverOptions, solve_equilibrium

__all__ = [
    "MotorModel",
    "GraspPhase",
    "ControllerConfig",
    "ReachSchedule",
    "SensorReadings",
    "ControllerState",
    "EpisodeRow",
    "EpisodeOutcome",
    "GraspEpisode",
    "build_reach_schedule",
    "calibrate_contact_threshold",
    "step_controller",
    "run_grasp_episode",
    "run_probe_episode",
]


@dataclass(frozen=True)
class MotorModel:
    """One cable motor: speed mode tracks a target length, torque mode a tension.

    current_reading is the torque proxy: realized cable tension divided by the
    torque constant. In torque mode the realized tension is the commanded one,
    so the reading is exact; in speed mode it is whatever the equilibrium
    settles on.
    """

    mode: str = "speed"
    commanded_speed: float = 0.0      # mm/s cable feed, positive pays out
    commanded_tension: float = 0.0    # N, torque mode only
    torque_constant: float = 1.0      # N per unit current
    target_length: float | None = None

    def __post_init__(self):
        if self.mode not in ("speed", "torque"):
            raise ValueError(f"unknown motor mode {self.mode!r}")
        if self.torque_constant <= 0:
            raise ValueError("torque constant must be > 0")

    def advanced(self, dt: float) -> "MotorModel":
        """Integrate one control step of the commanded feed."""
        if self.mode != "speed":
            return self
        if self.target_length is None:
            raise ValueError("speed mode needs a target length to integrate from")
        return replace(self, target_length=self.target_length + self.commanded_speed * dt)

    def current_reading(self, realized_tension: float) -> float:
        return max(0.0, realized_tension) / self.torque_constant

    def actuation(self) -> tuple[str, float]:
        if self.mode == "torque":
            return ("tension", max(0.0, self.commanded_tension))
        return ("length", float(self.target_length))


class GraspPhase(str, Enum):
    PACKING = "Packing"
    REACHING = "Reaching"
    WRAPPING = "Wrapping"
    GRASPING = "Grasping"
    HOLDING = "Holding"
    ABORTED = "Aborted"


# legal forward progression; Aborted may follow any of them
PHASE_ORDER = (GraspPhase.PACKING, GraspPhase.REACHING, GraspPhase.WRAPPING,
               GraspPhase.GRASPING, GraspPhase.HOLDING)


@dataclass(frozen=True)
class ControllerConfig:
    """Tunables for the grasp program.

    grasp_current_threshold None defaults to three times the calibrated
    contact threshold, a deliberately firmer squeeze than the first touch.
    pack_tension None defaults to 5% above the design's saturation tension so
    the pack is snug against the joint limit stops.
    """

    reach_speed: float = 50.0         # mm/s nominal right-cable take-up
    # rundown slow enough that the climb (reach_speed * tension / rate)
    # covers a palm-sized object before the back-tension is gone
    wrap_ramp_rate: float = 10.0      # N/s left tension rundown while wrapping
    grasp_speed: float = 25.0         # mm/s right reel-in while tightening
    contact_margin: float = 0.10      # threshold = free-run max * (1 + margin)
    grasp_current_threshold: float | None = None
    step_dt: float = 0.01             # s per control step
    max_steps: int = 2500
    pack_tension: float | None = None
    hold_steps: int = 20              # logged settle steps after the grip locks

    def __post_init__(self):
        for name in ("reach_speed", "wrap_ramp_rate", "grasp_speed",
                     "contact_margin", "step_dt"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.max_steps <= 0 or self.hold_steps < 0:
            raise ValueError("step budgets must be positive")
        if self.grasp_current_threshold is not None and self.grasp_current_threshold <= 0:
            raise ValueError("grasp_current_threshold must be > 0")
        if self.pack_tension is not None and self.pack_tension <= 0:
            raise ValueError("pack_tension must be > 0")


@dataclass(frozen=True)
class ReachSchedule:
    """Pre-recorded belay for the reach: left targets and the right's free route.

    Recorded once per (chain, config) on an empty scene: the left cable is
    marched from its packed length to its straight length at the payout rate
    that makes the right route shorten at reach_speed, and the right cable's
    natural (slack) length is logged at every step. Commanding both columns
    back keeps the right cable exactly taut at zero tension in free space.
    """

    left_targets: np.ndarray
    right_route: np.ndarray
    pack_tension: float

    def __post_init__(self):
        if self.left_targets.shape != self.right_route.shape:
            raise ValueError("schedule columns must have equal length")
        if len(self.left_targets) < 2:
            raise ValueError("schedule needs at least two steps")

    def __len__(self) -> int:
        return len(self.left_targets)


@dataclass(frozen=True)
class Calibration:
    """A reach schedule plus the contact threshold calibrated on it."""

    schedule: ReachSchedule
    contact_threshold: float
    free_current_max: float


@dataclass(frozen=True)
class SensorReadings:
    """What the controller sees after one equilibrium step."""

    lengths: tuple[float, float]      # realized cable lengths, mm
    tensions: tuple[float, float]     # realized cable tensions, N
    currents: tuple[float, float]     # tensions through the torque constants


@dataclass(frozen=True)
class ControllerState:
    """Full controller memory between steps; replaced functionally."""

    phase: GraspPhase
    left: MotorModel
    right: MotorModel
    schedule: ReachSchedule
    contact_threshold: float
    grasp_threshold: float
    sweep_index: int = 0
    wrap_tension: float = 0.0
    detection_step: int | None = None


def _pack_actuation(schedule: ReachSchedule) -> list[tuple[str, float]]:
    # generous right slack: the pack is a left-cable affair
    return [("tension", schedule.pack_tension),
            ("length", float(schedule.right_route[0]) * 2.0)]


def resolve_pack_tension(chain: JointChain, config: ControllerConfig) -> float:
    if config.pack_tension is not None:
        return config.pack_tension
    return 1.05 * saturation_tension(chain)


def build_reach_schedule(chain: JointChain, config: ControllerConfig | None = None,
                         ) -> ReachSchedule:
    """Record the belayed unroll on an empty scene.

    Raises RuntimeError if any discovery solve fails to converge; the
    schedule is the calibration reference and has to be clean.
    """
    config = config or ControllerConfig()
    pack_t = resolve_pack_tension(chain, config)
    straight = cable_lengths_fast(chain, np.zeros(chain.n_joints))
    res = solve_equilibrium(chain, [("tension", pack_t), ("length", straight[1] * 2.0)])
    if not res.converged:
        raise RuntimeError("packing solve did not converge")
    packed = cable_lengths_fast(chain, res.state.q)
    # left payout rate that unrolls the right route at reach_speed
    span_l = straight[0] - packed[0]
    span_r = packed[1] - straight[1]
    v_left = config.reach_speed * span_l / span_r
    left_targets = [float(packed[0])]
    right_route = [float(packed[1])]
    target = packed[0]
    step = 0
    while target < straight[0]:
        target = min(float(straight[0]), target + v_left * config.step_dt)
        res = solve_equilibrium(
            chain, [("length", target), ("length", straight[1] * 2.0)],
            options=SolverOptions(warm_start=res.state))
        if not res.converged:
            raise RuntimeError(f"discovery solve failed at schedule step {step}")
        left_targets.append(float(target))
        right_route.append(float(res.cable_lengths[1]))
        step += 1
    return ReachSchedule(left_targets=np.asarray(left_targets),
                         right_route=np.asarray(right_route),
                         pack_tension=pack_t)


def calibrate_contact_threshold(chain: JointChain, config: ControllerConfig | None = None,
                                schedule: ReachSchedule | None = None) -> float:
    """Free-run the reach and place the contact trigger just above its noise.

    Returns max observed right-motor current times (1 + contact_margin).
    Raises RuntimeError on any non-converged sweep solve.
    """
    return _calibrate(chain, config or ControllerConfig(), schedule).contact_threshold


def _calibrate(chain: JointChain, config: ControllerConfig,
               schedule: ReachSchedule | None = None) -> Calibration:
    schedule = schedule or build_reach_schedule(chain, config)
    res = solve_equilibrium(chain, _pack_actuation(schedule))
    peak = 0.0
    for s in range(len(schedule)):
        res = solve_equilibrium(
            chain,
            [("length", float(schedule.left_targets[s])),
             ("length", float(schedule.right_route[s]))],
            options=SolverOptions(warm_start=res.state))
        if not res.converged:
            raise RuntimeError(f"calibration sweep failed to converge at step {s}")
        peak = max(peak, float(res.cable_tensions[1]))
    # an exactly silent sweep still needs a positive trigger
    threshold = peak * (1.0 + config.contact_margin) if peak > 0 else 1e-9
    return Calibration(schedule=schedule, contact_threshold=threshold,
                       free_current_max=peak)


def initial_controller_state(calibration: Calibration,
                             config: ControllerConfig) -> ControllerState:
    sched = calibration.schedule
    grasp_thr = (config.grasp_current_threshold
                 if config.grasp_current_threshold is not None
                 else 3.0 * calibration.contact_threshold)
    return ControllerState(
        phase=GraspPhase.PACKING,
        left=MotorModel(mode="torque", commanded_tension=sched.pack_tension),
        right=MotorModel(mode="speed", target_length=float(sched.right_route[0]) * 2.0),
        schedule=sched,
        contact_threshold=calibration.contact_threshold,
        grasp_threshold=grasp_thr,
    )


def step_controller(state: ControllerState, sensors: SensorReadings | None,
                    config: ControllerConfig,
                    ) -> tuple[list[tuple[str, float]], ControllerState]:
    """One pass of the grasp program: commands for this step plus the next state.

    sensors are the readings from the previous step's equilibrium (None only
    before the first solve, while packing). Phases only ever move forward;
    Aborted is terminal and is decided by the episode driver, not here.
    """
    sched = state.schedule
    dt = config.step_dt

    if state.phase is GraspPhase.PACKING:
        # pack is a single settled solve; hand over to the reach right away
        nxt = replace(
            state, phase=GraspPhase.REACHING, sweep_index=0,
            left=MotorModel(mode="speed", target_length=float(sched.left_targets[0])),
            right=MotorModel(mode="speed", target_length=float(sched.right_route[0])))
        return _pack_actuation(sched), nxt

    if state.phase is GraspPhase.REACHING:
        if sensors is not None and sensors.currents[1] >= state.contact_threshold:
            # contact: belay becomes a tension rundown while the right keeps
            # reeling, so the freed body climbs the obstacle surface instead
            # of springing past it
            wrap_from = sensors.tensions[0]
            nxt = replace(
                state, phase=GraspPhase.WRAPPING, wrap_tension=wrap_from,
                left=MotorModel(mode="torque", commanded_tension=wrap_from),
                right=replace(state.right, commanded_speed=-config.reach_speed))
            return [state.left.actuation(), state.right.actuation()], nxt
        s = min(state.sweep_index + 1, len(sched) - 1)
        left = replace(state.left, target_length=float(sched.left_targets[s]))
        right = replace(state.right, target_length=float(sched.right_route[s]))
        nxt = replace(state, sweep_index=s, left=left, right=right)
        return [left.actuation(), right.actuation()], nxt

    if state.phase is GraspPhase.WRAPPING:
        tension = state.wrap_tension - config.wrap_ramp_rate * dt
        if tension <= 0.0:
            right = replace(state.right, mode="speed",
                            commanded_speed=-config.grasp_speed)
            nxt = replace(state, phase=GraspPhase.GRASPING, wrap_tension=0.0,
                          left=MotorModel(mode="torque", commanded_tension=0.0),
                          right=right.advanced(dt))
            return [nxt.left.actuation(), nxt.right.actuation()], nxt
        left = replace(state.left, commanded_tension=tension)
        # feed only while the right motor is under the squeeze limit; a
        # stalled climb pauses until the rundown frees more body
        right = state.right
        if sensors is not None and sensors.currents[1] < state.grasp_threshold:
            right = right.advanced(dt)
        nxt = replace(state, wrap_tension=tension, left=left, right=right)
        return [left.actuation(), right.actuation()], nxt

    if state.phase is GraspPhase.GRASPING:
        if sensors is not None and sensors.currents[1] >= state.grasp_threshold:
            # lock both cables where they are: the grip is the geometry now
            left = MotorModel(mode="speed", target_length=sensors.lengths[0])
            right = replace(state.right, commanded_speed=0.0)
            nxt = replace(state, phase=GraspPhase.HOLDING, left=left, right=right)
            return [left.actuation(), right.actuation()], nxt
        right = state.right.advanced(dt)
        nxt = replace(state, right=right)
        return [state.left.actuation(), right.actuation()], nxt

    # Holding: constant lengths, nothing left to decide
    return [state.left.actuation(), state.right.actuation()], state


@dataclass(frozen=True)
class EpisodeRow:
    """One logged control step."""

    t: float
    phase: GraspPhase
    target_lengths: tuple[float, float]   # commanded; realized stands in under torque mode
    lengths: tuple[float, float]
    tensions: tuple[float, float]
    currents: tuple[float, float]
    tip_pose: tuple[float, float, float]  # x, y, heading angle (rad)
    contact_arc: float                    # deg, about the scene's first object


@dataclass(frozen=True)
class EpisodeOutcome:
    success: bool
    reason: str | None = None
    detection_time: float | None = None
    deflection_force: float | None = None


@dataclass(frozen=True)
class GraspEpisode:
    """Deterministic log of one scripted episode."""

    rows: tuple[EpisodeRow, ...]
    outcome: EpisodeOutcome
    contact_threshold: float
    config: ControllerConfig
    seed: int

    @property
    def phases(self) -> list[GraspPhase]:
        return [r.phase for r in self.rows]


# consecutive failed solves before an episode gives up; isolated stalls at
# stiff contact onsets recover on the next warm step and are tolerated
_MAX_SOLVER_FAILS = 5


def _arc_center(obj: SceneObject) -> np.ndarray:
    if obj.kind == "polygon":
        return obj.vertices.mean(axis=0)
    return obj.center


def _row_from(res: EquilibriumResult, t: float, phase: GraspPhase,
              state: ControllerState, actuation: Sequence[tuple[str, float]],
              chain: JointChain, arc_about: np.ndarray | None) -> EpisodeRow:
    shape = forward_shape(chain, res.state)
    lengths = (float(res.cable_lengths[0]), float(res.cable_lengths[1]))
    tensions = (float(res.cable_tensions[0]), float(res.cable_tensions[1]))
    currents = (state.left.current_reading(tensions[0]),
                state.right.current_reading(tensions[1]))
    targets = tuple(
        float(value) if kind == "length" else lengths[i]
        for i, (kind, value) in enumerate(actuation))
    arc = 0.0
    if arc_about is not None:
        arc = contact_arc_deg([c for c in res.contacts if c.object_index == 0],
                              arc_about)
    return EpisodeRow(t=t, phase=phase, target_lengths=targets, lengths=lengths,
                      tensions=tensions, currents=currents,
                      tip_pose=(float(shape.tip_position[0]),
                                float(shape.tip_position[1]),
                                float(shape.tip_angle)),
                      contact_arc=arc)


def run_grasp_episode(chain: JointChain, scene: Sequence[SceneObject],
                      config: ControllerConfig | None = None, seed: int = 0,
                      calibration: Calibration | None = None,
                      on_row: Callable[[EpisodeRow], None] | None = None,
                      ) -> GraspEpisode:
    """Run the full grasp program against a scene.

    The first scene object is the grasp target; success means the episode
    reaches Holding with contacts covering at least half the target's
    circumference. The scene may be empty, in which case the reach sweeps
    out and the episode aborts with no contact. Everything downstream of
    (chain, scene, config, seed) is deterministic.
    """
    config = config or ControllerConfig()
    cal = calibration or _calibrate(chain, config)
    state = initial_controller_state(cal, config)
    arc_about = _arc_center(scene[0]) if scene else None
    scene = list(scene)

    rows: list[EpisodeRow] = []
    sensors: SensorReadings | None = None
    result: EquilibriumResult | None = None
    fails = 0
    held = 0
    outcome: EpisodeOutcome | None = None

    for step in range(config.max_steps):
        actuation, state = step_controller(state, sensors, config)
        result = solve_equilibrium(
            chain, actuation, scene,
            options=SolverOptions(warm_start=result.state if result else None))
        fails = fails + 1 if not result.converged else 0
        row = _row_from(result, step * config.step_dt, state.phase, state,
                        actuation, chain, arc_about)
        rows.append(row)
        if on_row:
            on_row(row)
        sensors = SensorReadings(lengths=row.lengths, tensions=row.tensions,
                                 currents=row.currents)
        if fails >= _MAX_SOLVER_FAILS:
            outcome = EpisodeOutcome(False, "solver failure")
            break
        if state.phase is GraspPhase.REACHING and state.sweep_index >= len(cal.schedule) - 1:
            outcome = EpisodeOutcome(False, "no contact")
            break
        if state.phase is GraspPhase.HOLDING:
            held += 1
            if held > config.hold_steps:
                ok = row.contact_arc >= 180.0
                outcome = EpisodeOutcome(ok, None if ok else "wrap arc below half turn")
                break
    if outcome is None:
        outcome = EpisodeOutcome(False, "timeout")

    if not outcome.success and rows and rows[-1].phase is not GraspPhase.ABORTED:
        rows.append(replace(rows[-1], phase=GraspPhase.ABORTED))
    return GraspEpisode(rows=tuple(rows), outcome=outcome,
                        contact_threshold=cal.contact_threshold,
                        config=config, seed=seed)


def run_probe_episode(chain: JointChain, scene: Sequence[SceneObject],
                      config: ControllerConfig | None = None, seed: int = 0,
                      calibration: Calibration | None = None,
                      on_row: Callable[[EpisodeRow], None] | None = None,
                      ) -> GraspEpisode:
    """Reach until the current trigger fires, then retract to the pack.

    The touch-probe program: detection succeeds the episode and reports the
    detection time and the force the probe was deflected with at that
    instant. The retraction is the abort maneuver, so its rows log under
    Aborted. No detection across the whole sweep aborts with no detection.
    """
    config = config or ControllerConfig()
    cal = calibration or _calibrate(chain, config)
    state = initial_controller_state(cal, config)
    scene = list(scene)
    arc_about = _arc_center(scene[0]) if scene else None

    rows: list[EpisodeRow] = []
    sensors: SensorReadings | None = None
    result: EquilibriumResult | None = None
    fails = 0
    outcome: EpisodeOutcome | None = None

    for step in range(config.max_steps):
        actuation, state = step_controller(state, sensors, config)
        if state.phase is GraspPhase.WRAPPING:
            # the trigger fired: record and switch to the retract program
            deflection = sum(c.force for c in result.contacts
                             if scene[c.object_index].kind == "probe")
            outcome = EpisodeOutcome(True, None,
                                     detection_time=(step - 1) * config.step_dt,
                                     deflection_force=float(deflection))
            break
        result = solve_equilibrium(
            chain, actuation, scene,
            options=SolverOptions(warm_start=result.state if result else None))
        fails = fails + 1 if not result.converged else 0
        row = _row_from(result, step * config.step_dt, state.phase, state,
                        actuation, chain, arc_about)
        rows.append(row)
        if on_row:
            on_row(row)
        sensors = SensorReadings(lengths=row.lengths, tensions=row.tensions,
                                 currents=row.currents)
        if fails >= _MAX_SOLVER_FAILS:
            outcome = EpisodeOutcome(False, "solver failure")
            break
        if state.phase is GraspPhase.REACHING and state.sweep_index >= len(cal.schedule) - 1:
            outcome = EpisodeOutcome(False, "no detection")
            break
    if outcome is None:
        outcome = EpisodeOutcome(False, "timeout")

    if outcome.success:
        # retrace the belay back to the pack, logged as the abort leg
        t0 = len(rows) * config.step_dt
        sched = cal.schedule
        for k, s in enumerate(range(state.sweep_index, -1, -1)):
            actuation = [("length", float(sched.left_targets[s])),
                         ("length", float(sched.right_route[s]))]
            result = solve_equilibrium(
                chain, actuation, scene,
                options=SolverOptions(warm_start=result.state))
            row = _row_from(result, t0 + k * config.step_dt, GraspPhase.ABORTED,
                            state, actuation, chain, arc_about)
            rows.append(row)
            if on_row:
                on_row(row)
    elif rows and rows[-1].phase is not GraspPhase.ABORTED:
        rows.append(replace(rows[-1], phase=GraspPhase.ABORTED))

    return GraspEpisode(rows=tuple(rows), outcome=outcome,
                        contact_threshold=cal.contact_threshold,
                        config=config, seed=seed)
