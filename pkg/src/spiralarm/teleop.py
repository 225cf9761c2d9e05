"""Web socket service: drive the simulated arm live, or launch episodes.

One simulation loop owns the chain state and steps it in a worker thread so
the event loop stays responsive. Clients send cable commands (last write per
cable wins) or program commands (start_grasp / start_probe / abort / reset);
the server broadcasts frames at a fixed rate. Slow consumers never stall the
loop: each connection has a one-slot frame queue and stale frames are
dropped. seq increases strictly for the lifetime of the server, across
resets included.
"""

from __future__ import annotations

import asyncio
import json
import threading
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .chain import JointChain, cable_lengths_fast, forward_shape
from .control import (
    Calibration,
    ControllerConfig,
    ControllerState,
    GraspPhase,
    _calibrate,
    initial_controller_state,
    resolve_pack_tension,
    step_controller,
)
from .solver import SceneObject, SolverOptions, solve_equilibrium

__all__ = ["serve", "TeleopSession"]

_RATE_BOUNDS = (1.0, 120.0)


class TeleopSession:
    """Simulation state behind the socket server; safe for one worker thread.

    Manual mode translates set_target/set_tension into per-cable actuation;
    the program modes hand actuation to the grasp controller. All methods
    that touch state take the internal lock, so the asyncio side may call
    them from any thread.
    """

    def __init__(self, chain: JointChain, scene: list[SceneObject],
                 config: ControllerConfig | None = None):
        self.chain = chain
        self.scene = list(scene)
        self.config = config or ControllerConfig()
        self.lock = threading.Lock()
        self.phase = GraspPhase.PACKING
        self.mode = "manual"
        self.t = 0.0
        self.calibration: Calibration | None = None
        self.ctrl: ControllerState | None = None
        self.retract_index: int | None = None
        self._result = None
        self._sensors = None
        pack = resolve_pack_tension(chain, self.config)
        self.commands: list[tuple[str, float]] = [("tension", pack), ("tension", 0.0)]
        self._pack_commands = list(self.commands)

    # -------------------------------------------------- client commands

    def set_cable(self, cable: int, kind: str, value: float) -> None:
        with self.lock:
            self.mode = "manual"
            self.ctrl = None
            self.commands[cable] = (kind, float(value))

    def start_grasp(self) -> None:
        self._start_program("auto_grasp")

    def start_probe(self) -> None:
        self._start_program("auto_probe")

    def _start_program(self, mode: str) -> None:
        cal = self._ensure_calibration()
        with self.lock:
            self.mode = mode
            self.retract_index = None
            self.ctrl = initial_controller_state(cal, self.config)
            self.phase = self.ctrl.phase

    def abort(self) -> None:
        with self.lock:
            self.mode = "manual"
            self.ctrl = None
            self.phase = GraspPhase.ABORTED
            if self._result is not None:
                lengths = self._result.cable_lengths
                self.commands = [("length", float(lengths[0])),
                                 ("length", float(lengths[1]))]

    def reset(self) -> None:
        with self.lock:
            self.mode = "manual"
            self.ctrl = None
            self.retract_index = None
            self.phase = GraspPhase.PACKING
            self.t = 0.0
            self.commands = list(self._pack_commands)
            self._result = None
            self._sensors = None

    # ------------------------------------------------- simulation side

    def _ensure_calibration(self) -> Calibration:
        with self.lock:
            cal = self.calibration
        if cal is None:
            cal = _calibrate(self.chain, self.config)
            with self.lock:
                self.calibration = cal
        return cal

    def tick(self) -> None:
        """One control step: pick actuation, solve, update the frame source."""
        from .control import SensorReadings

        with self.lock:
            mode, ctrl = self.mode, self.ctrl
            warm = None if self._result is None else self._result.state
            sensors = self._sensors
        if mode == "manual":
            actuation = list(self.commands)
        else:
            actuation, ctrl = step_controller(ctrl, sensors, self.config)
            actuation = self._program_overlay(ctrl, actuation)
        res = solve_equilibrium(self.chain, actuation, self.scene,
                                SolverOptions(warm_start=warm))
        lengths = (float(res.cable_lengths[0]), float(res.cable_lengths[1]))
        tensions = (float(res.cable_tensions[0]), float(res.cable_tensions[1]))
        with self.lock:
            self._result = res
            self._sensors = SensorReadings(
                lengths=lengths, tensions=tensions,
                currents=(max(0.0, tensions[0]), max(0.0, tensions[1])))
            self.t += self.config.step_dt
            # a command may have flipped the mode mid-solve; only a still-
            # running program takes the stepped controller state back
            if self.mode == mode and mode != "manual" and self.ctrl is not None:
                self.ctrl = ctrl
                self.phase = GraspPhase.ABORTED if self.retract_index is not None \
                    else ctrl.phase

    def _program_overlay(self, ctrl: ControllerState,
                         actuation: list[tuple[str, float]]) -> list:
        """Probe sessions retract once contact fires instead of wrapping."""
        if self.mode != "auto_probe":
            return actuation
        sched = ctrl.schedule
        if self.retract_index is None:
            if ctrl.phase is GraspPhase.WRAPPING:  # detection registered
                self.retract_index = ctrl.sweep_index
            else:
                return actuation
        s = max(0, self.retract_index)
        self.retract_index = s - 1 if s > 0 else -1
        if self.retract_index < 0:
            self.mode = "manual"
            self.ctrl = None
            self.commands = list(self._pack_commands)
            return list(self._pack_commands)
        return [("length", float(sched.left_targets[s])),
                ("length", float(sched.right_route[s]))]

    def frame_payload(self) -> dict[str, Any]:
        with self.lock:
            res = self._result
            phase = self.phase
            t = self.t
        if res is None:
            # no solve yet: report the rest pose rather than blocking
            from .chain import RobotState

            q = np.zeros(self.chain.n_joints)
            lengths = cable_lengths_fast(self.chain, q)
            shape = forward_shape(self.chain, RobotState(q=q))
            return {
                "type": "frame", "t": t, "phase": phase.value,
                "joints": [0.0] * self.chain.n_joints,
                "tip": {"x": float(shape.tip_position[0]),
                        "y": float(shape.tip_position[1]),
                        "angle": float(shape.tip_angle)},
                "cables": [
                    {"length_mm": float(lengths[0]), "tension_n": 0.0, "current": 0.0},
                    {"length_mm": float(lengths[1]), "tension_n": 0.0, "current": 0.0},
                ],
                "contacts": [],
            }
        shape = forward_shape(self.chain, res.state)
        cables = []
        for i in range(2):
            tension = float(res.cable_tensions[i])
            cables.append({"length_mm": float(res.cable_lengths[i]),
                           "tension_n": tension,
                           "current": max(0.0, tension)})
        contacts = [{"unit": int(c.unit), "x": float(c.point[0]),
                     "y": float(c.point[1]), "fn": float(c.force)}
                    for c in res.contacts]
        return {
            "type": "frame", "t": t, "phase": phase.value,
            "joints": [float(v) for v in res.state.q],
            "tip": {"x": float(shape.tip_position[0]),
                    "y": float(shape.tip_position[1]),
                    "angle": float(shape.tip_angle)},
            "cables": cables,
            "contacts": contacts,
        }


def _scene_message(scene: list[SceneObject]) -> dict:
    from .storage import SceneContent, scene_to_document

    doc = scene_to_document(SceneContent(objects=tuple(scene)))
    doc.pop("provenance", None)
    return {"type": "scene", "objects": doc["objects"]}


def _design_message(chain: JointChain) -> dict:
    return {"type": "design",
            "n_joints": int(chain.n_joints),
            "n_cables": int(chain.n_cables),
            "limit_rad": float(chain.limit)}


async def _handle_command(session: TeleopSession, raw: str,
                          loop: asyncio.AbstractEventLoop,
                          rate_box: dict) -> Optional[dict]:
    """Dispatch one client message; returns an error payload or None."""
    try:
        msg = json.loads(raw)
        mtype = msg.get("type")
    except (json.JSONDecodeError, AttributeError):
        return {"type": "error", "message": "malformed message"}
    if not isinstance(msg, dict) or not isinstance(mtype, str):
        return {"type": "error", "message": "malformed message"}
    try:
        if mtype == "set_target":
            cable = int(msg["cable"])
            if cable not in (0, 1):
                raise KeyError("cable")
            session.set_cable(cable, "length", float(msg["length_mm"]))
        elif mtype == "set_tension":
            cable = int(msg["cable"])
            if cable not in (0, 1):
                raise KeyError("cable")
            session.set_cable(cable, "tension", float(msg["newtons"]))
        elif mtype == "start_grasp":
            await loop.run_in_executor(None, session.start_grasp)
        elif mtype == "start_probe":
            await loop.run_in_executor(None, session.start_probe)
        elif mtype == "abort":
            session.abort()
        elif mtype == "reset":
            session.reset()
        elif mtype == "set_rate":
            hz = float(msg["hz"])
            if not (_RATE_BOUNDS[0] <= hz <= _RATE_BOUNDS[1]):
                return {"type": "error",
                        "message": f"rate must be within {_RATE_BOUNDS}"}
            rate_box["hz"] = hz
        else:
            return {"type": "error", "message": f"unknown message type {mtype!r}"}
    except (KeyError, TypeError, ValueError) as err:
        return {"type": "error", "message": f"bad {mtype} message: {err}"}
    return None


@dataclass
class _Hub:
    """Fan-out point: one-slot queue per client, stale frames dropped."""

    queues: set = field(default_factory=set)

    def attach(self) -> asyncio.Queue:
        q: asyncio.Queue = asyncio.Queue(maxsize=1)
        self.queues.add(q)
        return q

    def detach(self, q: asyncio.Queue) -> None:
        self.queues.discard(q)

    def publish(self, payload: dict) -> None:
        for q in self.queues:
            if q.full():
                try:
                    q.get_nowait()
                except asyncio.QueueEmpty:
                    pass
            q.put_nowait(payload)


async def serve_async(chain: JointChain, scene: list[SceneObject],
                      host: str = "127.0.0.1", port: int = 8765,
                      rate_hz: float = 30.0,
                      config: ControllerConfig | None = None,
                      ready: asyncio.Event | None = None,
                      bound: dict | None = None) -> None:
    """Run the teleop server until cancelled."""
    from websockets.asyncio.server import serve as ws_serve

    session = TeleopSession(chain, scene, config)
    hub = _Hub()
    rate_box = {"hz": float(rate_hz)}
    loop = asyncio.get_running_loop()
    seq = 0

    async def sim_loop():
        while True:
            await loop.run_in_executor(None, session.tick)
            await asyncio.sleep(0)  # yield; solve time dominates the budget

    async def frame_loop():
        nonlocal seq
        while True:
            await asyncio.sleep(1.0 / rate_box["hz"])
            payload = session.frame_payload()
            seq += 1
            payload["seq"] = seq
            hub.publish(payload)

    async def handler(connection):
        q = hub.attach()
        try:
            await connection.send(json.dumps(_design_message(chain)))
            await connection.send(json.dumps(_scene_message(session.scene)))

            async def writer():
                while True:
                    payload = await q.get()
                    await connection.send(json.dumps(payload))

            wtask = asyncio.create_task(writer())
            try:
                async for raw in connection:
                    err = await _handle_command(session, raw, loop, rate_box)
                    if err is not None:
                        await connection.send(json.dumps(err))
            finally:
                wtask.cancel()
        finally:
            hub.detach(q)

    async with ws_serve(handler, host, port) as server:
        if bound is not None:
            bound["port"] = server.sockets[0].getsockname()[1]
        if ready is not None:
            ready.set()
        tasks = (asyncio.create_task(sim_loop()),
                 asyncio.create_task(frame_loop()))
        try:
            await asyncio.gather(*tasks)
        finally:
            for t in tasks:
                t.cancel()


def serve(chain: JointChain, scene: list[SceneObject], host: str = "127.0.0.1",
          port: int = 8765, rate_hz: float = 30.0,
          config: ControllerConfig | None = None) -> None:
    """Blocking entry point used by the command line."""
    asyncio.run(serve_async(chain, scene, host=host, port=port,
                            rate_hz=rate_hz, config=config))
