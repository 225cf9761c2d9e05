"""Persistence: design and scene documents, episode logs, content hashes.

Documents are JSON with stable key order. Every float is written with
Python's shortest round-trip repr, so parse(serialize(x)) returns bit-equal
values and the determinism guarantees downstream (replay, byte-identical
exports) hold. Episode logs are a one-line JSON header followed by one
comma-delimited row per control step, which keeps multi-thousand-step logs
diffable and cheap to stream.

Content hashes (design_hash, scene_hash) are SHA-256 over the canonical
document body excluding provenance, so re-saving the same value at a
different time keeps its identity.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import os
import time
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from . import __version__
from .chain import MaterialConfig
from .control import (ControllerConfig, EpisodeOutcome, EpisodeRow, GraspEpisode,
                      GraspPhase)
from .geometry import DesignSpec, RobotDesign, SpiralParams, UnitGeometry
from .solver import SceneObject

__all__ = [
    "StorageError",
    "FORMAT_VERSION",
    "design_to_document",
    "design_from_document",
    "save_design",
    "load_design",
    "design_hash",
    "scene_to_document",
    "scene_from_document",
    "save_scene",
    "load_scene",
    "scene_hash",
    "save_episode",
    "load_episode",
    "SceneContent",
    "EpisodeLoad",
]

FORMAT_VERSION = "1.0"
_MAJOR = FORMAT_VERSION.split(".")[0]


class StorageError(ValueError):
    """Schema or parse failure; the message carries the offending field path."""


def _provenance() -> dict:
    # SOURCE_DATE_EPOCH pins the timestamp for reproducible builds
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch else int(time.time())
    return {"tool": f"spiralarm {__version__}",
            "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))}


def _check_header(doc: Any, kind: str, where: str) -> None:
    if not isinstance(doc, dict):
        raise StorageError(f"{where}: document must be an object")
    if "format_version" not in doc:
        raise StorageError(f"{where}: missing field 'format_version'")
    version = str(doc["format_version"])
    if version.split(".")[0] != _MAJOR:
        raise StorageError(
            f"{where}: format_version {version} not readable by a {FORMAT_VERSION} parser")
    if doc.get("kind") != kind:
        raise StorageError(f"{where}: kind: expected {kind!r}, got {doc.get('kind')!r}")


def _need(doc: dict, key: str, where: str) -> Any:
    if key not in doc:
        raise StorageError(f"{where}: missing field '{key}'")
    return doc[key]


def _floats(value: Any, where: str) -> list:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise StorageError(f"{where}: expected numbers") from None
    return arr


def _canonical(doc: dict) -> bytes:
    body = {k: v for k, v in doc.items() if k != "provenance"}
    return json.dumps(body, sort_keys=True, separators=(",", ":")).encode()


def _dump(doc: dict) -> str:
    return json.dumps(doc, indent=1, sort_keys=False)


# ---------------------------------------------------------------- designs

def design_to_document(design: RobotDesign,
                       material: MaterialConfig | None = None) -> dict:
    p, s = design.params, design.spec
    units = [{
        "index": u.index,
        "scale": u.scale,
        "width": u.width,
        "quad_left": u.quad_left.tolist(),
        "quad_right": u.quad_right.tolist(),
        "hinge_point": u.hinge_point.tolist(),
        "cable_holes": u.cable_holes.tolist(),
    } for u in design.units]
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "design",
        "spec": {
            "robot_length": s.robot_length,
            "tip_width": s.tip_width,
            "taper_angle": s.taper_angle,
            "delta_theta": s.delta_theta,
            "cable_count": s.cable_count,
            "layer_fraction": s.layer_fraction,
            "cable_diameter": s.cable_diameter,
        },
        "spiral": {
            "a": p.a, "b": p.b, "theta0": p.theta0,
            "delta_theta": p.delta_theta,
            "theta0_presnap": p.theta0_presnap,
        },
        "units": units,
        "layer_thickness_per_joint": design.layer_thickness_per_joint.tolist(),
        "gap_per_joint": design.gap_per_joint.tolist(),
        "cable_count": design.cable_count,
        "material": None if material is None else {
            "elastic_modulus": material.elastic_modulus,
            "depth": material.depth,
        },
        "provenance": _provenance(),
    }
    return doc


def design_from_document(doc: Any) -> tuple[RobotDesign, MaterialConfig | None]:
    _check_header(doc, "design", "design")
    sd = _need(doc, "spec", "design")
    try:
        spec = DesignSpec(
            robot_length=float(_need(sd, "robot_length", "design.spec")),
            tip_width=float(_need(sd, "tip_width", "design.spec")),
            taper_angle=float(_need(sd, "taper_angle", "design.spec")),
            delta_theta=float(_need(sd, "delta_theta", "design.spec")),
            cable_count=int(_need(sd, "cable_count", "design.spec")),
            layer_fraction=float(_need(sd, "layer_fraction", "design.spec")),
            cable_diameter=float(_need(sd, "cable_diameter", "design.spec")),
        )
        pd = _need(doc, "spiral", "design")
        params = SpiralParams(
            a=float(_need(pd, "a", "design.spiral")),
            b=float(_need(pd, "b", "design.spiral")),
            theta0=float(_need(pd, "theta0", "design.spiral")),
            delta_theta=float(_need(pd, "delta_theta", "design.spiral")),
            theta0_presnap=float(_need(pd, "theta0_presnap", "design.spiral")),
        )
    except ValueError as err:
        if isinstance(err, StorageError):
            raise
        raise StorageError(f"design.spec: {err}") from None
    units = []
    for i, ud in enumerate(_need(doc, "units", "design")):
        where = f"design.units[{i}]"
        units.append(UnitGeometry(
            index=int(_need(ud, "index", where)),
            quad_left=_floats(_need(ud, "quad_left", where), where + ".quad_left"),
            quad_right=_floats(_need(ud, "quad_right", where), where + ".quad_right"),
            hinge_point=_floats(_need(ud, "hinge_point", where), where + ".hinge_point"),
            cable_holes=_floats(_need(ud, "cable_holes", where), where + ".cable_holes"),
            width=float(_need(ud, "width", where)),
            scale=float(_need(ud, "scale", where)),
        ))
    design = RobotDesign(
        params=params, spec=spec, units=tuple(units),
        layer_thickness_per_joint=_floats(
            _need(doc, "layer_thickness_per_joint", "design"),
            "design.layer_thickness_per_joint"),
        gap_per_joint=_floats(_need(doc, "gap_per_joint", "design"),
                              "design.gap_per_joint"),
        cable_count=int(_need(doc, "cable_count", "design")),
    )
    md = doc.get("material")
    material = None if md is None else MaterialConfig(
        elastic_modulus=float(_need(md, "elastic_modulus", "design.material")),
        depth=None if md.get("depth") is None else float(md["depth"]),
    )
    return design, material


def _parse_json(text: str, where: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as err:
        raise StorageError(f"{where}: unparseable document ({err.msg} at "
                           f"line {err.lineno})") from None


def save_design(path, design: RobotDesign,
                material: MaterialConfig | None = None) -> None:
    doc = design_to_document(design, material)
    with open(path, "w") as fh:
        fh.write(_dump(doc))


def load_design(path) -> tuple[RobotDesign, MaterialConfig | None]:
    with open(path) as fh:
        doc = _parse_json(fh.read(), str(path))
    return design_from_document(doc)


def design_hash(design: RobotDesign, material: MaterialConfig | None = None) -> str:
    return hashlib.sha256(_canonical(design_to_document(design, material))).hexdigest()


# ----------------------------------------------------------------- scenes

@dataclass(frozen=True)
class SceneContent:
    """A scene document's payload: obstacle list plus context flags."""

    objects: tuple[SceneObject, ...]
    gravity: bool = False
    workspace_bounds: tuple[float, float, float, float] | None = None


def scene_to_document(scene: SceneContent | Sequence[SceneObject]) -> dict:
    if not isinstance(scene, SceneContent):
        scene = SceneContent(objects=tuple(scene))
    objects = []
    for obj in scene.objects:
        od: dict[str, Any] = {"kind": obj.kind, "friction_mu": obj.friction_mu}
        if obj.kind == "polygon":
            od["vertices"] = obj.vertices.tolist()
        else:
            od["center"] = obj.center.tolist()
            od["radius"] = obj.radius
            if obj.kind == "probe":
                od["stiffness"] = obj.stiffness
        objects.append(od)
    return {
        "format_version": FORMAT_VERSION,
        "kind": "scene",
        "objects": objects,
        "gravity": scene.gravity,
        "workspace_bounds": None if scene.workspace_bounds is None
        else list(scene.workspace_bounds),
        "provenance": _provenance(),
    }


def scene_from_document(doc: Any) -> SceneContent:
    _check_header(doc, "scene", "scene")
    objects = []
    for i, od in enumerate(_need(doc, "objects", "scene")):
        where = f"scene.objects[{i}]"
        kind = _need(od, "kind", where)
        try:
            if kind == "disk":
                obj = SceneObject.disk(_need(od, "center", where),
                                       float(_need(od, "radius", where)),
                                       friction_mu=float(od.get("friction_mu", 0.0)))
            elif kind == "probe":
                obj = SceneObject.probe(_need(od, "center", where),
                                        float(_need(od, "radius", where)),
                                        float(_need(od, "stiffness", where)),
                                        friction_mu=float(od.get("friction_mu", 0.0)))
            elif kind == "polygon":
                obj = SceneObject.polygon(_need(od, "vertices", where),
                                          friction_mu=float(od.get("friction_mu", 0.0)))
            else:
                raise StorageError(f"{where}.kind: unknown object type {kind!r}")
        except ValueError as err:
            if isinstance(err, StorageError):
                raise
            raise StorageError(f"{where}: {err}") from None
        objects.append(obj)
    bounds = doc.get("workspace_bounds")
    if bounds is not None:
        vals = _floats(bounds, "scene.workspace_bounds")
        if vals.shape != (4,):
            raise StorageError("scene.workspace_bounds: expected 4 numbers")
        bounds = tuple(float(v) for v in vals)
    return SceneContent(objects=tuple(objects), gravity=bool(doc.get("gravity", False)),
                        workspace_bounds=bounds)


def save_scene(path, scene: SceneContent | Sequence[SceneObject]) -> None:
    with open(path, "w") as fh:
        fh.write(_dump(scene_to_document(scene)))


def load_scene(path) -> SceneContent:
    with open(path) as fh:
        doc = _parse_json(fh.read(), str(path))
    return scene_from_document(doc)


def scene_hash(scene: SceneContent | Sequence[SceneObject]) -> str:
    return hashlib.sha256(_canonical(scene_to_document(scene))).hexdigest()


# --------------------------------------------------------------- episodes

_ROW_COLUMNS = ("t", "phase", "target_length_l", "target_length_r",
                "length_l", "length_r", "tension_l", "tension_r",
                "current_l", "current_r", "tip_x", "tip_y", "tip_angle",
                "contact_arc")


@dataclass(frozen=True)
class EpisodeLoad:
    """A parsed episode log: the header fields plus the replayed-row tuple."""

    episode: GraspEpisode
    design_hash: str
    scene_hash: str


def _row_line(row: EpisodeRow) -> str:
    vals = [repr(row.t), row.phase.value,
            repr(row.target_lengths[0]), repr(row.target_lengths[1]),
            repr(row.lengths[0]), repr(row.lengths[1]),
            repr(row.tensions[0]), repr(row.tensions[1]),
            repr(row.currents[0]), repr(row.currents[1]),
            repr(row.tip_pose[0]), repr(row.tip_pose[1]), repr(row.tip_pose[2]),
            repr(row.contact_arc)]
    return ",".join(vals)


def save_episode(path, episode: GraspEpisode, design_hash: str,
                 scene_hash: str) -> None:
    """Write header line plus one delimited row per control step."""
    header = {
        "format_version": FORMAT_VERSION,
        "kind": "episode",
        "design_hash": design_hash,
        "scene_hash": scene_hash,
        "config": dataclasses.asdict(episode.config),
        "seed": episode.seed,
        "contact_threshold": episode.contact_threshold,
        "outcome": dataclasses.asdict(episode.outcome),
        "columns": list(_ROW_COLUMNS),
        "provenance": _provenance(),
    }
    buf = io.StringIO()
    buf.write(json.dumps(header, sort_keys=False) + "\n")
    last_t = -1.0
    for row in episode.rows:
        if row.t <= last_t:
            raise StorageError(f"episode rows must be strictly time-ordered "
                               f"(t={row.t!r} after t={last_t!r})")
        last_t = row.t
        buf.write(_row_line(row) + "\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def load_episode(path) -> EpisodeLoad:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise StorageError(f"{path}: empty episode log")
    header = _parse_json(lines[0], str(path))
    _check_header(header, "episode", "episode")
    if header.get("columns") != list(_ROW_COLUMNS):
        raise StorageError("episode.columns: unexpected column layout")
    cfg_doc = _need(header, "config", "episode")
    try:
        config = ControllerConfig(**cfg_doc)
    except (TypeError, ValueError) as err:
        raise StorageError(f"episode.config: {err}") from None
    out_doc = _need(header, "outcome", "episode")
    outcome = EpisodeOutcome(
        success=bool(_need(out_doc, "success", "episode.outcome")),
        reason=out_doc.get("reason"),
        detection_time=out_doc.get("detection_time"),
        deflection_force=out_doc.get("deflection_force"),
    )
    rows = []
    last_t = -1.0
    for ln, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != len(_ROW_COLUMNS):
            raise StorageError(f"episode row at line {ln}: expected "
                               f"{len(_ROW_COLUMNS)} fields, got {len(parts)}")
        try:
            phase = GraspPhase(parts[1])
            nums = [float(p) for p in parts[:1] + parts[2:]]
        except ValueError as err:
            raise StorageError(f"episode row at line {ln}: {err}") from None
        row = EpisodeRow(
            t=nums[0], phase=phase,
            target_lengths=(nums[1], nums[2]),
            lengths=(nums[3], nums[4]),
            tensions=(nums[5], nums[6]),
            currents=(nums[7], nums[8]),
            tip_pose=(nums[9], nums[10], nums[11]),
            contact_arc=nums[12],
        )
        if row.t <= last_t:
            raise StorageError(f"episode row at line {ln}: time went backwards")
        last_t = row.t
        rows.append(row)
    episode = GraspEpisode(
        rows=tuple(rows),
        outcome=outcome,
        contact_threshold=float(_need(header, "contact_threshold", "episode")),
        config=config,
        seed=int(_need(header, "seed", "episode")),
    )
    return EpisodeLoad(episode=episode,
                       design_hash=str(_need(header, "design_hash", "episode")),
                       scene_hash=str(_need(header, "scene_hash", "episode")))
