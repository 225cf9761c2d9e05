"""Command line: design studio, analysis tables, workspace sweeps, episodes.

Conventions shared by every subcommand: angles cross the flag boundary in
degrees and are converted to radians immediately; the resolved configuration
is echoed to stderr before any work; primary output (documents, tables,
summaries) goes to stdout or the declared --out path and nowhere else, so
reruns with the same flags and seed produce identical bytes.

Exit codes: 0 success, 1 usage error, 2 infeasible spec, 3 episode failure,
4 internal or solver error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_EPISODE = 3
EXIT_INTERNAL = 4


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; the contract reserves 2 for infeasible
    # specs, so usage problems are rerouted through exit code 1
    def error(self, message):
        raise _UsageError(message)


def _echo(ns: argparse.Namespace) -> None:
    pairs = sorted(vars(ns).items())
    body = " ".join(f"{k}={v}" for k, v in pairs
                    if isinstance(v, (str, int, float, bool, type(None))))
    print(f"config: {body}", file=sys.stderr)


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def _fmt(x: float) -> str:
    return repr(float(x))


# ------------------------------------------------------------------ design

def _cmd_design(ns) -> int:
    from .chain import MaterialConfig
    from .exports import export_mesh, export_profile
    from .geometry import deformation_rate, exact_length_spec, design_from_spec
    from .storage import design_to_document, _dump

    spec = exact_length_spec(ns.length, ns.tip_width, math.radians(ns.taper),
                             reference_step=math.radians(ns.dtheta),
                             cable_count=ns.cables,
                             layer_fraction=ns.layer_fraction,
                             cable_diameter=ns.cable_diameter)
    design = design_from_spec(spec)
    p = design.params
    print(f"units: {len(design.units)}", file=sys.stderr)
    print(f"a: {p.a}", file=sys.stderr)
    print(f"b: {p.b}", file=sys.stderr)
    print(f"theta0_deg: {math.degrees(p.theta0)}", file=sys.stderr)
    print(f"taper_deg: {ns.taper}", file=sys.stderr)
    print(f"deformation_rate: {deformation_rate(p.b)}", file=sys.stderr)
    print(f"root_width_mm: {design.units[-1].width}", file=sys.stderr)

    _emit(_dump(design_to_document(design)), ns.out)
    if ns.profile_out:
        fmt = "svg" if ns.profile_out.endswith(".svg") else "polyline-text"
        with open(ns.profile_out, "w") as fh:
            fh.write(export_profile(design, fmt))
    if ns.mesh_out:
        depth = ns.mesh_depth
        if depth is None:
            depth = MaterialConfig().resolved_depth(design)
        with open(ns.mesh_out, "w") as fh:
            fh.write(export_mesh(design, depth))
    return EXIT_OK


# ----------------------------------------------------------------- analyze

def _cmd_analyze(ns) -> int:
    from .geometry import deformation_rate, packed_curvature, taper_angle
    from .storage import load_design

    design, _ = load_design(ns.design)
    if not design.units:
        raise ValueError("design has no units to analyze")
    p = design.params
    lines = [
        f"# taper_deg: {_fmt(math.degrees(taper_angle(p.b)))}",
        f"# deformation_rate: {_fmt(deformation_rate(p.b))}",
        f"# units: {len(design.units)}",
        "unit,theta_deg,kappa_per_mm,scale,width_mm,chord_mm",
    ]
    chords = design.chord_lengths
    for u in design.units:
        theta = u.index * p.delta_theta
        lines.append(",".join([
            str(u.index), _fmt(math.degrees(theta)),
            _fmt(packed_curvature(p, theta)), _fmt(u.scale),
            _fmt(u.width), _fmt(chords[u.index])]))
    _emit("\n".join(lines) + "\n", ns.out)
    return EXIT_OK


# --------------------------------------------------------------- workspace

def _cmd_workspace(ns) -> int:
    from .analysis import sample_workspace
    from .chain import build_chain
    from .storage import load_design

    design, material = load_design(ns.design)
    chain = build_chain(design, material)
    ws = sample_workspace(chain, ns.samples, seed=ns.seed)
    lines = [
        f"# samples: {ns.samples} seed: {ns.seed} dropped: {ws.n_dropped}",
        f"# area_mm2: {_fmt(ws.area)}",
        f"# envelope_fit: a={_fmt(ws.spiral_a)} b={_fmt(ws.spiral_b)} "
        f"rms_mm={_fmt(ws.fit_rms)} "
        f"center=({_fmt(ws.spiral_center[0])},{_fmt(ws.spiral_center[1])})",
        "tip_x_mm,tip_y_mm",
    ]
    for x, y in ws.tips:
        lines.append(f"{_fmt(x)},{_fmt(y)}")
    _emit("\n".join(lines) + "\n", ns.out)
    return EXIT_OK


# ---------------------------------------------------------------- episodes

def _episode_config(ns):
    from .control import ControllerConfig

    doc = {}
    if ns.config:
        with open(ns.config) as fh:
            doc = json.load(fh)
    overrides = {
        "reach_speed": ns.reach_speed,
        "wrap_ramp_rate": ns.wrap_ramp_rate,
        "grasp_speed": ns.grasp_speed,
        "contact_margin": ns.contact_margin,
        "grasp_current_threshold": ns.grasp_current_threshold,
        "step_dt": ns.step_dt,
        "max_steps": ns.max_steps,
    }
    doc.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ControllerConfig(**doc)
    except TypeError as err:
        raise ValueError(f"bad controller config: {err}") from None


def _run_episode(ns, probe: bool) -> int:
    from .chain import build_chain
    from .control import run_grasp_episode, run_probe_episode
    from .storage import design_hash, load_design, load_scene, save_episode, scene_hash

    design, material = load_design(ns.design)
    scene = load_scene(ns.scene)
    chain = build_chain(design, material)
    config = _episode_config(ns)
    runner = run_probe_episode if probe else run_grasp_episode
    episode = runner(chain, list(scene.objects), config=config, seed=ns.seed)
    out = episode.outcome
    detail = []
    if out.detection_time is not None:
        detail.append(f"detection_t={_fmt(out.detection_time)}")
    if out.deflection_force is not None:
        detail.append(f"deflection_n={_fmt(out.deflection_force)}")
    if episode.rows:
        detail.append(f"arc_deg={_fmt(episode.rows[-1].contact_arc)}")
    status = "success" if out.success else f"failure ({out.reason})"
    summary = f"outcome: {status} steps={len(episode.rows)}"
    if detail:
        summary += " " + " ".join(detail)
    print(summary)
    if ns.out:
        save_episode(ns.out, episode, design_hash(design, material),
                     scene_hash(scene))
    if out.success:
        return EXIT_OK
    return EXIT_INTERNAL if out.reason == "solver failure" else EXIT_EPISODE


def _cmd_grasp(ns) -> int:
    return _run_episode(ns, probe=False)


def _cmd_probe(ns) -> int:
    return _run_episode(ns, probe=True)


# ------------------------------------------------------------------ teleop

def _cmd_teleop(ns) -> int:
    from .chain import build_chain
    from .storage import load_design, load_scene
    from .teleop import serve

    design, material = load_design(ns.design)
    scene = load_scene(ns.scene)
    chain = build_chain(design, material)
    try:
        serve(chain, list(scene.objects), host=ns.host, port=ns.port,
              rate_hz=ns.rate)
    except OSError as err:
        print(f"cannot serve on {ns.host}:{ns.port}: {err}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        print("teleop: shut down", file=sys.stderr)
    return EXIT_OK


# ------------------------------------------------------------------- wiring

def _build_parser() -> _Parser:
    parser = _Parser(prog="spiralarm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)

    d = sub.add_parser("design", help="solve a spiral design and write its document")
    d.add_argument("--taper", type=float, required=True, help="taper angle, degrees")
    d.add_argument("--length", type=float, default=250.0, help="arm length, mm")
    d.add_argument("--tip-width", type=float, default=5.5, help="tip width, mm")
    d.add_argument("--dtheta", type=float, default=30.0,
                   help="reference unit step, degrees (snapped to fit)")
    d.add_argument("--cables", type=int, default=2, choices=(2, 3))
    d.add_argument("--layer-fraction", type=float, default=0.075)
    d.add_argument("--cable-diameter", type=float, default=0.8)
    d.add_argument("--out", help="design document path (default stdout)")
    d.add_argument("--profile-out", help="cut profile path (.svg or text)")
    d.add_argument("--mesh-out", help="extruded mesh path (ascii stl)")
    d.add_argument("--mesh-depth", type=float, help="extrusion depth, mm")
    d.set_defaults(func=_cmd_design)

    a = sub.add_parser("analyze", help="print curvature and unit tables for a design")
    a.add_argument("design", help="design document path")
    a.add_argument("--out", help="table path (default stdout)")
    a.set_defaults(func=_cmd_analyze)

    w = sub.add_parser("workspace", help="sample reachable tip positions")
    w.add_argument("design", help="design document path")
    w.add_argument("--samples", type=int, default=200)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--out", help="table path (default stdout)")
    w.set_defaults(func=_cmd_workspace)

    def episode_flags(p):
        p.add_argument("design", help="design document path")
        p.add_argument("scene", help="scene document path")
        p.add_argument("--config", help="controller config json path")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", help="episode log path")
        p.add_argument("--reach-speed", type=float)
        p.add_argument("--wrap-ramp-rate", type=float)
        p.add_argument("--grasp-speed", type=float)
        p.add_argument("--contact-margin", type=float)
        p.add_argument("--grasp-current-threshold", type=float)
        p.add_argument("--step-dt", type=float)
        p.add_argument("--max-steps", type=int)

    g = sub.add_parser("grasp", help="run one autonomous grasp episode")
    episode_flags(g)
    g.set_defaults(func=_cmd_grasp)

    pr = sub.add_parser("probe", help="reach until a probe is detected, then retract")
    episode_flags(pr)
    pr.set_defaults(func=_cmd_probe)

    t = sub.add_parser("teleop", help="serve the live simulation over a web socket")
    t.add_argument("design", help="design document path")
    t.add_argument("scene", help="scene document path")
    t.add_argument("--host", default="127.0.0.1")
    t.add_argument("--port", type=int, default=8765)
    t.add_argument("--rate", type=float, default=30.0, help="frame rate, Hz")
    t.set_defaults(func=_cmd_teleop)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
    except _UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    _echo(ns)
    try:
        return ns.func(ns)
    except ValueError as err:
        print(f"infeasible: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except RuntimeError as err:
        print(f"solver error: {err}", file=sys.stderr)
        return EXIT_INTERNAL
    except OSError as err:
        print(f"io error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
