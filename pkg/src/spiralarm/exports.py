"""Fabrication preview exports: 2D profile documents and an extruded mesh.

All exporters are pure functions from a design to a text document, emit
numbers with full round-trip precision, and are byte-deterministic: the same
design always yields the same file. Coordinates are millimeters in the
straightened frame (root face at x = 0, tip at the far end, +y the left
flank).
"""

from __future__ import annotations

import numpy as np

from .chain import _merged_outline
from .geometry import RobotDesign, robot_length

__all__ = ["export_profile", "export_mesh", "profile_polygons"]


def _flat_intervals(design: RobotDesign) -> list[tuple[float, float]]:
    """Axial span of each unit in the cut pattern, indexed like units.

    Each unit gets its full material share of the design length; the hinge
    notches are inserted as extra spacing, so the pattern runs from the root
    face at x = 0 to realized_length + sum(gaps) at the tip.
    """
    params = design.params
    dth = params.delta_theta
    n = len(design.units)
    marks = [robot_length(params, k * dth) for k in range(n + 1)]
    material = [marks[k + 1] - marks[k] for k in range(n)]
    gaps = np.asarray(design.gap_per_joint, dtype=float)
    spans: list[tuple[float, float]] = [(0.0, 0.0)] * n
    x = 0.0
    for k in range(n - 1, -1, -1):  # root outward
        spans[k] = (x, x + material[k])
        x += material[k]
        if k > 0:
            x += float(gaps[k - 1])  # joint k-1 couples units k and k-1
    return spans


def profile_polygons(design: RobotDesign) -> list[np.ndarray]:
    """The drawable outline set: one hexagon per unit plus the layer strip.

    Unit outlines are restretched axially from their simulation chords onto
    the material intervals, keeping flank widths. The strip runs along the
    axis, its half-height following the per-joint layer thickness from the
    root face out to the tip.
    """
    spans = _flat_intervals(design)
    polys = []
    for u, (x0, x1) in zip(design.units, spans):
        o = _merged_outline(u).astype(float)
        lo, hi = o[:, 0].min(), o[:, 0].max()
        o[:, 0] = x0 + (o[:, 0] - lo) * ((x1 - x0) / (hi - lo))
        polys.append(o)
    t = np.asarray(design.layer_thickness_per_joint, dtype=float)
    n_joints = len(t)
    # joint i spans the notch between units i+1 and i; node at its center
    xs = [0.0] + [0.5 * (spans[i + 1][1] + spans[i][0])
                  for i in range(n_joints - 1, -1, -1)] + [spans[0][1]]
    hs = [float(t[n_joints - 1])] + [float(t[i]) for i in range(n_joints - 1, -1, -1)] \
        + [float(t[0])]
    bottom = [(x, -h / 2.0) for x, h in zip(xs, hs)]
    top = [(x, h / 2.0) for x, h in zip(xs, hs)]
    strip = np.array(bottom + top[::-1])
    polys.append(strip)
    return polys


def _svg(polys: list[np.ndarray]) -> str:
    pts = np.vstack(polys)
    x0, y0 = (float(v) for v in pts.min(axis=0))
    x1, y1 = (float(v) for v in pts.max(axis=0))
    pad = 2.0
    w, h = (x1 - x0) + 2 * pad, (y1 - y0) + 2 * pad
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w!r}mm" height="{h!r}mm" '
        f'viewBox="{x0 - pad!r} {-y1 - pad!r} {w!r} {h!r}">',
        '<!-- units: millimeters; y up in the model, flipped for display -->',
        f'<g transform="scale(1,-1)" fill="none" stroke="black" stroke-width="0.2">',
    ]
    for i, poly in enumerate(polys):
        name = f"unit-{i}" if i < len(polys) - 1 else "elastic-layer"
        body = " ".join(f"{float(x)!r},{float(y)!r}" for x, y in poly)
        lines.append(f'<polygon id="{name}" points="{body}"/>')
    lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _polyline_text(polys: list[np.ndarray]) -> str:
    lines = ["# spiralarm profile", "# units: mm",
             f"# polygons: {len(polys)}"]
    for i, poly in enumerate(polys):
        name = f"unit {i}" if i < len(polys) - 1 else "layer"
        body = " ".join(f"{float(x)!r},{float(y)!r}" for x, y in poly)
        lines.append(f"{name}: {body}")
    return "\n".join(lines) + "\n"


def export_profile(design: RobotDesign, format: str = "svg") -> str:
    """Render the straightened cut profile as an svg or polyline-text document."""
    polys = profile_polygons(design)
    if format == "svg":
        return _svg(polys)
    if format == "polyline-text":
        return _polyline_text(polys)
    raise ValueError(f"unknown profile format {format!r}")


def _facet(out: list[str], a, b, c) -> None:
    n = np.cross(np.asarray(b) - a, np.asarray(c) - a)
    norm = float(np.linalg.norm(n))
    n = n / norm if norm > 0 else n
    out.append(f" facet normal {float(n[0])!r} {float(n[1])!r} {float(n[2])!r}")
    out.append("  outer loop")
    for p in (a, b, c):
        out.append(f"   vertex {float(p[0])!r} {float(p[1])!r} {float(p[2])!r}")
    out.append("  endloop")
    out.append(" endfacet")


def export_mesh(design: RobotDesign, depth: float) -> str:
    """Extrude each unit outline to a watertight prism, ASCII STL.

    The units stay disconnected components, one prism each; the elastic
    layer is a cut profile concern and is not meshed.
    """
    if depth <= 0:
        raise ValueError(f"extrusion depth must be > 0, got {depth}")
    out = ["solid spiralarm"]
    for u, poly in zip(design.units, profile_polygons(design)[:-1]):
        # shoelace; outlines are counterclockwise so area is positive
        x, y = poly[:, 0], poly[:, 1]
        area = 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
        if area <= 1e-12:
            raise ValueError(f"unit {u.index}: degenerate outline")
        lo = np.column_stack([poly, np.zeros(len(poly))])
        hi = np.column_stack([poly, np.full(len(poly), float(depth))])
        for k in range(1, len(poly) - 1):
            _facet(out, lo[0], lo[k + 1], lo[k])      # bottom, normal -z
            _facet(out, hi[0], hi[k], hi[k + 1])      # top, normal +z
        for k in range(len(poly)):
            j = (k + 1) % len(poly)
            _facet(out, lo[k], lo[j], hi[j])
            _facet(out, lo[k], hi[j], hi[k])
    out.append("endsolid spiralarm")
    return "\n".join(out) + "\n"
