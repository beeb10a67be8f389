"""Quick-look heatmaps written as binary PPM (P6)."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Sequence

import numpy as np

from bohmguide.corefield import Grid2D, read_cf2d
from bohmguide.potentials import WaveguideGeometry

LOG_FLOOR = 1e-12

COLORMAPS = {
    "gray": ["#000000", "#ffffff"],
    "heat": ["#000000", "#8b0000", "#ff4500", "#ffd700", "#ffffff"],
    "viridis": ["#440154", "#3b528b", "#21918c", "#5ec962", "#fde725"],
}


def _hex(c: str) -> tuple[int, int, int]:
    c = c.strip().lstrip("#")
    if len(c) != 6:
        raise ValueError(f"bad colour {c!r}")
    return tuple(int(c[i : i + 2], 16) for i in (0, 2, 4))


def colormap_table(spec: str, n: int = 256) -> np.ndarray:
    """(n, 3) uint8 lookup table from a colormap name or comma-separated hex stops."""
    stops = COLORMAPS.get(spec) or [s for s in spec.split(",") if s.strip()]
    if len(stops) < 2:
        raise ValueError(f"unknown colormap {spec!r}")
    rgb = np.array([_hex(s) for s in stops], dtype=float)
    pos = np.linspace(0.0, 1.0, len(stops))
    q = np.linspace(0.0, 1.0, n)
    table = np.column_stack([np.interp(q, pos, rgb[:, c]) for c in range(3)])
    return np.round(table).astype(np.uint8)


def scalar_image(values: np.ndarray, log_scale: bool = False) -> np.ndarray:
    """Map a real array to [0, 1]; log scaling floors at LOG_FLOOR of the maximum."""
    v = np.asarray(values, dtype=float)
    if log_scale:
        peak = v.max()
        if peak <= 0:
            return np.zeros_like(v)
        lo = np.log10(peak * LOG_FLOOR)
        logv = np.log10(np.maximum(v, peak * LOG_FLOOR))
        return (logv - lo) / (np.log10(peak) - lo)
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def write_ppm(path: str | os.PathLike, rgb: np.ndarray) -> Path:
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    h, w, _ = rgb.shape
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())
    os.replace(tmp, path)
    return path


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h * 3], dtype=np.uint8).reshape(h, w, 3)


def guide_outlines(g: WaveguideGeometry) -> list[np.ndarray]:
    """Closed polylines of both guides plus the x = 0 step line."""
    out = []
    for r in (g.regions()["main"], g.regions()["aux"]):
        out.append(np.array([[r.x_min, r.y_min], [r.x_max, r.y_min], [r.x_max, r.y_max], [r.x_min, r.y_max], [r.x_min, r.y_min]]))
    out.append(np.array([[0.0, -g.d / 2 - g.b], [0.0, g.d / 2 + g.a]]))
    return out


def _draw_polyline(rgb: np.ndarray, grid: Grid2D, line: np.ndarray, color):
    h, w, _ = rgb.shape
    for (x0, y0), (x1, y1) in zip(line[:-1], line[1:]):
        n = int(max(abs(x1 - x0) / grid.dx, abs(y1 - y0) / grid.dy) * 2) + 2
        xs = np.linspace(x0, x1, n)
        ys = np.linspace(y0, y1, n)
        cols = np.round((xs - grid.x0_min) / grid.dx).astype(int)
        rows = h - 1 - np.round((ys - grid.y0_min) / grid.dy).astype(int)
        ok = (cols >= 0) & (cols < w) & (rows >= 0) & (rows < h)
        rgb[rows[ok], cols[ok]] = color


def render_heatmap(
    field_file: str | os.PathLike,
    out_path: str | os.PathLike,
    colormap: str = "viridis",
    log_scale: bool = False,
    outlines: Sequence[np.ndarray] = (),
    outline_color: str = "#ffffff",
) -> Path:
    """Render |values|^2 (or the real part of a purely real field) to a PPM, y pointing up."""
    f = read_cf2d(field_file)
    vals = f.values
    scalar = vals.real if not np.any(vals.imag) else np.abs(vals) ** 2
    level = scalar_image(scalar, log_scale)
    table = colormap_table(colormap)
    idx = np.clip(np.round(level * (len(table) - 1)).astype(int), 0, len(table) - 1)
    # rows run from y_max down, columns along x
    rgb = table[idx].transpose(1, 0, 2)[::-1].copy()
    color = np.array(_hex(outline_color), dtype=np.uint8)
    for line in outlines:
        _draw_polyline(rgb, f.grid, np.asarray(line, dtype=float), color)
    return write_ppm(out_path, rgb)
