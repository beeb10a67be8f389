"""Coupled-waveguide potential (2D, tanh-smoothed) and the sharp 1D double well."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from bohmguide.corefield import Grid1D, Grid2D, UnitsConfig


@dataclass(frozen=True)
class WaveguideGeometry:
    """Main guide on ``d/2 < y < d/2 + a`` for ``|x| < L/2``; auxiliary guide on
    ``-d/2 - b < y < -d/2`` for ``0 < x < L/2``. Defaults are the published setup."""

    L: float = 100.0
    a: float = 20.0
    b: float = 5.0
    d: float = 1.0
    v_step: float = 162.0
    v_barrier: float = 18.0
    v_wall: float = 1e4
    eps: float = 0.05

    def __post_init__(self):
        for name in ("L", "a", "b", "d", "v_barrier", "eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not (self.v_wall > self.v_step > 0):
            raise ValueError(f"need v_wall > v_step > 0, got v_wall={self.v_wall}, v_step={self.v_step}")

    @property
    def main_center_y(self) -> float:
        return self.d / 2 + self.a / 2

    def regions(self) -> dict[str, Rect]:
        """Named rectangles: the two guides and the barrier strip between them."""
        h, L = self.d / 2, self.L / 2
        return {
            "main": Rect(-L, L, h, h + self.a),
            "aux": Rect(0.0, L, -h - self.b, -h),
            "barrier": Rect(0.0, L, -h, h),
        }

    def bounding_box(self) -> Rect:
        return Rect(-self.L / 2, self.L / 2, -self.d / 2 - self.b, self.d / 2 + self.a)


@dataclass(frozen=True)
class Rect:
    """Half-open rectangle ``[x_min, x_max) x [y_min, y_max)``."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def contains(self, x, y):
        return (x >= self.x_min) & (x < self.x_max) & (y >= self.y_min) & (y < self.y_max)


@dataclass(frozen=True)
class DoubleWellParams:
    """Wells of depth ``v0`` and width ``a`` on ``d/2 <= |y| <= d/2 + a``."""

    v0: float
    a: float
    d: float
    mass: float = 1.0

    def __post_init__(self):
        for name in ("v0", "a", "d", "mass"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    def confinement_ratio(self, hbar: float = 1.0) -> float:
        """Infinite-well ground energy over the well depth."""
        return hbar**2 * np.pi**2 / (2 * self.mass * self.a**2) / self.v0

    def is_deep(self, units: UnitsConfig | None = None) -> bool:
        hbar = units.hbar if units is not None else 1.0
        return self.confinement_ratio(hbar) < 0.1


def smoothed_theta(x, eps: float):
    """(1 + tanh(x/eps))/2, the smooth stand-in for the unit step."""
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    return 0.5 * (1.0 + np.tanh(np.asarray(x, dtype=float) / eps))


def _step(x, eps: float):
    # eps == 0 is the sharp limit, with theta(0) = 1/2
    if eps == 0:
        return np.heaviside(np.asarray(x, dtype=float), 0.5)
    return smoothed_theta(x, eps)


def waveguide_potential(g: WaveguideGeometry, x, y, sharp: bool = False):
    """V_in + V_out with every step replaced factor-wise by the smoothed step.

    ``sharp=True`` evaluates the unsmoothed potential (midpoint value on edges).
    Works elementwise on arrays.
    """
    eps = 0.0 if sharp else g.eps
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    h, half_len = g.d / 2, g.L / 2
    v_in = _step(x, eps) * (g.v_step + _step(h - np.abs(y), eps) * g.v_barrier)
    # the two open rectangles share the edge y = d/2 for x > 0; their smoothed
    # indicators sum to one across it, so the barrier strip counts as inside
    in_main = _step(x + half_len, eps) * _step(half_len - x, eps) * _step(y - h, eps) * _step(h + g.a - y, eps)
    in_aux = _step(x, eps) * _step(half_len - x, eps) * _step(y + h + g.b, eps) * _step(h - y, eps)
    v_out = g.v_wall * (1.0 - in_main - in_aux)
    v = v_in + v_out
    return float(v) if v.ndim == 0 else v


def double_well_potential(p: DoubleWellParams, y, eps: float = 0.0):
    """-v0 inside either well, 0 elsewhere. Sharp by default; edges take -v0/2."""
    ay = np.abs(np.asarray(y, dtype=float))
    inside = _step(ay - p.d / 2, eps) * _step(p.d / 2 + p.a - ay, eps)
    v = -p.v0 * inside
    return float(v) if v.ndim == 0 else v


def rasterize_potential(model, grid: Grid2D | Grid1D, sharp: bool = False) -> np.ndarray:
    """Evaluate a waveguide geometry on a 2D grid or a double well on a 1D grid."""
    if isinstance(model, WaveguideGeometry):
        if not isinstance(grid, Grid2D):
            raise TypeError("a waveguide geometry needs a Grid2D")
        box = model.bounding_box()
        if grid.x0_min > box.x_min or grid.x_max < box.x_max or grid.y0_min > box.y_min or grid.y_max < box.y_max:
            warnings.warn("grid does not cover the waveguide geometry", RuntimeWarning, stacklevel=2)
        X, Y = grid.mesh()
        return waveguide_potential(model, X, Y, sharp=sharp)
    if isinstance(model, DoubleWellParams):
        if not isinstance(grid, Grid1D):
            raise TypeError("a double well needs a Grid1D")
        reach = model.d / 2 + model.a
        if grid.y0_min > -reach or grid.y0_min + grid.length < reach:
            warnings.warn("grid does not cover the double well", RuntimeWarning, stacklevel=2)
        return double_well_potential(model, grid.y)
    raise TypeError(f"unsupported potential model {type(model).__name__}")
