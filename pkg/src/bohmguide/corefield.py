"""Uniform periodic grids, complex fields on them, FFTs and the CF2D dump format.

Layout: every 2D array is indexed ``[ix, iy]`` with shape ``(nx, ny)`` in C
order, so ``y`` is the fastest-varying index on disk (layout token ``yfast``).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as sfft

LAYOUT = "yfast"
CF2D_MAGIC = "CF2D"
CF2D_VERSION = 1
THREADS_ENV = "BOHMGUIDE_THREADS"


def fft_workers() -> int:
    """Worker count for scipy.fft, taken from ``BOHMGUIDE_THREADS`` (default 1)."""
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return -1 if n <= 0 else n


@dataclass(frozen=True)
class UnitsConfig:
    hbar: float = 1.0
    mass: float = 1.0

    def __post_init__(self):
        if not (self.hbar > 0 and self.mass > 0):
            raise ValueError(f"hbar and mass must be positive, got {self.hbar}, {self.mass}")


@dataclass(frozen=True)
class Grid2D:
    """Periodic rectangular grid; node ``(i, j)`` sits at ``(x0_min + i dx, y0_min + j dy)``."""

    nx: int
    ny: int
    lx: float
    ly: float
    x0_min: float = 0.0
    y0_min: float = 0.0

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise ValueError("nx and ny must be integers")
        if self.nx < 2 or self.ny < 2:
            raise ValueError(f"grid needs at least 2 points per axis, got {self.nx}x{self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError(f"grid extents must be positive, got {self.lx}, {self.ly}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def dx(self) -> float:
        return self.lx / self.nx

    @property
    def dy(self) -> float:
        return self.ly / self.ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def x(self) -> np.ndarray:
        return self.x0_min + self.dx * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.y0_min + self.dy * np.arange(self.ny)

    @property
    def x_max(self) -> float:
        """Upper edge of the periodic cell (exclusive)."""
        return self.x0_min + self.lx

    @property
    def y_max(self) -> float:
        return self.y0_min + self.ly

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    @property
    def kx(self) -> np.ndarray:
        """Angular wavenumbers in DFT order, spacing 2*pi/lx."""
        return 2 * np.pi * np.fft.fftfreq(self.nx, d=self.dx)

    @property
    def ky(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.ny, d=self.dy)

    def k_squared(self) -> np.ndarray:
        return self.kx[:, None] ** 2 + self.ky[None, :] ** 2

    def compatible(self, other: Grid2D, rtol: float = 1e-12) -> bool:
        """True when both grids describe the same nodes (up to float round-off)."""
        if self.shape != other.shape:
            return False
        vals = np.array([self.lx, self.ly, self.x0_min, self.y0_min])
        ovals = np.array([other.lx, other.ly, other.x0_min, other.y0_min])
        scale = max(self.lx, self.ly)
        return bool(np.all(np.abs(vals - ovals) <= rtol * scale))


def make_grid(nx: int, ny: int, lx: float, ly: float, x0_min: float = 0.0, y0_min: float = 0.0) -> Grid2D:
    return Grid2D(int(nx), int(ny), float(lx), float(ly), float(x0_min), float(y0_min))


@dataclass(frozen=True)
class ComplexField2D:
    """Complex amplitudes on a grid. ``space`` is ``"x"`` (position) or ``"k"`` (DFT coefficients)."""

    grid: Grid2D
    values: np.ndarray
    space: str = field(default="x")

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.complex128)
        if vals.shape != self.grid.shape:
            raise ValueError(f"field shape {vals.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field contains non-finite entries")
        if self.space not in ("x", "k"):
            raise ValueError(f"space must be 'x' or 'k', got {self.space!r}")
        vals = vals.view()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def density(self) -> np.ndarray:
        return np.abs(self.values) ** 2

    def normalize(self) -> ComplexField2D:
        n = norm2(self)
        if n == 0:
            raise ValueError("cannot normalize a zero field")
        return ComplexField2D(self.grid, self.values / np.sqrt(n), self.space)

    def scaled(self, factor: complex) -> ComplexField2D:
        return ComplexField2D(self.grid, self.values * factor, self.space)


def norm2(f: ComplexField2D) -> float:
    """Sum of |psi|^2 dx dy. Also valid for ``space='k'`` since the DFT is orthonormal."""
    return float(np.sum(np.abs(f.values) ** 2) * f.grid.cell_area)


def forward_transform(f: ComplexField2D) -> ComplexField2D:
    if f.space != "x":
        raise ValueError("forward_transform expects a position-space field")
    _check_shape(f)
    return ComplexField2D(f.grid, sfft.fft2(f.values, norm="ortho", workers=fft_workers()), "k")


def inverse_transform(f: ComplexField2D) -> ComplexField2D:
    if f.space != "k":
        raise ValueError("inverse_transform expects a spectral field")
    _check_shape(f)
    return ComplexField2D(f.grid, sfft.ifft2(f.values, norm="ortho", workers=fft_workers()), "x")


def _check_shape(f: ComplexField2D):
    if f.values.shape != f.grid.shape:
        raise ValueError(f"field shape {f.values.shape} does not match grid {f.grid.shape}")


def edge_density_ratio(values: np.ndarray, width: int = 2) -> float:
    """max |psi|^2 over the outermost ``width`` cells on every side, relative to the global max."""
    rho = np.abs(values) ** 2
    peak = rho.max()
    if peak == 0:
        return 0.0
    edge = max(
        rho[:width, :].max(),
        rho[-width:, :].max(),
        rho[:, :width].max(),
        rho[:, -width:].max(),
    )
    return float(edge / peak)


# -- CF2D v1 dump format ---------------------------------------------------------------


def write_cf2d(path: str | os.PathLike, f: ComplexField2D | np.ndarray, grid: Grid2D | None = None) -> Path:
    """Write a field (or a real/complex array plus grid) atomically in CF2D v1 format."""
    if isinstance(f, ComplexField2D):
        grid, values = f.grid, f.values
    else:
        if grid is None:
            raise ValueError("a grid is required when writing a bare array")
        values = np.asarray(f)
        if values.shape != grid.shape:
            raise ValueError(f"array shape {values.shape} does not match grid {grid.shape}")
    data = np.ascontiguousarray(values, dtype=np.complex128).astype("<c16", copy=False)
    header = (
        f"{CF2D_MAGIC} {CF2D_VERSION} {grid.nx} {grid.ny} {grid.dx!r} {grid.dy!r} "
        f"{grid.x0_min!r} {grid.y0_min!r} {LAYOUT}\n"
    )
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(data.tobytes(order="C"))
    os.replace(tmp, path)
    return path


def read_cf2d(path: str | os.PathLike) -> ComplexField2D:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) != 9 or header[0] != CF2D_MAGIC:
            raise ValueError(f"{path}: not a CF2D file")
        if int(header[1]) != CF2D_VERSION:
            raise ValueError(f"{path}: unsupported CF2D version {header[1]}")
        nx, ny = int(header[2]), int(header[3])
        dx, dy, x0, y0 = (float(v) for v in header[4:8])
        if header[8] != LAYOUT:
            raise ValueError(f"{path}: unsupported layout {header[8]!r}")
        raw = fh.read()
    if len(raw) != nx * ny * 16:
        raise ValueError(f"{path}: expected {nx * ny * 16} data bytes, found {len(raw)}")
    values = np.frombuffer(raw, dtype="<c16").reshape(nx, ny).astype(np.complex128)
    return ComplexField2D(Grid2D(nx, ny, dx * nx, dy * ny, x0, y0), values)


@dataclass(frozen=True)
class Grid1D:
    """Periodic 1D grid with nodes ``y0_min + j dy``."""

    n: int
    length: float
    y0_min: float = 0.0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError(f"grid needs at least 2 points, got {self.n}")
        if not self.length > 0:
            raise ValueError(f"grid length must be positive, got {self.length}")

    @property
    def dy(self) -> float:
        return self.length / self.n

    @property
    def y(self) -> np.ndarray:
        return self.y0_min + self.dy * np.arange(self.n)

    @property
    def k(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.n, d=self.dy)


def nodal_cdf(y_nodes: np.ndarray, density: np.ndarray):
    """Piecewise-linear CDF of a nodal density, each node spreading over its cell."""
    dy = y_nodes[1] - y_nodes[0]
    edges = np.concatenate([y_nodes - dy / 2, [y_nodes[-1] + dy / 2]])
    cum = np.concatenate([[0.0], np.cumsum(density)])
    cum /= cum[-1]

    def cdf(q):
        return np.interp(q, edges, cum)

    return cdf


def ks_distance(samples: np.ndarray, cdf) -> float:
    """Kolmogorov-Smirnov distance between samples and a CDF callable."""
    xs = np.sort(np.asarray(samples, dtype=float))
    n = xs.size
    f = cdf(xs)
    upper = np.arange(1, n + 1) / n - f
    lower = f - np.arange(0, n) / n
    return float(max(upper.max(), lower.max()))
