"""Split-operator propagation of the time-dependent Schrodinger equation on a periodic grid."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.fft as sfft

from bohmguide.corefield import (
    ComplexField2D,
    Grid2D,
    UnitsConfig,
    edge_density_ratio,
    fft_workers,
    norm2,
    write_cf2d,
)
from bohmguide.potentials import Rect

log = logging.getLogger(__name__)


class PropagationAborted(RuntimeError):
    def __init__(self, message: str, step: int, t: float):
        super().__init__(f"step {step} (t={t:g}): {message}")
        self.step = step
        self.t = t
        self.diagnostic = message


@dataclass(frozen=True)
class WavepacketParams:
    x0: float = -12.5
    y0: float = 10.5
    sigma: float = 0.5
    p0: float = 12.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class PropagationConfig:
    dt: float = 1e-4
    t_final: float = 5.0
    snapshot_stride: int = 100

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.t_final >= self.dt:
            raise ValueError(f"t_final must be at least dt, got {self.t_final}")
        if int(self.snapshot_stride) != self.snapshot_stride or self.snapshot_stride < 1:
            raise ValueError(f"snapshot_stride must be a positive integer, got {self.snapshot_stride}")

    @property
    def n_steps(self) -> int:
        # guard against t_final/dt landing a hair above an integer
        return int(math.ceil(self.t_final / self.dt - 1e-9))


def initial_wavepacket(w: WavepacketParams, grid: Grid2D, units: UnitsConfig | None = None) -> ComplexField2D:
    """Gaussian in x and y (same width), momentum p0 along x, normalized on the grid."""
    units = units or UnitsConfig()
    margin = 5 * w.sigma
    if (
        w.x0 - margin < grid.x0_min
        or w.x0 + margin > grid.x_max
        or w.y0 - margin < grid.y0_min
        or w.y0 + margin > grid.y_max
    ):
        warnings.warn("wavepacket lies within 5 sigma of the grid boundary", RuntimeWarning, stacklevel=2)
    X, Y = grid.mesh()
    dx = X - w.x0
    dy = Y - w.y0
    psi = np.exp(-(dx**2) / (2 * w.sigma**2) - dy**2 / (2 * w.sigma**2) + 1j * w.p0 * dx / units.hbar)
    return ComplexField2D(grid, psi).normalize()


class SplitOperator:
    """Strang step exp(-iV dt/2) F^-1 exp(-i hbar k^2 dt/2m) F exp(-iV dt/2) on any dimension.

    ``k_axes`` holds one wavenumber array per axis of the potential.
    """

    def __init__(self, potential: np.ndarray, k_axes: Sequence[np.ndarray], dt: float, units: UnitsConfig):
        potential = np.asarray(potential, dtype=float)
        if potential.ndim != len(k_axes) or any(len(k) != n for k, n in zip(k_axes, potential.shape)):
            raise ValueError("wavenumber axes do not match the potential shape")
        self.shape = potential.shape
        self.dt = dt
        k2 = np.zeros(self.shape)
        for axis, k in enumerate(k_axes):
            shape = [1] * potential.ndim
            shape[axis] = len(k)
            k2 = k2 + np.reshape(k, shape) ** 2
        self.half_potential = np.exp(-0.5j * potential * dt / units.hbar)
        self.kinetic = np.exp(-0.5j * units.hbar * k2 * dt / units.mass)
        self._axes = tuple(range(potential.ndim))

    def step(self, psi: np.ndarray) -> np.ndarray:
        workers = fft_workers()
        phi = sfft.fftn(self.half_potential * psi, axes=self._axes, workers=workers, overwrite_x=True)
        phi *= self.kinetic
        out = sfft.ifftn(phi, axes=self._axes, workers=workers, overwrite_x=True)
        out *= self.half_potential
        return out


def _grid_stepper(grid: Grid2D, v_field: np.ndarray, dt: float, units: UnitsConfig) -> SplitOperator:
    v = np.asarray(v_field, dtype=float)
    if v.shape != grid.shape:
        raise ValueError(f"potential shape {v.shape} does not match grid {grid.shape}")
    return SplitOperator(v, (grid.kx, grid.ky), dt, units)


def split_step(psi: ComplexField2D, v_field, dt: float, units: UnitsConfig | None = None) -> ComplexField2D:
    """One Strang step. ``v_field`` is an array on ``psi.grid`` or a field with its own grid."""
    units = units or UnitsConfig()
    if isinstance(v_field, ComplexField2D):
        if not v_field.grid.compatible(psi.grid):
            raise ValueError("potential grid does not match wavefunction grid")
        v_field = v_field.values.real
    stepper = _grid_stepper(psi.grid, v_field, dt, units)
    return ComplexField2D(psi.grid, stepper.step(np.array(psi.values)))


# -- observers -------------------------------------------------------------------------


Observer = Callable[[int, float, ComplexField2D], None]


@dataclass
class NormMonitor:
    """Records |norm - 1| and aborts once it exceeds ``max_drift``."""

    max_drift: float = 1e-6
    times: list[float] = field(default_factory=list)
    drift: list[float] = field(default_factory=list)

    def __call__(self, step: int, t: float, psi: ComplexField2D):
        d = abs(norm2(psi) - 1.0)
        self.times.append(t)
        self.drift.append(d)
        if d > self.max_drift:
            raise PropagationAborted(f"norm drift {d:.3e} exceeds {self.max_drift:.1e}", step, t)

    @property
    def max_observed(self) -> float:
        return max(self.drift) if self.drift else 0.0


@dataclass
class EdgeMonitor:
    """Edge-to-peak density ratio over the outermost cells (periodic wrap leak detector)."""

    width: int = 2
    times: list[float] = field(default_factory=list)
    ratios: list[float] = field(default_factory=list)

    def __call__(self, step: int, t: float, psi: ComplexField2D):
        self.times.append(t)
        self.ratios.append(edge_density_ratio(psi.values, self.width))

    @property
    def max_observed(self) -> float:
        return max(self.ratios) if self.ratios else 0.0


@dataclass
class RegionMonitor:
    regions: dict[str, Rect]
    times: list[float] = field(default_factory=list)
    values: dict[str, list[float]] = field(default_factory=dict)

    def __call__(self, step: int, t: float, psi: ComplexField2D):
        self.times.append(t)
        for name, rect in self.regions.items():
            self.values.setdefault(name, []).append(region_probability(psi, rect))


@dataclass
class SnapshotWriter:
    """Dumps every observed field to ``<directory>/psi_<step>.cf2d``."""

    directory: Path
    files: list[Path] = field(default_factory=list)
    times: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.directory = Path(self.directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def __call__(self, step: int, t: float, psi: ComplexField2D):
        self.files.append(write_cf2d(self.directory / f"psi_{step:07d}.cf2d", psi))
        self.times.append(t)


@dataclass
class SnapshotSeries:
    steps: list[int]
    times: list[float]
    fields: list[ComplexField2D]

    def __len__(self):
        return len(self.times)


def propagate(
    psi0: ComplexField2D,
    v_field: np.ndarray,
    cfg: PropagationConfig,
    observers: Sequence[Observer] = (),
    units: UnitsConfig | None = None,
    keep_snapshots: bool = True,
    max_norm_drift: float = 1e-6,
) -> SnapshotSeries:
    """Run ``cfg.n_steps`` Strang steps, calling observers on step 0 and every stride.

    Raises PropagationAborted on NaN or a norm drift above ``max_norm_drift``.
    """
    units = units or UnitsConfig()
    grid = psi0.grid
    stepper = _grid_stepper(grid, v_field, cfg.dt, units)
    series = SnapshotSeries([], [], [])
    n_steps = cfg.n_steps

    def emit(step, values):
        t = step * cfg.dt
        if not np.all(np.isfinite(values)):
            raise PropagationAborted("non-finite amplitude", step, t)
        snap = ComplexField2D(grid, values.copy())
        drift = abs(norm2(snap) - 1.0)
        if drift > max_norm_drift:
            raise PropagationAborted(f"norm drift {drift:.3e} exceeds {max_norm_drift:.1e}", step, t)
        for obs in observers:
            obs(step, t, snap)
        if keep_snapshots:
            series.steps.append(step)
            series.times.append(t)
            series.fields.append(snap)

    psi = np.array(psi0.values, dtype=np.complex128)
    emit(0, psi)
    for n in range(1, n_steps + 1):
        psi = stepper.step(psi)
        if n % cfg.snapshot_stride == 0 or n == n_steps:
            emit(n, psi)
            log.debug("step %d/%d", n, n_steps)
    return series


def region_probability(psi: ComplexField2D, region: Rect) -> float:
    """Sum of |psi|^2 dx dy over nodes inside the half-open rectangle."""
    grid = psi.grid
    x, y = grid.x, grid.y
    ix = (x >= region.x_min) & (x < region.x_max)
    iy = (y >= region.y_min) & (y < region.y_max)
    if not ix.any() or not iy.any():
        return 0.0
    return float(np.sum(np.abs(psi.values[np.ix_(ix, iy)]) ** 2) * grid.cell_area)


def spectral_gradient(values: np.ndarray, grid: Grid2D) -> tuple[np.ndarray, np.ndarray]:
    """(d/dx, d/dy) by FFT, with the Nyquist mode dropped so real input gives real output."""
    workers = fft_workers()
    kx, ky = grid.kx.copy(), grid.ky.copy()
    if grid.nx % 2 == 0:
        kx[grid.nx // 2] = 0.0
    if grid.ny % 2 == 0:
        ky[grid.ny // 2] = 0.0
    f = sfft.fft2(values, workers=workers)
    gx = sfft.ifft2(1j * kx[:, None] * f, workers=workers)
    gy = sfft.ifft2(1j * ky[None, :] * f, workers=workers)
    return gx, gy


def fd4_gradient(values: np.ndarray, grid: Grid2D) -> tuple[np.ndarray, np.ndarray]:
    def d(f, axis, h):
        return (-np.roll(f, -2, axis) + 8 * np.roll(f, -1, axis) - 8 * np.roll(f, 1, axis) + np.roll(f, 2, axis)) / (12 * h)

    return d(values, 0, grid.dx), d(values, 1, grid.dy)


def current_density_2d(psi: ComplexField2D, units: UnitsConfig | None = None, method: str = "spectral"):
    """(Jx, Jy) = (hbar/m) Im[psi* grad psi]."""
    units = units or UnitsConfig()
    if method == "spectral":
        gx, gy = spectral_gradient(psi.values, psi.grid)
    elif method == "fd4":
        gx, gy = fd4_gradient(psi.values, psi.grid)
    else:
        raise ValueError(f"unknown gradient method {method!r}")
    c = units.hbar / units.mass
    conj = np.conj(psi.values)
    return c * np.imag(conj * gx), c * np.imag(conj * gy)


def mean_momentum(psi: ComplexField2D, units: UnitsConfig | None = None) -> tuple[float, float]:
    """<p_x>, <p_y> from the spectral density."""
    units = units or UnitsConfig()
    phi = np.abs(sfft.fft2(psi.values, workers=fft_workers())) ** 2
    total = phi.sum()
    kx, ky = psi.grid.kx, psi.grid.ky
    px = units.hbar * float(np.sum(phi.sum(axis=1) * kx) / total)
    py = units.hbar * float(np.sum(phi.sum(axis=0) * ky) / total)
    return px, py
