"""Bohmian velocity fields, trajectory integration and equivariance checks in 2D.

Velocities are computed once per stored snapshot and interpolated: bilinear
in space (periodic wrap), linear in time. Cells whose density falls below
``rho_floor`` times the frame maximum are masked; a trajectory that steps
onto a masked cell stops there with a flag instead of extrapolating.
"""

from __future__ import annotations

import csv
import os
from collections import OrderedDict
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from bohmguide.corefield import ComplexField2D, Grid2D, UnitsConfig, ks_distance, nodal_cdf, read_cf2d
from bohmguide.potentials import WaveguideGeometry
from bohmguide.tdse2d import current_density_2d

DEFAULT_RHO_FLOOR = 1e-12


class RangeError(ValueError):
    """Query outside the time span or spatial extent of a velocity series."""


class Termination(str, Enum):
    COMPLETED = "completed"
    LEFT_DOMAIN = "left_domain"
    ENTERED_MASKED_REGION = "entered_masked_region"


@dataclass(frozen=True)
class VelocityFrame:
    vx: np.ndarray
    vy: np.ndarray
    density: np.ndarray
    mask: np.ndarray


def velocity_from_snapshot(
    psi: ComplexField2D,
    units: UnitsConfig | None = None,
    rho_floor: float = DEFAULT_RHO_FLOOR,
    method: str = "spectral",
) -> VelocityFrame:
    """v = J/|psi|^2 on every cell above the density floor; masked cells hold 0."""
    rho = psi.density
    mask = rho < rho_floor * rho.max()
    jx, jy = current_density_2d(psi, units, method=method)
    keep = ~mask
    vx = np.divide(jx, rho, out=np.zeros_like(jx), where=keep)
    vy = np.divide(jy, rho, out=np.zeros_like(jy), where=keep)
    return VelocityFrame(vx, vy, rho, mask)


class VelocityFieldSeries:
    """Time-ordered velocity frames on one grid, built lazily from a frame loader.

    ``loader(i)`` returns a VelocityFrame for ``timestamps[i]``. A small LRU
    cache keeps the bracketing frames of a monotone sweep in memory.
    """

    def __init__(self, grid: Grid2D, timestamps, loader: Callable[[int], VelocityFrame], cache_size: int = 4):
        ts = np.asarray(timestamps, dtype=float)
        if ts.ndim != 1 or ts.size < 1:
            raise ValueError("need at least one timestamp")
        if np.any(np.diff(ts) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        self.grid = grid
        self.timestamps = ts
        self._loader = loader
        self._cache: OrderedDict[int, VelocityFrame] = OrderedDict()
        self._cache_size = max(2, cache_size)

    def __len__(self):
        return self.timestamps.size

    @property
    def t_first(self) -> float:
        return float(self.timestamps[0])

    @property
    def t_last(self) -> float:
        return float(self.timestamps[-1])

    @property
    def spacing(self) -> float:
        return float(np.min(np.diff(self.timestamps))) if len(self) > 1 else np.inf

    def frame(self, i: int) -> VelocityFrame:
        if i in self._cache:
            self._cache.move_to_end(i)
            return self._cache[i]
        fr = self._loader(i)
        if fr.vx.shape != self.grid.shape:
            raise ValueError(f"frame {i} has shape {fr.vx.shape}, grid is {self.grid.shape}")
        self._cache[i] = fr
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return fr

    @classmethod
    def from_snapshots(
        cls,
        times,
        fields: Sequence[ComplexField2D],
        units: UnitsConfig | None = None,
        rho_floor: float = DEFAULT_RHO_FLOOR,
        method: str = "spectral",
    ) -> VelocityFieldSeries:
        if len(times) != len(fields):
            raise ValueError("times and fields differ in length")
        grid = fields[0].grid
        for f in fields:
            if not f.grid.compatible(grid):
                raise ValueError("all snapshots must share one grid")
        return cls(grid, times, lambda i: velocity_from_snapshot(fields[i], units, rho_floor, method))

    @classmethod
    def from_files(
        cls,
        times,
        paths: Sequence[str | os.PathLike],
        units: UnitsConfig | None = None,
        rho_floor: float = DEFAULT_RHO_FLOOR,
        method: str = "spectral",
    ) -> VelocityFieldSeries:
        """Series backed by CF2D snapshot files, read on demand."""
        if len(times) != len(paths):
            raise ValueError("times and paths differ in length")
        grid = read_cf2d(paths[0]).grid
        return cls(grid, times, lambda i: velocity_from_snapshot(read_cf2d(paths[i]), units, rho_floor, method))

    @classmethod
    def from_arrays(cls, grid: Grid2D, times, vx, vy, density=None, mask=None) -> VelocityFieldSeries:
        """Series from explicit arrays of shape (n_times, nx, ny); unmasked unless told otherwise."""
        vx = np.asarray(vx, dtype=float)
        vy = np.asarray(vy, dtype=float)
        rho = np.ones_like(vx) if density is None else np.asarray(density, dtype=float)
        m = np.zeros(vx.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        return cls(grid, times, lambda i: VelocityFrame(vx[i], vy[i], rho[i], m[i]), cache_size=len(times))


# -- interpolation ---------------------------------------------------------------------


def _cell_coords(grid: Grid2D, x: np.ndarray, y: np.ndarray):
    fx = (x - grid.x0_min) / grid.dx
    fy = (y - grid.y0_min) / grid.dy
    # snap queries that sit on a node to within round-off
    rx, ry = np.round(fx), np.round(fy)
    fx = np.where(np.abs(fx - rx) < 1e-9, rx, fx)
    fy = np.where(np.abs(fy - ry) < 1e-9, ry, fy)
    ix = np.floor(fx).astype(int)
    iy = np.floor(fy).astype(int)
    return ix, iy, fx - ix, fy - iy


def _bilinear(frame: VelocityFrame, grid: Grid2D, ix, iy, wx, wy):
    ix1 = (ix + 1) % grid.nx
    iy1 = (iy + 1) % grid.ny
    w00 = (1 - wx) * (1 - wy)
    w10 = wx * (1 - wy)
    w01 = (1 - wx) * wy
    w11 = wx * wy
    out = []
    for a in (frame.vx, frame.vy):
        out.append(w00 * a[ix, iy] + w10 * a[ix1, iy] + w01 * a[ix, iy1] + w11 * a[ix1, iy1])
    m = frame.mask
    masked = (
        (m[ix, iy] & (w00 > 0)) | (m[ix1, iy] & (w10 > 0)) | (m[ix, iy1] & (w01 > 0)) | (m[ix1, iy1] & (w11 > 0))
    )
    return out[0], out[1], masked


def inside_domain(grid: Grid2D, x, y):
    return (x >= grid.x0_min) & (x < grid.x_max) & (y >= grid.y0_min) & (y < grid.y_max)


def sample_velocity(series: VelocityFieldSeries, t: float, points) -> tuple[np.ndarray, np.ndarray]:
    """Velocities at ``points`` (shape (n, 2) or (2,)) and a per-point masked flag.

    Raises RangeError for t outside the series span or points outside the grid.
    """
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    ts = series.timestamps
    span = max(abs(ts[0]), abs(ts[-1]), 1.0) * 1e-12
    if not (ts[0] - span <= t <= ts[-1] + span):
        raise RangeError(f"t={t} outside [{ts[0]}, {ts[-1]}]")
    x, y = pts[:, 0], pts[:, 1]
    grid = series.grid
    if not np.all(inside_domain(grid, x, y)):
        raise RangeError("query point outside the grid")
    v, masked = _sample_unchecked(series, t, x, y)
    if single:
        return v[0], masked[0]
    return v, masked


def _sample_unchecked(series: VelocityFieldSeries, t: float, x, y):
    ts = series.timestamps
    grid = series.grid
    ix, iy, wx, wy = _cell_coords(grid, x, y)
    ix %= grid.nx
    iy %= grid.ny
    if len(ts) == 1:
        vx, vy, masked = _bilinear(series.frame(0), grid, ix, iy, wx, wy)
        return np.stack([vx, vy], axis=-1), masked
    j = int(np.clip(np.searchsorted(ts, t, side="right") - 1, 0, len(ts) - 2))
    w = (t - ts[j]) / (ts[j + 1] - ts[j])
    w = min(max(w, 0.0), 1.0)
    vx0, vy0, m0 = _bilinear(series.frame(j), grid, ix, iy, wx, wy)
    if w == 0.0:
        return np.stack([vx0, vy0], axis=-1), m0
    vx1, vy1, m1 = _bilinear(series.frame(j + 1), grid, ix, iy, wx, wy)
    if w == 1.0:
        return np.stack([vx1, vy1], axis=-1), m1
    vx = (1 - w) * vx0 + w * vx1
    vy = (1 - w) * vy0 + w * vy1
    return np.stack([vx, vy], axis=-1), m0 | m1


# -- trajectories ----------------------------------------------------------------------


@dataclass
class Trajectory:
    """Samples (t, x, y) in increasing time order, plus how the integration ended."""

    samples: np.ndarray
    termination: Termination = Termination.COMPLETED
    direction: int = 1

    def __post_init__(self):
        self.termination = Termination(self.termination)

    @property
    def t(self) -> np.ndarray:
        return self.samples[:, 0]

    @property
    def x(self) -> np.ndarray:
        return self.samples[:, 1]

    @property
    def y(self) -> np.ndarray:
        return self.samples[:, 2]

    @property
    def start(self) -> np.ndarray:
        """Position at the integration start (the seed)."""
        row = self.samples[0] if self.direction > 0 else self.samples[-1]
        return row[1:]

    @property
    def end(self) -> np.ndarray:
        """Position where the integration stopped."""
        row = self.samples[-1] if self.direction > 0 else self.samples[0]
        return row[1:]

    def write_csv(self, path: str | os.PathLike) -> Path:
        """CSV ``t,x,y,flag``; the row where integration stopped carries the termination flag."""
        path = Path(path)
        stop_row = len(self.samples) - 1 if self.direction > 0 else 0
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "y", "flag"])
            for i, (t, x, y) in enumerate(self.samples):
                flag = self.termination.value if i == stop_row else "ok"
                w.writerow([repr(float(t)), repr(float(x)), repr(float(y)), flag])
        os.replace(tmp, path)
        return path


def read_trajectory_csv(path: str | os.PathLike) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    samples = np.array([[float(r["t"]), float(r["x"]), float(r["y"])] for r in rows])
    flags = [r["flag"] for r in rows]
    if flags[-1] != "ok":
        return Trajectory(samples, Termination(flags[-1]), 1)
    return Trajectory(samples, Termination(flags[0]), -1)


VelocityFn = Callable[[float, np.ndarray], tuple[np.ndarray, np.ndarray]]


def rk4_advect(
    velocity: VelocityFn,
    seeds,
    t_start: float,
    t_end: float,
    dt: float,
    inside: Callable[[np.ndarray], np.ndarray] | None = None,
) -> list[Trajectory]:
    """Classic RK4 for dr/dt = v(r, t), vectorized over seeds; runs backward if t_end < t_start.

    ``velocity(t, pts)`` returns ``(v, masked)``. A seed stops at its last good
    position when a stage lands outside ``inside`` or on a masked cell.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    pts = np.atleast_2d(np.asarray(seeds, dtype=float)).copy()
    n = pts.shape[0]
    direction = 1 if t_end >= t_start else -1
    span = abs(t_end - t_start)
    n_steps = max(1, int(np.ceil(span / dt - 1e-9))) if span > 0 else 0
    h = direction * span / n_steps if n_steps else 0.0
    inside = inside or (lambda p: np.ones(p.shape[0], dtype=bool))

    alive = np.ones(n, dtype=bool)
    codes = list(Termination)
    status = np.zeros(n, dtype=int)
    times = np.empty(n_steps + 1)
    path = np.empty((n_steps + 1, n, 2))
    last = np.zeros(n, dtype=int)
    times[0] = t_start
    path[0] = pts

    def stage(t, p, active):
        ok = inside(p) & active
        v = np.zeros_like(p)
        bad_domain = active & ~ok
        masked = np.zeros(p.shape[0], dtype=bool)
        if ok.any():
            v_ok, m_ok = velocity(t, p[ok])
            v[ok] = v_ok
            masked[ok] = m_ok
        return v, bad_domain, masked & active

    for k in range(n_steps):
        t = t_start + k * h
        act = alive.copy()
        k1, o1, m1 = stage(t, pts, act)
        k2, o2, m2 = stage(t + h / 2, pts + h / 2 * k1, act)
        k3, o3, m3 = stage(t + h / 2, pts + h / 2 * k2, act)
        k4, o4, m4 = stage(t + h, pts + h * k3, act)
        new = pts + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        masked = m1 | m2 | m3 | m4
        out = (o1 | o2 | o3 | o4 | (act & ~inside(new))) & ~masked
        status[masked] = codes.index(Termination.ENTERED_MASKED_REGION)
        status[out] = codes.index(Termination.LEFT_DOMAIN)
        alive &= ~(masked | out)
        pts = np.where(alive[:, None], new, pts)
        times[k + 1] = t_start + (k + 1) * h
        path[k + 1] = pts
        last[alive] = k + 1
        if not alive.any():
            times = times[: k + 2]
            path = path[: k + 2]
            break

    trajs = []
    for i in range(n):
        m = last[i] + 1
        samples = np.column_stack([times[:m], path[:m, i, 0], path[:m, i, 1]])
        if direction < 0:
            samples = samples[::-1].copy()
        trajs.append(Trajectory(samples, codes[status[i]], direction))
    return trajs


def default_dt_traj(series: VelocityFieldSeries) -> float:
    """Snapshot spacing / 10."""
    return series.spacing / 10 if len(series) > 1 else 1e-3


def _series_velocity(series: VelocityFieldSeries) -> VelocityFn:
    lo, hi = series.t_first, series.t_last

    def velocity(t, p):
        return _sample_unchecked(series, min(max(t, lo), hi), p[:, 0], p[:, 1])

    return velocity


def integrate_batch(series: VelocityFieldSeries, seeds, t_start: float, t_end: float, dt_traj: float | None = None):
    for t in (t_start, t_end):
        if not (series.t_first - 1e-12 <= t <= series.t_last + 1e-12):
            raise RangeError(f"t={t} outside series span [{series.t_first}, {series.t_last}]")
    dt_traj = dt_traj or default_dt_traj(series)
    grid = series.grid
    return rk4_advect(
        _series_velocity(series),
        seeds,
        t_start,
        t_end,
        dt_traj,
        inside=lambda p: inside_domain(grid, p[:, 0], p[:, 1]),
    )


def integrate_forward(series, seed, t_start: float, t_end: float, dt_traj: float | None = None):
    """Forward RK4 from ``seed`` (one (x, y) or an (n, 2) batch). Returns one Trajectory or a list."""
    if t_end < t_start:
        raise ValueError("forward integration needs t_end >= t_start")
    seeds = np.asarray(seed, dtype=float)
    trajs = integrate_batch(series, seeds, t_start, t_end, dt_traj)
    return trajs[0] if seeds.ndim == 1 else trajs


def integrate_backward(series, seed, t_end: float, t_start: float, dt_traj: float | None = None):
    """Integrate from ``t_end`` down to ``t_start``; samples are reported in forward order."""
    if t_start > t_end:
        raise ValueError("backward integration needs t_start <= t_end")
    seeds = np.asarray(seed, dtype=float)
    trajs = integrate_batch(series, seeds, t_end, t_start, dt_traj)
    return trajs[0] if seeds.ndim == 1 else trajs


# -- seeds -----------------------------------------------------------------------------


def sample_positions(density: np.ndarray, grid: Grid2D, n: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draws from a nodal density, jittered uniformly over each node's cell."""
    w = np.asarray(density, dtype=float).ravel()
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    flat = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), w.size - 1)
    ix, iy = np.unravel_index(flat, grid.shape)
    jitter = rng.random((n, 2)) - 0.5
    x = grid.x0_min + (ix + jitter[:, 0]) * grid.dx
    y = grid.y0_min + (iy + jitter[:, 1]) * grid.dy
    # keep draws on the first node's cell inside the grid
    x = np.clip(x, grid.x0_min, np.nextafter(grid.x_max, -np.inf))
    y = np.clip(y, grid.y0_min, np.nextafter(grid.y_max, -np.inf))
    return np.column_stack([x, y])


def auxiliary_seed_grid(g: WaveguideGeometry, n_across: int = 8, x_stations: Sequence[float] = (10.0, 15.0, 20.0)) -> np.ndarray:
    """Seeds spaced evenly across the auxiliary-guide width (cell centres) at each x station."""
    y_lo = -g.d / 2 - g.b
    ys = y_lo + g.b * (np.arange(n_across) + 0.5) / n_across
    return np.array([[x, y] for x in x_stations for y in ys])


# -- equivariance ----------------------------------------------------------------------


@dataclass
class EquivarianceReport:
    n_particles: int
    n_completed: int
    t_check: float
    ks_x: float
    ks_y: float
    chi2: float
    dof: int

    def as_dict(self) -> dict:
        return {
            "n_particles": self.n_particles,
            "n_completed": self.n_completed,
            "t_check": self.t_check,
            "ks_x": self.ks_x,
            "ks_y": self.ks_y,
            "chi2": self.chi2,
            "dof": self.dof,
        }

    def to_text(self) -> str:
        return "".join(f"{k} = {v!r}\n" for k, v in self.as_dict().items())


def _frame_at(series: VelocityFieldSeries, t: float) -> np.ndarray:
    ts = series.timestamps
    j = int(np.argmin(np.abs(ts - t)))
    if abs(ts[j] - t) > 1e-9 * max(1.0, abs(t)):
        raise RangeError(f"no stored frame at t={t}")
    return series.frame(j).density


def marginal_ks(positions: np.ndarray, density: np.ndarray, grid: Grid2D) -> tuple[float, float]:
    cdf_x = nodal_cdf(grid.x, density.sum(axis=1))
    cdf_y = nodal_cdf(grid.y, density.sum(axis=0))
    return ks_distance(positions[:, 0], cdf_x), ks_distance(positions[:, 1], cdf_y)


def coarse_chi_square(positions: np.ndarray, density: np.ndarray, grid: Grid2D, block: int = 16, min_expected: float = 5.0):
    """Chi-square of counts in block x block node groups against the density, pooling sparse blocks."""
    n = positions.shape[0]
    bx = grid.nx // block
    by = grid.ny // block
    p = density[: bx * block, : by * block].reshape(bx, block, by, block).sum(axis=(1, 3))
    p = p / density.sum()
    ix = np.clip(((positions[:, 0] - grid.x0_min) / grid.dx + 0.5).astype(int) // block, 0, bx - 1)
    iy = np.clip(((positions[:, 1] - grid.y0_min) / grid.dy + 0.5).astype(int) // block, 0, by - 1)
    counts = np.zeros((bx, by))
    np.add.at(counts, (ix, iy), 1)
    expected = n * p
    big = expected >= min_expected
    obs = np.append(counts[big], counts[~big].sum())
    exp = np.append(expected[big], expected[~big].sum())
    keep = exp > 0
    chi2 = float(np.sum((obs[keep] - exp[keep]) ** 2 / exp[keep]))
    return chi2, int(keep.sum() - 1)


def equivariance_test(
    series: VelocityFieldSeries,
    n_particles: int,
    t_check: float,
    rng: np.random.Generator | int = 0,
    dt_traj: float | None = None,
    t_start: float | None = None,
) -> EquivarianceReport:
    """Sample |psi(t_start)|^2, advect to t_check, compare with |psi(t_check)|^2."""
    rng = np.random.default_rng(rng)
    t0 = series.t_first if t_start is None else t_start
    rho0 = _frame_at(series, t0)
    seeds = sample_positions(rho0, series.grid, n_particles, rng)
    if t_check == t0:
        final = seeds
        n_done = n_particles
    else:
        trajs = integrate_batch(series, seeds, t0, t_check, dt_traj)
        done = [tr for tr in trajs if tr.termination == Termination.COMPLETED]
        final = np.array([tr.end for tr in done]).reshape(-1, 2)
        n_done = len(done)
    rho = _frame_at(series, t_check)
    ks_x, ks_y = marginal_ks(final, rho, series.grid)
    chi2, dof = coarse_chi_square(final, rho, series.grid)
    return EquivarianceReport(n_particles, n_done, float(t_check), ks_x, ks_y, chi2, dof)
