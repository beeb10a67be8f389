"""Two-level model of a particle tunneling in a symmetric 1D double well.

Levels come from matching plane waves in the wells to real exponentials in the
barrier and outside, reduced to the half-line by parity. The lowest even and
odd roots of the matching function are bracketed by a scan over
``E in (-v0, 0)`` and refined by bisection.

Sign convention: ``psi0 > 0`` everywhere and ``psi1 > 0`` on the left
(``y < 0``), so ``psi_L = (psi0 + psi1)/sqrt(2)`` sits in the left well.
"""

from __future__ import annotations

import csv
import math
import os
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from bohmguide.corefield import Grid1D, UnitsConfig, ks_distance, nodal_cdf  # noqa: F401
from bohmguide.potentials import DoubleWellParams, rasterize_potential


class InsufficientLevelsError(ValueError):
    """The well does not bind both an even and an odd state."""


class LevelSearchError(RuntimeError):
    """Bracket refinement failed; ``trace`` holds the scanned (E, g(E)) pairs."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class ComplexField1D:
    grid: Grid1D
    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.complex128)
        if vals.shape != (self.grid.n,):
            raise ValueError(f"field length {vals.shape} does not match grid size {self.grid.n}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field contains non-finite entries")
        object.__setattr__(self, "values", vals)

    @property
    def density(self) -> np.ndarray:
        return np.abs(self.values) ** 2

    def norm2(self) -> float:
        return float(np.sum(self.density) * self.grid.dy)

    def inner(self, other: ComplexField1D) -> complex:
        """<self|other> by the rectangle rule (exact for band-limited periodic data)."""
        return complex(np.vdot(self.values, other.values) * self.grid.dy)


# -- level solver ----------------------------------------------------------------------


def _half_line_coefficients(p: DoubleWellParams, energy: float, parity: int, hbar: float):
    """Barrier decay rate, well wavenumber and the well amplitudes (A, B') at y = d/2.

    Inside the well ``psi = A cos(k s) + B' sin(k s)/k`` with ``s = y - d/2``.
    """
    kappa = math.sqrt(-2 * p.mass * energy) / hbar
    k = math.sqrt(2 * p.mass * (energy + p.v0)) / hbar
    h = p.d / 2
    if parity == 0:
        amp, slope = math.cosh(kappa * h), kappa * math.sinh(kappa * h)
    else:
        amp, slope = math.sinh(kappa * h), kappa * math.cosh(kappa * h)
    return kappa, k, amp, slope


def _sin_over_k(k, s):
    # sin(k s)/k, finite as k -> 0
    return s * np.sinc(k * s / np.pi)


def matching_function(p: DoubleWellParams, energy: float, parity: int, hbar: float = 1.0) -> float:
    """psi' + kappa psi at the outer well edge; zero exactly at a bound level."""
    kappa, k, amp, slope = _half_line_coefficients(p, energy, parity, hbar)
    psi = amp * math.cos(k * p.a) + slope * float(_sin_over_k(k, p.a))
    dpsi = -amp * k * math.sin(k * p.a) + slope * math.cos(k * p.a)
    return dpsi + kappa * psi


def _lowest_root(p: DoubleWellParams, parity: int, hbar: float, n_scan: int) -> float:
    # open interval: E = 0 makes kappa vanish, E = -v0 is a removable endpoint
    energies = np.linspace(-p.v0, 0.0, n_scan + 2)[1:-1]
    values = np.array([matching_function(p, e, parity, hbar) for e in energies])
    sign = np.sign(values)
    if np.any(sign == 0):
        return float(energies[np.flatnonzero(sign == 0)[0]])
    flips = np.flatnonzero(sign[:-1] != sign[1:])
    if flips.size == 0:
        kind = "even" if parity == 0 else "odd"
        raise InsufficientLevelsError(f"no bound {kind} level for {p}")
    i = flips[0]
    lo, hi = float(energies[i]), float(energies[i + 1])
    g_lo = values[i]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        g_mid = matching_function(p, mid, parity, hbar)
        if g_mid == 0:
            return mid
        if np.sign(g_mid) == np.sign(g_lo):
            lo, g_lo = mid, g_mid
        else:
            hi = mid
    root = 0.5 * (lo + hi)
    if abs(hi - lo) > 1e-9 * max(1.0, abs(root)):
        raise LevelSearchError(f"bisection did not converge near E={root}", list(zip(energies, values)))
    return root


@dataclass(frozen=True)
class _Profile:
    """Half-line (y >= 0) eigenfunction pieces for one parity, normalized on the full line."""

    energy: float
    parity: int
    kappa: float
    k: float
    amp: float
    slope: float
    outer: float
    scale: float

    def evaluate(self, y, h: float, a: float):
        ay = np.abs(np.asarray(y, dtype=float))
        s = np.clip(ay - h, 0.0, a)
        barrier = np.cosh(self.kappa * ay) if self.parity == 0 else np.sinh(self.kappa * ay)
        well = self.amp * np.cos(self.k * s) + self.slope * _sin_over_k(self.k, s)
        tail = self.outer * np.exp(-self.kappa * np.maximum(ay - h - a, 0.0))
        f = np.where(ay < h, barrier, np.where(ay <= h + a, well, tail))
        return self.scale * f

    def derivative(self, y, h: float, a: float):
        """d/d|y| of the half-line profile."""
        ay = np.abs(np.asarray(y, dtype=float))
        s = np.clip(ay - h, 0.0, a)
        kap = self.kappa
        barrier = kap * (np.sinh(kap * ay) if self.parity == 0 else np.cosh(kap * ay))
        well = -self.amp * self.k * np.sin(self.k * s) + self.slope * np.cos(self.k * s)
        tail = -kap * self.outer * np.exp(-kap * np.maximum(ay - h - a, 0.0))
        f = np.where(ay < h, barrier, np.where(ay <= h + a, well, tail))
        return self.scale * f


def _build_profile(p: DoubleWellParams, energy: float, parity: int, hbar: float) -> _Profile:
    kappa, k, amp, slope = _half_line_coefficients(p, energy, parity, hbar)
    h, a = p.d / 2, p.a
    outer = amp * math.cos(k * a) + slope * float(_sin_over_k(k, a))
    # closed-form integrals of f^2 over each half-line piece
    sh2 = math.sinh(2 * kappa * h) / (4 * kappa)
    barrier = sh2 + h / 2 if parity == 0 else sh2 - h / 2
    if k > 0:
        b = slope / k
        well = (
            amp**2 * (a / 2 + math.sin(2 * k * a) / (4 * k))
            + b**2 * (a / 2 - math.sin(2 * k * a) / (4 * k))
            + amp * b * (1 - math.cos(2 * k * a)) / (2 * k)
        )
    else:
        well = amp**2 * a + amp * slope * a**2 + slope**2 * a**3 / 3
    tail = outer**2 / (2 * kappa)
    total = 2 * (barrier + well + tail)
    return _Profile(energy, parity, kappa, k, amp, slope, outer, 1.0 / math.sqrt(total))


@dataclass(frozen=True)
class TwoLevelState:
    """Lowest even and odd levels of the double well and their eigenfunctions."""

    params: DoubleWellParams
    units: UnitsConfig
    e0: float
    e1: float
    l0: float
    l1: float
    omega_tunnel: float
    _even: _Profile = field(repr=False)
    _odd: _Profile = field(repr=False)

    @property
    def tunnel_period(self) -> float:
        """Period of P_left(t) = cos^2(omega t): pi/|omega|."""
        return math.pi / abs(self.omega_tunnel) if self.omega_tunnel != 0 else math.inf

    def psi0(self, y):
        return self._even.evaluate(y, self.params.d / 2, self.params.a)

    def psi1(self, y):
        y = np.asarray(y, dtype=float)
        return -np.sign(y) * self._odd.evaluate(y, self.params.d / 2, self.params.a)

    def dpsi0(self, y):
        y = np.asarray(y, dtype=float)
        return np.sign(y) * self._even.derivative(y, self.params.d / 2, self.params.a)

    def dpsi1(self, y):
        return -self._odd.derivative(y, self.params.d / 2, self.params.a)

    def default_grid(self, n: int = 4096, margin_decays: float = 30.0) -> Grid1D:
        """Symmetric grid reaching ``margin_decays`` outer decay lengths past the wells."""
        reach = self.params.d / 2 + self.params.a + margin_decays * max(self.l0, self.l1)
        return Grid1D(n, 2 * reach, -reach)


def solve_two_levels(p: DoubleWellParams, units: UnitsConfig | None = None, n_scan: int = 4000) -> TwoLevelState:
    units = units or UnitsConfig(mass=p.mass)
    if units.mass != p.mass:
        raise ValueError(f"mass mismatch: params {p.mass}, units {units.mass}")
    hbar = units.hbar
    e0 = _lowest_root(p, 0, hbar, n_scan)
    e1 = _lowest_root(p, 1, hbar, n_scan)
    even = _build_profile(p, e0, 0, hbar)
    odd = _build_profile(p, e1, 1, hbar)
    l0 = hbar / math.sqrt(-2 * p.mass * e0)
    l1 = hbar / math.sqrt(-2 * p.mass * e1)
    return TwoLevelState(p, units, e0, e1, l0, l1, (e0 - e1) / (2 * hbar), even, odd)


# -- two-level dynamics ----------------------------------------------------------------


def eigenfunctions_on(s: TwoLevelState, grid: Grid1D) -> tuple[ComplexField1D, ComplexField1D]:
    return (
        ComplexField1D(grid, s.psi0(grid.y), normalized=True),
        ComplexField1D(grid, s.psi1(grid.y), normalized=True),
    )


def left_right_states(s: TwoLevelState, grid: Grid1D | None = None) -> tuple[ComplexField1D, ComplexField1D]:
    """(psi_L, psi_R) = (psi0 +- psi1)/sqrt(2)."""
    grid = grid or s.default_grid()
    y = grid.y
    p0, p1 = s.psi0(y), s.psi1(y)
    r2 = math.sqrt(2.0)
    return (
        ComplexField1D(grid, (p0 + p1) / r2, normalized=True),
        ComplexField1D(grid, (p0 - p1) / r2, normalized=True),
    )


def two_level_coefficients(s: TwoLevelState, t: float) -> tuple[complex, complex]:
    """Amplitudes of (psi0, psi1) at time t, starting from psi_L."""
    hbar = s.units.hbar
    r2 = math.sqrt(2.0)
    return np.exp(-1j * s.e0 * t / hbar) / r2, np.exp(-1j * s.e1 * t / hbar) / r2


def evolve_two_level(s: TwoLevelState, t: float, grid: Grid1D | None = None, form: str = "lr") -> ComplexField1D:
    """psi(t) from psi(0) = psi_L, either in the left/right form or the eigenbasis form."""
    grid = grid or s.default_grid()
    y = grid.y
    if form == "lr":
        hbar = s.units.hbar
        w = s.omega_tunnel
        r2 = math.sqrt(2.0)
        p0, p1 = s.psi0(y), s.psi1(y)
        left, right = (p0 + p1) / r2, (p0 - p1) / r2
        phase = np.exp(-1j * (s.e0 + s.e1) * t / (2 * hbar))
        values = phase * (math.cos(w * t) * left - 1j * math.sin(w * t) * right)
    elif form == "eigen":
        c0, c1 = two_level_coefficients(s, t)
        values = c0 * s.psi0(y) + c1 * s.psi1(y)
    else:
        raise ValueError(f"form must be 'lr' or 'eigen', got {form!r}")
    return ComplexField1D(grid, values, normalized=True)


def left_population(s: TwoLevelState, psi: ComplexField1D) -> float:
    """|<psi_L|psi>|^2."""
    left, _ = left_right_states(s, psi.grid)
    return abs(left.inner(psi)) ** 2


def region_probabilities(p: DoubleWellParams, psi: ComplexField1D) -> dict[str, float]:
    """Probability in the left well, right well, barrier and outside, as half-open node sets."""
    y = psi.grid.y
    rho = psi.density * psi.grid.dy
    h = p.d / 2
    left = (y >= -h - p.a) & (y < -h)
    right = (y >= h) & (y < h + p.a)
    barrier = (y >= -h) & (y < h)
    outside = ~(left | right | barrier)
    return {
        "left": float(rho[left].sum()),
        "right": float(rho[right].sum()),
        "barrier": float(rho[barrier].sum()),
        "outside": float(rho[outside].sum()),
    }


# -- current and velocity --------------------------------------------------------------


def derivative_4th(values: np.ndarray, dy: float) -> np.ndarray:
    """Fourth-order centered first derivative with periodic wrap."""
    if values.shape[-1] < 5:
        raise ValueError("need at least 5 grid points for a 4th-order stencil")
    f = values
    return (
        -np.roll(f, -2, axis=-1) + 8 * np.roll(f, -1, axis=-1) - 8 * np.roll(f, 1, axis=-1) + np.roll(f, 2, axis=-1)
    ) / (12 * dy)


def current_1d(psi: ComplexField1D, units: UnitsConfig | None = None) -> np.ndarray:
    """J = (hbar/m) Im[psi* d_y psi] with a 4th-order centered difference."""
    units = units or UnitsConfig()
    if psi.grid.n < 5:
        raise ValueError(f"grid too small for current_1d: {psi.grid.n} points")
    dpsi = derivative_4th(psi.values, psi.grid.dy)
    return units.hbar / units.mass * np.imag(np.conj(psi.values) * dpsi)


def dbb_velocity_1d(psi: ComplexField1D, units: UnitsConfig | None = None, rho_floor: float = 1e-12) -> np.ma.MaskedArray:
    """v = J/|psi|^2, masked where |psi|^2 < rho_floor * max|psi|^2."""
    rho = psi.density
    masked = rho < rho_floor * rho.max()
    j = current_1d(psi, units)
    v = np.divide(j, rho, out=np.zeros_like(j), where=~masked)
    return np.ma.MaskedArray(v, mask=masked)


def barrier_amplitude_conventions(s: TwoLevelState) -> dict[str, float]:
    """Two readings of |psi(0,0)|^2 for the barrier current estimate.

    ``"initial_state"`` is |psi_L(0)|^2; ``"eigenfunction"`` is psi0(0)^2, the
    squared cosh prefactor of the even level in the barrier.
    """
    p0 = float(s.psi0(0.0))
    p1 = float(s.psi1(0.0))
    return {"initial_state": (p0 + p1) ** 2 / 2, "eigenfunction": p0**2}


def barrier_current_estimate(s: TwoLevelState, rho00: float, t: float, units: UnitsConfig | None = None) -> float:
    """Deep-well closed form rho00 (hbar/m) sin((E1-E0) t/hbar) / (2 L_tunnel)."""
    units = units or s.units
    if not s.params.is_deep(units):
        warnings.warn("double well is outside the deep-well regime; estimate unreliable", RuntimeWarning, stacklevel=2)
    l_tunnel = 0.5 * (s.l0 + s.l1)
    return rho00 * units.hbar / units.mass * math.sin((s.e1 - s.e0) * t / units.hbar) / (2 * l_tunnel)


# -- trajectories ----------------------------------------------------------------------


class Termination(str, Enum):
    COMPLETED = "completed"
    LEFT_DOMAIN = "left_domain"
    ENTERED_MASKED_REGION = "entered_masked_region"


@dataclass
class Trajectory1D:
    seed: float
    t: np.ndarray
    y: np.ndarray
    termination: Termination = Termination.COMPLETED

    def write_csv(self, path: str | os.PathLike) -> Path:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "y"])
            for ti, yi in zip(self.t, self.y):
                w.writerow([repr(float(ti)), repr(float(yi))])
        os.replace(tmp, path)
        return path


def integrate_trajectories_1d(
    s: TwoLevelState,
    seeds,
    t_end: float,
    dt: float,
    grid: Grid1D | None = None,
    t_start: float = 0.0,
    rho_floor: float = 1e-12,
    store_every: int = 1,
) -> list[Trajectory1D]:
    """RK4 on dy/dt = v(y, t) with v from dbb_velocity_1d on the analytic psi(t).

    The velocity grid is linearly interpolated to particle positions. A
    particle that leaves the grid or steps onto a masked node is frozen and
    flagged.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    grid = grid or s.default_grid(n=16384)
    seeds = np.atleast_1d(np.asarray(seeds, dtype=float))
    y_nodes = grid.y
    lo, hi = y_nodes[0], y_nodes[-1]
    if np.any((seeds < lo) | (seeds > hi)):
        raise ValueError("seeds must lie within the grid")
    p0, p1 = s.psi0(y_nodes), s.psi1(y_nodes)

    def velocity(t, y):
        c0, c1 = two_level_coefficients(s, t)
        v = dbb_velocity_1d(ComplexField1D(grid, c0 * p0 + c1 * p1), s.units, rho_floor)
        vals = np.interp(y, y_nodes, v.filled(0.0))
        bad = np.interp(y, y_nodes, np.ma.getmaskarray(v).astype(float)) > 0
        return vals, bad

    n_steps = int(math.ceil((t_end - t_start) / dt - 1e-9))
    h = (t_end - t_start) / n_steps
    y = seeds.copy()
    alive = np.ones(y.shape, dtype=bool)
    codes = list(Termination)
    status = np.zeros(y.shape, dtype=int)
    times = [t_start]
    path = [y.copy()]
    t = t_start
    for n in range(n_steps):
        k1, b1 = velocity(t, y)
        k2, b2 = velocity(t + h / 2, y + h / 2 * k1)
        k3, b3 = velocity(t + h / 2, y + h / 2 * k2)
        k4, b4 = velocity(t + h, y + h * k3)
        y_new = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        masked = alive & (b1 | b2 | b3 | b4)
        out = alive & ((y_new < lo) | (y_new > hi))
        status[masked] = codes.index(Termination.ENTERED_MASKED_REGION)
        status[out & ~masked] = codes.index(Termination.LEFT_DOMAIN)
        alive &= ~(masked | out)
        y = np.where(alive, y_new, y)
        t = t_start + (n + 1) * h
        if (n + 1) % store_every == 0 or n + 1 == n_steps:
            times.append(t)
            path.append(y.copy())
    times = np.array(times)
    path = np.array(path)
    trajs = []
    for i, seed in enumerate(seeds):
        trajs.append(Trajectory1D(float(seed), times, path[:, i], codes[status[i]]))
    return trajs


def sample_from_density(y_nodes: np.ndarray, density: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF samples from a nodal density, uniform within each node's cell."""
    dy = y_nodes[1] - y_nodes[0]
    w = np.asarray(density, dtype=float)
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, rng.random(n), side="right")
    idx = np.minimum(idx, len(y_nodes) - 1)
    return y_nodes[idx] + (rng.random(n) - 0.5) * dy


# -- direct propagation ----------------------------------------------------------------


def propagate_split_operator_1d(
    psi0: ComplexField1D,
    p: DoubleWellParams,
    dt: float,
    n_steps: int,
    units: UnitsConfig | None = None,
    every: int = 1,
    observer=None,
) -> ComplexField1D:
    """Strang split-operator evolution in the sharp double well.

    ``observer(step, t, values)`` is called every ``every`` steps.
    """
    from bohmguide.tdse2d import SplitOperator

    units = units or UnitsConfig(mass=p.mass)
    v = rasterize_potential(p, psi0.grid)
    stepper = SplitOperator(v, (psi0.grid.k,), dt, units)
    psi = np.array(psi0.values, dtype=np.complex128)
    for n in range(1, n_steps + 1):
        psi = stepper.step(psi)
        if observer is not None and n % every == 0:
            observer(n, n * dt, psi)
    return ComplexField1D(psi0.grid, psi)
