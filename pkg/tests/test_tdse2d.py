import math

import numpy as np
import pytest

from bohmguide.corefield import ComplexField2D, Grid1D, UnitsConfig, make_grid, norm2, read_cf2d
from bohmguide.potentials import Rect, WaveguideGeometry, rasterize_potential
from bohmguide.tdse2d import (
    EdgeMonitor,
    NormMonitor,
    PropagationAborted,
    PropagationConfig,
    RegionMonitor,
    SnapshotWriter,
    SplitOperator,
    WavepacketParams,
    current_density_2d,
    initial_wavepacket,
    mean_momentum,
    propagate,
    region_probability,
    spectral_gradient,
    split_step,
)
from oracles import coherent_state_1d, free_gaussian_1d, free_gaussian_width


@pytest.fixture
def small_grid():
    return make_grid(128, 96, 32.0, 24.0, -16.0, -12.0)


def packet(grid, x0=-3.0, y0=1.0, sigma=0.8, p0=2.0):
    return initial_wavepacket(WavepacketParams(x0, y0, sigma, p0), grid)


def test_config_validation():
    with pytest.raises(ValueError):
        PropagationConfig(dt=-1.0)
    with pytest.raises(ValueError):
        PropagationConfig(dt=0.1, t_final=0.01)
    with pytest.raises(ValueError):
        PropagationConfig(snapshot_stride=0)
    with pytest.raises(ValueError):
        WavepacketParams(sigma=0.0)
    assert PropagationConfig(dt=5e-4, t_final=5.0).n_steps == 10_000
    assert PropagationConfig(dt=0.3, t_final=1.0).n_steps == 4


def test_published_packet_peak_and_norm():
    grid = make_grid(768, 256, 120.0, 48.0, -60.0, -13.0)
    psi = initial_wavepacket(WavepacketParams(), grid)
    assert abs(norm2(psi) - 1) < 1e-12
    ix, iy = np.unravel_index(np.argmax(psi.density), grid.shape)
    assert abs(grid.x[ix] + 12.5) <= grid.dx and abs(grid.y[iy] - 10.5) <= grid.dy


def test_zero_momentum_packet_is_real(small_grid):
    psi = packet(small_grid, p0=0.0)
    assert np.all(psi.values.imag == 0)


def test_mean_momentum_equals_p0(small_grid):
    px, py = mean_momentum(packet(small_grid, p0=2.0))
    assert abs(px - 2.0) < 1e-8 and abs(py) < 1e-8


def test_packet_near_boundary_warns(small_grid):
    with pytest.warns(RuntimeWarning):
        packet(small_grid, x0=14.0)


def test_free_plane_wave_step(small_grid):
    X, _ = small_grid.mesh()
    k0 = small_grid.kx[3]
    psi = ComplexField2D(small_grid, np.exp(1j * k0 * X))
    dt = 0.01
    out = split_step(psi, np.zeros(small_grid.shape), dt)
    assert np.allclose(out.values, psi.values * np.exp(-0.5j * k0**2 * dt), rtol=0, atol=1e-13)


def test_constant_potential_global_phase(small_grid):
    psi = packet(small_grid)
    c, dt = 3.7, 0.01
    free = split_step(psi, np.zeros(small_grid.shape), dt)
    shifted = split_step(psi, np.full(small_grid.shape, c), dt)
    assert np.allclose(shifted.values, free.values * np.exp(-1j * c * dt), rtol=0, atol=1e-13)
    assert np.abs(shifted.density - free.density).max() < 1e-13


def test_step_preserves_norm(small_grid):
    psi = packet(small_grid)
    geo = WaveguideGeometry(L=20.0, a=8.0, b=3.0, d=1.0)
    v = rasterize_potential(geo, small_grid)
    out = split_step(psi, v, 1e-3)
    assert abs(norm2(out) - norm2(psi)) < 1e-13


def test_step_rejects_mismatched_potential(small_grid):
    with pytest.raises(ValueError):
        split_step(packet(small_grid), np.zeros((10, 10)), 0.01)
    other = make_grid(128, 96, 30.0, 24.0, -16.0, -12.0)
    with pytest.raises(ValueError):
        split_step(packet(small_grid), ComplexField2D(other, np.zeros(other.shape)), 0.01)


def test_split_operator_shape_check():
    with pytest.raises(ValueError):
        SplitOperator(np.zeros((4, 4)), (np.zeros(4),), 0.1, UnitsConfig())


def test_free_gaussian_against_closed_form():
    grid = make_grid(256, 256, 64.0, 64.0, -32.0, -32.0)
    x0, y0, sigma, p0 = -8.0, 0.0, 1.0, 3.0
    psi = initial_wavepacket(WavepacketParams(x0, y0, sigma, p0), grid)
    cfg = PropagationConfig(dt=2e-3, t_final=2.0, snapshot_stride=1000)
    series = propagate(psi, np.zeros(grid.shape), cfg)
    assert series.steps == [0, 1000]
    final = series.fields[-1]
    t = 2.0
    X, Y = grid.mesh()
    exact = free_gaussian_1d(X, t, x0, sigma, p0) * free_gaussian_1d(Y, t, y0, sigma, 0.0)
    phase = np.vdot(exact, final.values)
    assert abs(abs(phase) * grid.cell_area - 1) < 1e-10
    rho = final.density
    cx = np.sum(rho * X) / rho.sum()
    width = math.sqrt(2 * np.sum(rho * (X - cx) ** 2) / rho.sum())
    assert abs(cx - (x0 + p0 * t)) / abs(x0 + p0 * t) < 1e-6
    assert abs(width - free_gaussian_width(t, sigma)) / free_gaussian_width(t, sigma) < 1e-6


def test_zero_potential_conserves_momentum(small_grid):
    psi = packet(small_grid, sigma=1.0)
    before = mean_momentum(psi)
    series = propagate(psi, np.zeros(small_grid.shape), PropagationConfig(0.01, 1.0, 50))
    after = mean_momentum(series.fields[-1])
    assert np.allclose(before, after, rtol=0, atol=1e-10)


def test_observers_called_on_stride_and_final(small_grid, tmp_path):
    calls = []
    norm, edge = NormMonitor(), EdgeMonitor()
    regions = RegionMonitor({"all": Rect(-100, 100, -100, 100), "none": Rect(50, 60, 50, 60)})
    writer = SnapshotWriter(tmp_path / "snaps")
    cfg = PropagationConfig(dt=0.01, t_final=0.25, snapshot_stride=10)
    series = propagate(
        packet(small_grid), np.zeros(small_grid.shape), cfg,
        [lambda s, t, p: calls.append(s), norm, edge, regions, writer],
    )
    assert calls == [0, 10, 20, 25]
    assert series.steps == calls
    assert series.times == pytest.approx([0.0, 0.1, 0.2, 0.25])
    assert norm.max_observed < 1e-12
    assert edge.max_observed < 1e-10
    assert regions.values["all"] == pytest.approx([1.0] * 4, abs=1e-12)
    assert regions.values["none"] == [0.0] * 4
    names = sorted(p.name for p in (tmp_path / "snaps").iterdir())
    assert names == ["psi_0000000.cf2d", "psi_0000010.cf2d", "psi_0000020.cf2d", "psi_0000025.cf2d"]
    assert np.array_equal(read_cf2d(writer.files[-1]).values, series.fields[-1].values)


def test_snapshots_are_immutable(small_grid):
    series = propagate(packet(small_grid), np.zeros(small_grid.shape), PropagationConfig(0.01, 0.02, 1))
    with pytest.raises(ValueError):
        series.fields[0].values[0, 0] = 0


def test_norm_drift_aborts(small_grid):
    psi = packet(small_grid).scaled(1.001)
    with pytest.raises(PropagationAborted) as info:
        propagate(psi, np.zeros(small_grid.shape), PropagationConfig(0.01, 0.1, 1))
    assert info.value.step == 0
    assert "norm drift" in info.value.diagnostic


def test_nan_aborts(small_grid):
    v = np.zeros(small_grid.shape)
    v[5, 5] = np.nan
    with pytest.raises(PropagationAborted) as info:
        propagate(packet(small_grid), v, PropagationConfig(0.01, 0.1, 1))
    assert info.value.step == 1
    assert "non-finite" in str(info.value)


def test_norm_monitor_aborts(small_grid):
    mon = NormMonitor(max_drift=1e-20)
    with pytest.raises(PropagationAborted):
        mon(3, 0.3, packet(small_grid).scaled(1 + 1e-9))


def test_region_probability_bounds(small_grid):
    psi = packet(small_grid)
    assert region_probability(psi, Rect(-1e3, 1e3, -1e3, 1e3)) == pytest.approx(1.0, abs=1e-12)
    assert region_probability(psi, Rect(0.0, 0.0, 0.0, 1.0)) == 0.0
    left = region_probability(psi, Rect(-1e3, -3.0, -1e3, 1e3))
    right = region_probability(psi, Rect(-3.0, 1e3, -1e3, 1e3))
    assert left + right == pytest.approx(1.0, abs=1e-12)


def test_current_of_real_field(small_grid):
    for method in ("spectral", "fd4"):
        jx, jy = current_density_2d(packet(small_grid, p0=0.0), method=method)
        assert np.abs(jx).max() < 1e-13 and np.abs(jy).max() < 1e-13


def test_plane_wave_current(small_grid):
    X, Y = small_grid.mesh()
    kx, ky = small_grid.kx[2], small_grid.ky[-3]
    psi = ComplexField2D(small_grid, 0.5 * np.exp(1j * (kx * X + ky * Y)))
    jx, jy = current_density_2d(psi)
    assert np.allclose(jx, 0.25 * kx, atol=1e-12) and np.allclose(jy, 0.25 * ky, atol=1e-12)
    with pytest.raises(ValueError):
        current_density_2d(psi, method="magic")


def test_continuity_on_propagated_state():
    # every wall must be resolved by the grid: an unresolved 1e4 wall breaks the
    # pointwise balance for the discrete flow even far from the wall
    grid = make_grid(256, 128, 48.0, 24.0, -24.0, -12.0)
    geo = WaveguideGeometry(L=30.0, a=10.0, b=4.0, d=1.0, v_step=8.0, v_barrier=4.0, v_wall=60.0, eps=0.5)
    v = rasterize_potential(geo, grid)
    psi = initial_wavepacket(WavepacketParams(-6.0, 5.5, 1.0, 3.0), grid)
    dt = 1e-4
    series = propagate(psi, v, PropagationConfig(dt, 0.5, 2500), keep_snapshots=True)
    mid = series.fields[-1]
    stepper = SplitOperator(v, (grid.kx, grid.ky), dt, UnitsConfig())
    after = stepper.step(np.array(mid.values))
    before = stepper.step(np.conj(mid.values))
    before = np.conj(before)
    drho = (np.abs(after) ** 2 - np.abs(before) ** 2) / (2 * dt)
    jx, jy = current_density_2d(mid)
    div = spectral_gradient(jx, grid)[0].real + spectral_gradient(jy, grid)[1].real
    assert np.abs(drho + div).max() < 1e-5


def test_time_reversal_desk_scale():
    grid = make_grid(384, 128, 120.0, 48.0, -60.0, -13.0)
    v = rasterize_potential(WaveguideGeometry(), grid)
    psi0 = initial_wavepacket(WavepacketParams(), grid)
    cfg = PropagationConfig(dt=5e-4, t_final=0.5, snapshot_stride=1000)
    fwd = propagate(psi0, v, cfg).fields[-1]
    back = propagate(ComplexField2D(grid, np.conj(fwd.values)), v, cfg).fields[-1]
    fidelity = abs(np.vdot(psi0.values, np.conj(back.values)) * grid.cell_area) ** 2
    assert fidelity > 1 - 1e-6


def test_strang_order_on_harmonic_oscillator():
    # a free packet has no splitting error, so the order is measured on a coherent state
    g = Grid1D(512, 32.0, -16.0)
    y = g.y
    exact = coherent_state_1d(y, 2.0, 2.0, 1.0, 1.0)
    errors = []
    for dt in (0.04, 0.02, 0.01):
        stepper = SplitOperator(0.5 * y**2, (g.k,), dt, UnitsConfig())
        psi = coherent_state_1d(y, 0.0, 2.0, 1.0, 1.0)
        for _ in range(int(round(2.0 / dt))):
            psi = stepper.step(psi)
        errors.append(math.sqrt(np.sum(np.abs(psi - exact) ** 2) * g.dy))
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all((orders > 1.9) & (orders < 2.1))
