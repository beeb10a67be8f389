"""Run orchestration for the four modes, with a key-value manifest per run."""

from __future__ import annotations

import csv
import datetime as _dt
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from bohmguide import __version__
from bohmguide.bohm import (
    Termination,
    VelocityFieldSeries,
    auxiliary_seed_grid,
    equivariance_test,
    integrate_batch,
    sample_positions,
)
from bohmguide.cliio.config import RunConfig, build_config
from bohmguide.cliio.render import guide_outlines, render_heatmap
from bohmguide.corefield import Grid1D, write_cf2d
from bohmguide.doublewell1d import (
    ComplexField1D,
    barrier_amplitude_conventions,
    barrier_current_estimate,
    current_1d,
    dbb_velocity_1d,
    evolve_two_level,
    integrate_trajectories_1d,
    left_population,
    left_right_states,
    propagate_split_operator_1d,
    region_probabilities,
    sample_from_density,
    solve_two_levels,
)
from bohmguide.potentials import rasterize_potential
from bohmguide.tdse2d import (
    EdgeMonitor,
    NormMonitor,
    PropagationAborted,
    RegionMonitor,
    SnapshotWriter,
    initial_wavepacket,
    propagate,
)

log = logging.getLogger(__name__)

MANIFEST = "manifest.txt"
SNAPSHOT_INDEX = "snapshots.csv"
RENDER_TIMES = (0.0, 1.0, 2.0, 5.0)


@dataclass
class RunManifest:
    mode: str
    config: dict
    started: str = ""
    finished: str = ""
    status: str = "ok"
    diagnostic: str = ""
    files: list[str] = field(default_factory=list)
    results: dict = field(default_factory=dict)
    code_version: str = __version__

    def to_text(self) -> str:
        out = [
            "# bohmguide run manifest",
            f"code_version = {self.code_version}",
            f"mode = {self.mode}",
            f"status = {self.status}",
            f"started = {self.started}",
            f"finished = {self.finished}",
        ]
        if self.diagnostic:
            out.append(f"diagnostic = {self.diagnostic}")
        out += [f"config.{k} = {_fmt(v)}" for k, v in sorted(self.config.items())]
        out += [f"result.{k} = {_fmt(v)}" for k, v in self.results.items()]
        out += [f"file = {f}" for f in self.files]
        return "\n".join(out) + "\n"

    def write(self, directory: Path) -> Path:
        return _atomic_text(directory / MANIFEST, self.to_text())


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def _atomic_text(path: Path, text: str) -> Path:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
    return path


def read_manifest(path: str | os.PathLike) -> dict:
    """Parse a manifest back to a dict; repeated ``file`` keys collect into a list."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    out: dict = {"file": []}
    for line in path.read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        key, _, value = line.partition(" = ")
        if key == "file":
            out["file"].append(value)
        else:
            out[key] = value
    return out


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _write_csv(path: Path, header, rows) -> Path:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    os.replace(tmp, path)
    return path


def run(cfg: RunConfig) -> RunManifest:
    """Execute one mode end to end. The manifest is written even when the run aborts."""
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(cfg.mode, cfg.echo(), started=_now())
    handlers = {"dw1d": _run_dw1d, "sim2d": _run_sim2d, "traj": _run_traj, "equivariance": _run_equivariance}
    try:
        handlers[cfg.mode](cfg, out, manifest)
    except PropagationAborted as exc:
        manifest.status = "aborted"
        manifest.diagnostic = str(exc)
        log.error("run aborted: %s", exc)
    manifest.finished = _now()
    manifest.files = sorted(set(manifest.files))
    manifest.write(out)
    return manifest


def _rel(path: Path, out: Path) -> str:
    return str(Path(path).relative_to(out))


# -- dw1d ------------------------------------------------------------------------------


def _run_dw1d(cfg: RunConfig, out: Path, m: RunManifest):
    p = cfg.doublewell
    s = solve_two_levels(p, cfg.units)
    m.results.update(
        e0=s.e0, e1=s.e1, l0=s.l0, l1=s.l1, omega_tunnel=s.omega_tunnel,
        tunnel_period=s.tunnel_period, deep_well=p.is_deep(cfg.units),
    )
    length = cfg.get("dw_grid_length")
    grid = Grid1D(cfg.get("dw_grid_points"), length, -length / 2)
    left, _ = left_right_states(s, grid)

    # two-level P_left against direct split-operator propagation over dw_periods periods
    period = s.tunnel_period
    dt = cfg.get("dw_dt")
    n_steps = int(math.ceil(cfg.get("dw_periods") * period / dt))
    n_samples = cfg.get("dw_samples")
    every = max(1, n_steps // max(1, n_samples - 1))
    rows = [(0.0, 1.0, left_population(s, left), *region_probabilities(p, left).values())]

    def observe(step, t, values):
        psi = ComplexField1D(grid, values)
        exact = math.cos(s.omega_tunnel * t) ** 2
        rows.append((t, exact, left_population(s, psi), *region_probabilities(p, psi).values()))

    propagate_split_operator_1d(left, p, dt, n_steps, cfg.units, every=every, observer=observe)
    m.files.append(_rel(_write_csv(
        out / "tunnel_oscillation.csv",
        ["t", "p_left_two_level", "p_left_split_operator", "left", "right", "barrier", "outside"],
        rows,
    ), out))
    m.results["p_left_max_abs_diff"] = max(abs(r[1] - r[2]) for r in rows)

    # barrier profile at a quarter period
    t_q = period / 4
    psi_q = evolve_two_level(s, t_q, grid)
    j = current_1d(psi_q, cfg.units)
    v = dbb_velocity_1d(psi_q, cfg.units)
    rho00 = barrier_amplitude_conventions(s)
    est = {k: barrier_current_estimate(s, r, t_q, cfg.units) for k, r in rho00.items()}
    m.results.update({f"barrier_estimate_{k}": val for k, val in est.items()})
    i0 = int(np.argmin(np.abs(grid.y)))
    m.results["barrier_current_center"] = float(j[i0])
    prof = list(zip(grid.y, j, v.filled(np.nan)))
    m.files.append(_rel(_write_csv(out / "barrier_profile.csv", ["y", "current", "velocity"], prof), out))

    # a handful of trajectories over one period
    rng = np.random.default_rng(cfg.seed)
    y_fine = s.default_grid(n=8192)
    seeds = np.sort(sample_from_density(y_fine.y, left_right_states(s, y_fine)[0].density, 20, rng))
    trajs = integrate_trajectories_1d(s, seeds, period, period / 1e4, grid=y_fine, store_every=100)
    tdir = out / "trajectories_1d"
    tdir.mkdir(exist_ok=True)
    index = []
    for i, tr in enumerate(trajs):
        f = tr.write_csv(tdir / f"traj_{i:03d}.csv")
        m.files.append(_rel(f, out))
        index.append((i, tr.seed, tr.termination.value, f.name))
    m.files.append(_rel(_write_csv(tdir / "index.csv", ["index", "seed", "termination", "file"], index), out))


# -- sim2d -----------------------------------------------------------------------------


def _run_sim2d(cfg: RunConfig, out: Path, m: RunManifest):
    grid = cfg.grid
    v = rasterize_potential(cfg.geometry, grid)
    m.files.append(_rel(write_cf2d(out / "potential.cf2d", v.astype(complex), grid), out))
    psi0 = initial_wavepacket(cfg.wavepacket, grid, cfg.units)
    regions = cfg.geometry.regions()
    norm_mon = NormMonitor(cfg.get("max_norm_drift"))
    edge_mon = EdgeMonitor()
    region_mon = RegionMonitor(regions)
    observers = [norm_mon, edge_mon, region_mon]
    writer = None
    if cfg.get("write_snapshots"):
        writer = SnapshotWriter(out / "snapshots")
        observers.append(writer)
    try:
        propagate(psi0, v, cfg.propagation, observers, cfg.units, keep_snapshots=False,
                  max_norm_drift=cfg.get("max_norm_drift"))
    finally:
        rows = []
        for i, t in enumerate(region_mon.times):
            probs = [region_mon.values[k][i] for k in regions]
            rows.append((t, *probs, 1.0 - sum(probs), norm_mon.drift[i] if i < len(norm_mon.drift) else math.nan,
                         edge_mon.ratios[i]))
        m.files.append(_rel(_write_csv(
            out / "region_probabilities.csv",
            ["t", *regions.keys(), "elsewhere", "norm_drift", "edge_ratio"],
            rows,
        ), out))
        m.results["norm_drift_max"] = norm_mon.max_observed
        m.results["edge_ratio_max"] = edge_mon.max_observed
        if region_mon.times:
            m.results["p_aux_final"] = region_mon.values["aux"][-1]
            m.results["p_main_final"] = region_mon.values["main"][-1]
        if writer is not None:
            idx = [(round(t / cfg.propagation.dt), t, f.name) for t, f in zip(writer.times, writer.files)]
            m.files.append(_rel(_write_csv(out / SNAPSHOT_INDEX, ["step", "t", "file"], idx), out))
            m.files += [_rel(f, out) for f in writer.files]
    if writer is not None:
        outlines = guide_outlines(cfg.geometry)
        times = np.array(writer.times)
        for t in RENDER_TIMES:
            j = int(np.argmin(np.abs(times - t)))
            if abs(times[j] - t) > cfg.propagation.dt * cfg.propagation.snapshot_stride:
                continue
            img = render_heatmap(writer.files[j], out / f"density_t{t:g}.ppm", "viridis", True, outlines)
            m.files.append(_rel(img, out))


# -- traj / equivariance ---------------------------------------------------------------


def load_snapshot_series(directory: str | os.PathLike, cfg: RunConfig) -> tuple[VelocityFieldSeries, dict]:
    """VelocityFieldSeries over a sim2d output directory (files read lazily)."""
    directory = Path(directory)
    with open(directory / SNAPSHOT_INDEX, newline="") as fh:
        rows = list(csv.DictReader(fh))
    times = [float(r["t"]) for r in rows]
    paths = [directory / "snapshots" / r["file"] for r in rows]
    series = VelocityFieldSeries.from_files(times, paths, cfg.units, cfg.get("rho_floor"))
    return series, read_manifest(directory)


def _source_config(info: dict, cfg: RunConfig) -> RunConfig:
    """Rebuild the physics of the producing sim2d run from its manifest echo."""
    from bohmguide.cliio.config import SCHEMA

    raw = {}
    for key, (_, parser) in SCHEMA.items():
        text = info.get(f"config.{key}")
        if text is None or key in ("mode", "out", "input", "seed"):
            continue
        raw[key] = parser(text) if parser is not str else text
    raw.update(mode=cfg.mode, out=str(cfg.out), input=cfg.get("input"), seed=cfg.seed)
    for key in ("n_forward", "dt_traj", "aux_across", "aux_stations", "rho_floor", "n_particles", "t_check"):
        raw[key] = cfg.get(key)
    return build_config(raw)


def _run_traj(cfg: RunConfig, out: Path, m: RunManifest):
    source = Path(cfg.get("input"))
    series, info = load_snapshot_series(source, cfg)
    src = _source_config(info, cfg)
    g = src.geometry
    m.results["source"] = str(source)
    dt_traj = cfg.get("dt_traj") or None
    t0, tf = series.t_first, series.t_last
    rng = np.random.default_rng(cfg.seed)

    fwd_seeds = sample_positions(series.frame(0).density, series.grid, cfg.get("n_forward"), rng)
    fwd = integrate_batch(series, fwd_seeds, t0, tf, dt_traj)
    bwd_seeds = auxiliary_seed_grid(g, cfg.get("aux_across"), cfg.get("aux_stations"))
    bwd = integrate_batch(series, bwd_seeds, tf, t0, dt_traj)

    tdir = out / "trajectories"
    tdir.mkdir(exist_ok=True)
    index = []
    for tag, trajs, seeds in (("fwd", fwd, fwd_seeds), ("bwd", bwd, bwd_seeds)):
        for i, tr in enumerate(trajs):
            f = tr.write_csv(tdir / f"{tag}_{i:03d}.csv")
            m.files.append(_rel(f, out))
            index.append((tag, i, seeds[i][0], seeds[i][1], tr.termination.value, f.name))
    m.files.append(_rel(_write_csv(tdir / "index.csv", ["set", "index", "seed_x", "seed_y", "termination", "file"], index), out))

    done = [tr for tr in fwd if tr.termination == Termination.COMPLETED]
    m.results["forward_completed"] = len(done)
    m.results["forward_reflected"] = sum(1 for tr in done if tr.end[0] < 0)
    m.results["backward_completed"] = sum(1 for tr in bwd if tr.termination == Termination.COMPLETED)
    m.results["backward_from_main_guide"] = sum(1 for tr in bwd if np.any(tr.y > g.d / 2))


def _run_equivariance(cfg: RunConfig, out: Path, m: RunManifest):
    series, _ = load_snapshot_series(cfg.get("input"), cfg)
    report = equivariance_test(series, cfg.get("n_particles"), cfg.get("t_check"), cfg.seed, cfg.get("dt_traj") or None)
    m.results.update(report.as_dict())
    m.files.append(_rel(_atomic_text(out / "equivariance.txt", report.to_text()), out))

