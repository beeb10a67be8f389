import csv

import numpy as np
import pytest

from bohmguide.cliio.cli import main
from bohmguide.cliio.config import DEFAULTS, ConfigError, parse_config
from bohmguide.cliio.render import read_ppm, render_heatmap, scalar_image, write_ppm
from bohmguide.cliio.runner import load_snapshot_series, read_manifest, run
from bohmguide.corefield import make_grid, read_cf2d, write_cf2d

SMALL_SIM = """
[run]
preset = desk
[grid]
nx = 192
ny = 64
[propagation]
t_final = 0.05
snapshot_stride = 20
"""


# -- config ----------------------------------------------------------------------------


def test_empty_config_gives_published_defaults():
    cfg = parse_config("")
    assert cfg.mode == "sim2d"
    assert cfg.propagation.dt == 1e-4 and cfg.propagation.t_final == 5.0
    assert cfg.grid.shape == (3072, 1024)
    g = cfg.geometry
    assert (g.L, g.a, g.b, g.d, g.v_step, g.v_barrier, g.v_wall, g.eps) == (100, 20, 5, 1, 162, 18, 1e4, 0.05)
    w = cfg.wavepacket
    assert (w.x0, w.y0, w.sigma, w.p0) == (-12.5, 10.5, 0.5, 12.0)
    assert cfg.units.hbar == 1.0 and cfg.units.mass == 1.0


def test_desk_preset_and_overrides():
    cfg = parse_config("preset = desk\n", {"seed": 7})
    assert cfg.grid.shape == (768, 256) and cfg.propagation.dt == 5e-4
    assert cfg.seed == 7
    assert cfg.echo()["nx"] == 768


def test_comments_and_sections():
    cfg = parse_config("# header\n[wavepacket]\np0 = 10  # slower\n[run]\nseed = 3\n")
    assert cfg.wavepacket.p0 == 10.0 and cfg.seed == 3


def test_negative_dt_reports_line():
    with pytest.raises(ConfigError) as err:
        parse_config("[propagation]\n\ndt = -1\n")
    assert err.value.line == 3
    assert "line 3" in str(err.value)


def test_unknown_key_suggests_spelling():
    with pytest.raises(ConfigError, match="v_step"):
        parse_config("vstep = 162\n")


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("p0 = 1\np0 = 2\n", "duplicate"),
        ("[grid]\np0 = 1\n", "belongs in [wavepacket]"),
        ("[nope]\n", "unknown section"),
        ("nx = many\n", "bad value"),
        ("just words\n", "key = value"),
        ("mode = fly\n", "mode must be"),
        ("preset = huge\n", "preset must be"),
        ("mode = traj\n", "needs 'input'"),
        ("x_min = 10\nx_max = -10\n", "invalid grid"),
        ("rho_floor = 0\n", "rho_floor must be positive"),
    ],
)
def test_config_errors(text, fragment):
    with pytest.raises(ConfigError, match=fr"{fragment}".replace("[", r"\[").replace("]", r"\]")):
        parse_config(text)


def test_every_default_key_is_parsable():
    cfg = parse_config("")
    assert set(cfg.echo()) == set(DEFAULTS) | {"nx", "ny", "x_min", "x_max", "y_min", "y_max", "dt", "snapshot_stride"}


# -- dw1d ------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def dw1d_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("dw1d")
    text = "dw_grid_points = 512\ndw_periods = 0.25\n"
    return [run(parse_config(text, {"mode": "dw1d", "out": str(base / name)})) for name in ("a", "b")], base


def test_dw1d_outputs(dw1d_runs):
    (m, _), base = dw1d_runs
    assert m.status == "ok"
    assert m.results["e0"] == pytest.approx(-19.0936080306, abs=1e-9)
    assert m.results["deep_well"] is True
    with open(base / "a" / "tunnel_oscillation.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    # the 512-node grid samples psi_L coarsely, so the t = 0 projection is only close to 1
    assert float(rows[0]["p_left_split_operator"]) == pytest.approx(1.0, abs=1e-4)
    totals = [sum(float(r[k]) for k in ("left", "right", "barrier", "outside")) for r in rows]
    assert totals[0] == pytest.approx(1.0, abs=1e-4)
    assert np.ptp(totals) < 1e-9
    index = (base / "a" / "trajectories_1d" / "index.csv").read_text().splitlines()
    assert len(index) == 21


def test_dw1d_is_deterministic(dw1d_runs):
    _, base = dw1d_runs
    for rel in read_manifest(base / "a")["file"]:
        assert (base / "a" / rel).read_bytes() == (base / "b" / rel).read_bytes(), rel


def test_manifest_lists_every_file(dw1d_runs):
    _, base = dw1d_runs
    info = read_manifest(base / "a")
    listed = set(info["file"])
    on_disk = {str(p.relative_to(base / "a")) for p in (base / "a").rglob("*") if p.is_file()}
    assert on_disk - {"manifest.txt"} == listed
    assert info["status"] == "ok" and info["config.well_depth"] == "20.0"
    assert "code_version" in info and "started" in info and "finished" in info


# -- sim2d / traj / equivariance -------------------------------------------------------


@pytest.fixture(scope="module")
def small_sim(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim") / "run"
    m = run(parse_config(SMALL_SIM, {"out": str(out)}))
    return m, out


def test_sim2d_outputs(small_sim):
    m, out = small_sim
    assert m.status == "ok"
    assert m.results["norm_drift_max"] < 1e-12
    with open(out / "snapshots.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["step"]) for r in rows] == [0, 20, 40, 60, 80, 100]
    f = read_cf2d(out / "snapshots" / rows[-1]["file"])
    assert f.grid.shape == (192, 64)
    assert (out / "density_t0.ppm").exists()
    assert set(read_manifest(out)["file"]) >= {"potential.cf2d", "region_probabilities.csv", "snapshots.csv"}


def test_sim2d_is_deterministic(small_sim, tmp_path):
    _, out = small_sim
    run(parse_config(SMALL_SIM, {"out": str(tmp_path / "again")}))
    for name in ("psi_0000100.cf2d", "psi_0000040.cf2d"):
        assert (out / "snapshots" / name).read_bytes() == (tmp_path / "again" / "snapshots" / name).read_bytes()
    assert (out / "region_probabilities.csv").read_bytes() == (tmp_path / "again" / "region_probabilities.csv").read_bytes()


def test_traj_and_equivariance_on_small_run(small_sim, tmp_path):
    _, out = small_sim
    over = {"input": str(out), "n_forward": 5, "n_particles": 500, "t_check": 0.05}
    m = run(parse_config(SMALL_SIM, {**over, "mode": "traj", "out": str(tmp_path / "t")}))
    assert m.status == "ok"
    assert m.results["forward_completed"] + m.results["forward_reflected"] >= 0
    idx = (tmp_path / "t" / "trajectories" / "index.csv").read_text().splitlines()
    assert len(idx) == 1 + 5 + 24
    e = run(parse_config(SMALL_SIM, {**over, "mode": "equivariance", "out": str(tmp_path / "e")}))
    assert e.status == "ok" and e.results["n_particles"] == 500
    assert (tmp_path / "e" / "equivariance.txt").exists()


def test_snapshot_series_loader(small_sim):
    _, out = small_sim
    series, info = load_snapshot_series(out, parse_config(SMALL_SIM))
    assert len(series) == 6 and series.t_last == pytest.approx(0.05)
    assert info["mode"] == "sim2d"


def test_aborted_run_still_writes_manifest(tmp_path):
    m = run(parse_config(SMALL_SIM + "max_norm_drift = 1e-30\n", {"out": str(tmp_path)}))
    assert m.status == "aborted" and m.diagnostic
    info = read_manifest(tmp_path)
    assert info["status"] == "aborted"
    assert "region_probabilities.csv" in info["file"]


# -- render ----------------------------------------------------------------------------


def test_constant_field_renders_uniform(tmp_path):
    g = make_grid(20, 10, 2.0, 1.0)
    f = write_cf2d(tmp_path / "c.cf2d", np.full(g.shape, 3.0), g)
    img = read_ppm(render_heatmap(f, tmp_path / "c.ppm"))
    assert img.shape == (10, 20, 3)
    assert np.all(img == img[0, 0])


def test_log_scale_floor_has_no_nan():
    v = np.array([[0.0, 1e-30], [1e-5, 1.0]])
    s = scalar_image(v, log_scale=True)
    assert np.all(np.isfinite(s)) and s.min() == 0.0 and s.max() == 1.0
    assert np.all(scalar_image(np.zeros((3, 3)), log_scale=True) == 0)


def test_ppm_round_trip(tmp_path):
    rgb = np.random.default_rng(0).integers(0, 256, size=(7, 5, 3), dtype=np.uint8)
    assert np.array_equal(read_ppm(write_ppm(tmp_path / "x.ppm", rgb)), rgb)
    (tmp_path / "bad.ppm").write_bytes(b"P3\n1 1\n255\n000")
    with pytest.raises(ValueError):
        read_ppm(tmp_path / "bad.ppm")


def test_render_orientation(tmp_path):
    g = make_grid(4, 3, 4.0, 3.0)
    vals = np.zeros(g.shape)
    vals[0, 2] = 1.0  # low x, high y
    img = read_ppm(render_heatmap(write_cf2d(tmp_path / "o.cf2d", vals, g), tmp_path / "o.ppm", "gray"))
    assert tuple(img[0, 0]) == (255, 255, 255)
    assert img.sum() == 3 * 255


# -- cli -------------------------------------------------------------------------------


def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("dt = -1\n")
    assert main(["sim2d", "--config", str(bad), "--out", str(tmp_path / "x")]) == 1
    assert "line 1" in capsys.readouterr().err

    cfg = tmp_path / "small.cfg"
    cfg.write_text(SMALL_SIM + "max_norm_drift = 1e-30\n")
    assert main(["sim2d", "--config", str(cfg), "--out", str(tmp_path / "ab")]) == 2

    cfg.write_text(SMALL_SIM)
    assert main(["sim2d", "--config", str(cfg), "--out", str(tmp_path / "ok"), "--seed", "4"]) == 0
    assert read_manifest(tmp_path / "ok")["config.seed"] == "4"
    assert main(["render", str(tmp_path / "ok" / "potential.cf2d"), "--out", str(tmp_path / "v.ppm"), "--outline"]) == 0
    assert read_ppm(tmp_path / "v.ppm").shape == (64, 192, 3)


def test_cli_requires_verb():
    with pytest.raises(SystemExit):
        main([])
