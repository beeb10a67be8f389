"""Flat ``key = value`` run configuration.

Every key is globally unique. ``[section]`` headers are optional and purely
organisational, but a key placed under the wrong header is rejected. ``#``
starts a comment. Omitted physics keys take the published values; grid and
step sizes come from the chosen preset.
"""

from __future__ import annotations

import difflib
import math
from dataclasses import dataclass, field
from pathlib import Path

from bohmguide.corefield import Grid2D, UnitsConfig, make_grid
from bohmguide.potentials import DoubleWellParams, WaveguideGeometry
from bohmguide.tdse2d import PropagationConfig, WavepacketParams

MODES = ("dw1d", "sim2d", "traj", "equivariance")
PRESETS = ("desk", "paper")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


# key -> (section, parser)
SCHEMA: dict[str, tuple[str, object]] = {
    "mode": ("run", str),
    "out": ("run", str),
    "seed": ("run", int),
    "preset": ("run", str),
    "input": ("run", str),
    "hbar": ("units", float),
    "mass": ("units", float),
    "nx": ("grid", int),
    "ny": ("grid", int),
    "x_min": ("grid", float),
    "x_max": ("grid", float),
    "y_min": ("grid", float),
    "y_max": ("grid", float),
    "guide_length": ("geometry", float),
    "guide_width": ("geometry", float),
    "aux_width": ("geometry", float),
    "barrier_width": ("geometry", float),
    "v_step": ("geometry", float),
    "v_barrier": ("geometry", float),
    "v_wall": ("geometry", float),
    "eps": ("geometry", float),
    "x0": ("wavepacket", float),
    "y0": ("wavepacket", float),
    "sigma": ("wavepacket", float),
    "p0": ("wavepacket", float),
    "dt": ("propagation", float),
    "t_final": ("propagation", float),
    "snapshot_stride": ("propagation", int),
    "write_snapshots": ("propagation", _bool),
    "max_norm_drift": ("propagation", float),
    "well_depth": ("doublewell", float),
    "well_width": ("doublewell", float),
    "well_separation": ("doublewell", float),
    "dw_grid_points": ("doublewell", int),
    "dw_grid_length": ("doublewell", float),
    "dw_dt": ("doublewell", float),
    "dw_periods": ("doublewell", float),
    "dw_samples": ("doublewell", int),
    "n_forward": ("trajectory", int),
    "dt_traj": ("trajectory", float),
    "aux_across": ("trajectory", int),
    "aux_stations": ("trajectory", _floats),
    "rho_floor": ("trajectory", float),
    "n_particles": ("equivariance", int),
    "t_check": ("equivariance", float),
}

SECTIONS = sorted({sec for sec, _ in SCHEMA.values()})

PRESET_VALUES = {
    "desk": {
        "nx": 768, "ny": 256, "x_min": -60.0, "x_max": 60.0, "y_min": -13.0, "y_max": 35.0,
        "dt": 5e-4, "snapshot_stride": 20,
    },
    "paper": {
        "nx": 3072, "ny": 1024, "x_min": -53.0, "x_max": 53.0, "y_min": -7.5, "y_max": 22.5,
        "dt": 1e-4, "snapshot_stride": 100,
    },
}

DEFAULTS = {
    "mode": "sim2d",
    "out": "run_output",
    "seed": 0,
    "preset": "paper",
    "input": "",
    "hbar": 1.0,
    "mass": 1.0,
    "guide_length": 100.0,
    "guide_width": 20.0,
    "aux_width": 5.0,
    "barrier_width": 1.0,
    "v_step": 162.0,
    "v_barrier": 18.0,
    "v_wall": 1e4,
    "eps": 0.05,
    "x0": -12.5,
    "y0": 10.5,
    "sigma": 0.5,
    "p0": 12.0,
    "t_final": 5.0,
    "write_snapshots": True,
    "max_norm_drift": 1e-6,
    "well_depth": 20.0,
    "well_width": 2.0,
    "well_separation": 0.5,
    "dw_grid_points": 1024,
    "dw_grid_length": 32.0,
    "dw_dt": 0.005,
    "dw_periods": 1.0,
    "dw_samples": 41,
    "n_forward": 50,
    "dt_traj": 0.0,
    "aux_across": 8,
    "aux_stations": (10.0, 15.0, 20.0),
    "rho_floor": 1e-12,
    "n_particles": 10000,
    "t_check": 2.0,
}


@dataclass
class RunConfig:
    mode: str
    units: UnitsConfig
    grid: Grid2D
    geometry: WaveguideGeometry
    doublewell: DoubleWellParams
    wavepacket: WavepacketParams
    propagation: PropagationConfig
    values: dict = field(default_factory=dict)

    @property
    def out(self) -> Path:
        return Path(self.values["out"])

    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    def get(self, key: str):
        return self.values[key]

    def echo(self) -> dict:
        """Every resolved key, for the manifest."""
        return dict(sorted(self.values.items()))


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse and validate config text; ``overrides`` (already-typed values) win over the text."""
    raw: dict[str, object] = {}
    lines: dict[str, int] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if body.startswith("[") and body.endswith("]"):
            section = body[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]{_suggest(section, SECTIONS)}", lineno)
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {body!r}", lineno)
        key, value = (s.strip() for s in body.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}{_suggest(key, SCHEMA)}", lineno)
        owner, parser = SCHEMA[key]
        if section is not None and owner != section:
            raise ConfigError(f"key {key!r} belongs in [{owner}], found under [{section}]", lineno)
        if key in raw:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})", lineno)
        try:
            raw[key] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno) from None
        lines[key] = lineno
    for key, value in (overrides or {}).items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown override {key!r}{_suggest(key, SCHEMA)}")
        raw[key] = value
        lines.pop(key, None)
    return build_config(raw, lines)


def _suggest(word: str, options) -> str:
    close = difflib.get_close_matches(word, list(options), n=1, cutoff=0.5)
    return f"; did you mean {close[0]!r}?" if close else ""


def build_config(raw: dict, lines: dict | None = None) -> RunConfig:
    lines = lines or {}
    preset = raw.get("preset", DEFAULTS["preset"])
    if preset not in PRESETS:
        raise ConfigError(f"preset must be one of {PRESETS}, got {preset!r}", lines.get("preset"))
    values = dict(DEFAULTS)
    values.update(PRESET_VALUES[preset])
    values.update(raw)
    if values["mode"] not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {values['mode']!r}", lines.get("mode"))

    def build(what, fn, keys):
        try:
            return fn()
        except (ValueError, TypeError) as exc:
            line = next((lines[k] for k in keys if k in lines), None)
            raise ConfigError(f"invalid {what}: {exc}", line) from None

    units = build("units", lambda: UnitsConfig(values["hbar"], values["mass"]), ("hbar", "mass"))
    grid_keys = ("nx", "ny", "x_min", "x_max", "y_min", "y_max")

    def make():
        if not values["x_max"] > values["x_min"] or not values["y_max"] > values["y_min"]:
            raise ValueError("grid upper bounds must exceed lower bounds")
        return make_grid(
            values["nx"], values["ny"],
            values["x_max"] - values["x_min"], values["y_max"] - values["y_min"],
            values["x_min"], values["y_min"],
        )

    grid = build("grid", make, grid_keys)
    geo_keys = ("guide_length", "guide_width", "aux_width", "barrier_width", "v_step", "v_barrier", "v_wall", "eps")
    geometry = build(
        "geometry",
        lambda: WaveguideGeometry(*(values[k] for k in geo_keys)),
        geo_keys,
    )
    dw_keys = ("well_depth", "well_width", "well_separation")
    doublewell = build(
        "double well",
        lambda: DoubleWellParams(values["well_depth"], values["well_width"], values["well_separation"], values["mass"]),
        dw_keys,
    )
    wp_keys = ("x0", "y0", "sigma", "p0")
    wavepacket = build("wavepacket", lambda: WavepacketParams(*(values[k] for k in wp_keys)), wp_keys)
    prop_keys = ("dt", "t_final", "snapshot_stride")
    propagation = build("propagation", lambda: PropagationConfig(*(values[k] for k in prop_keys)), prop_keys)

    positive = ("dw_grid_length", "dw_dt", "dw_periods", "rho_floor", "max_norm_drift")
    for key in positive:
        if not (values[key] > 0 and math.isfinite(values[key])):
            raise ConfigError(f"{key} must be positive, got {values[key]}", lines.get(key))
    for key in ("dw_grid_points", "dw_samples", "aux_across", "n_particles"):
        if values[key] < 1:
            raise ConfigError(f"{key} must be at least 1, got {values[key]}", lines.get(key))
    if values["dw_grid_points"] < 5:
        raise ConfigError("dw_grid_points must be at least 5", lines.get("dw_grid_points"))
    if values["n_forward"] < 0 or values["dt_traj"] < 0:
        raise ConfigError("n_forward and dt_traj must be non-negative", lines.get("n_forward") or lines.get("dt_traj"))
    if values["mode"] in ("traj", "equivariance") and not values["input"]:
        raise ConfigError(f"mode {values['mode']!r} needs 'input' (a sim2d output directory)", lines.get("mode"))
    return RunConfig(values["mode"], units, grid, geometry, doublewell, wavepacket, propagation, values)


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    return parse_config(Path(path).read_text(), overrides)
