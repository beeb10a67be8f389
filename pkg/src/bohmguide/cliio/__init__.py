"""Configuration, run orchestration, manifests and PPM rendering."""

from bohmguide.cliio.config import ConfigError, RunConfig, load_config, parse_config
from bohmguide.cliio.render import render_heatmap
from bohmguide.cliio.runner import RunManifest, read_manifest, run

__all__ = ["ConfigError", "RunConfig", "RunManifest", "load_config", "parse_config", "read_manifest", "render_heatmap", "run"]
