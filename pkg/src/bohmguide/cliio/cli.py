"""Command line entry point: ``bohmguide {dw1d,sim2d,traj,equiv,render}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from bohmguide.cliio.config import ConfigError, parse_config
from bohmguide.cliio.render import guide_outlines, render_heatmap
from bohmguide.cliio.runner import run
from bohmguide.potentials import WaveguideGeometry

VERB_MODES = {"dw1d": "dw1d", "sim2d": "sim2d", "traj": "traj", "equiv": "equivariance"}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bohmguide", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb in VERB_MODES:
        p = sub.add_parser(verb)
        p.add_argument("--config", type=Path, help="key = value config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--preset", choices=("paper", "desk"))
        if verb in ("traj", "equiv"):
            p.add_argument("--input", help="sim2d output directory to read snapshots from")
    r = sub.add_parser("render")
    r.add_argument("field", type=Path, help="CF2D file")
    r.add_argument("--out", type=Path, required=True, help="output .ppm")
    r.add_argument("--colormap", default="viridis")
    r.add_argument("--log", action="store_true", help="log10 colour scale")
    r.add_argument("--outline", action="store_true", help="draw the default guide outlines")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    if args.verb == "render":
        outlines = guide_outlines(WaveguideGeometry()) if args.outline else ()
        render_heatmap(args.field, args.out, args.colormap, args.log, outlines)
        return 0
    text = args.config.read_text() if args.config else ""
    overrides = {"mode": VERB_MODES[args.verb]}
    for key in ("out", "seed", "preset", "input"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    try:
        cfg = parse_config(text, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    manifest = run(cfg)
    if manifest.status != "ok":
        print(f"run {manifest.status}: {manifest.diagnostic}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
