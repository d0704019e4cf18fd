"""Command-line entry point: render --dir DIR --kind KIND --out FILE."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .render import PLOT_KINDS, RenderError, render


def run_command(argv) -> int:
    parser = argparse.ArgumentParser(
        prog="bglgm-render",
        description="Render figures from a completed model-run directory.",
    )
    parser.add_argument("--dir", type=Path, required=True, help="run directory")
    parser.add_argument("--kind", choices=PLOT_KINDS, required=True)
    parser.add_argument("--out", type=Path, required=True, help="output image path")
    args = parser.parse_args(argv)
    try:
        render(args.dir, args.kind, args.out)
    except RenderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))
