"""bohmflow-plot: render one figure kind from a run directory."""

from __future__ import annotations

import argparse
import sys

from .figures import KINDS, FigureSpec, render
from .io import SchemaError


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="bohmflow-plot",
        description="Render figures from a bohmflow run directory",
    )
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("--run", required=True, help="run directory")
    parser.add_argument("-o", "--output", required=True, help="output image path")
    parser.add_argument("--max-trajectories", type=int, default=160)
    args = parser.parse_args(argv)
    try:
        path = render(FigureSpec(
            kind=args.kind,
            run_dir=args.run,
            output=args.output,
            max_trajectories=args.max_trajectories,
        ))
    except SchemaError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
