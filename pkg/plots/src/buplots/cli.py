"""plots <kind> <input.csv> -o <out.png|out.svg>"""

from __future__ import annotations

import argparse
import sys

from .figures import FIGURE_KINDS, SchemaError, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plots", description="Render bufwer CSV outputs as figures."
    )
    parser.add_argument("kind", choices=FIGURE_KINDS)
    parser.add_argument("input", help="CSV produced by the bufwer CLI")
    parser.add_argument("-o", "--output", required=True, help="PNG or SVG path")
    parser.add_argument("--label", action="append", default=[], metavar="NAME=DISPLAY",
                        help="rename a procedure in legends/titles; repeatable")
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    labels = {}
    for item in args.label:
        if "=" not in item:
            print(f"plots: bad --label {item!r}, expected NAME=DISPLAY", file=sys.stderr)
            return 2
        name, display = item.split("=", 1)
        labels[name] = display
    try:
        render(args.kind, args.input, args.output, labels=labels)
    except SchemaError as e:
        print(f"plots: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"plots: I/O error: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
