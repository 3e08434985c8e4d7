"""CLI: meta3-plots render --in DIR --appendix L --out DIR --format {png|svg}."""
from __future__ import annotations

import argparse
import sys

from .render import render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="meta3-plots",
        description="Render appendix facet figures from report panel CSVs",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("render", help="render one appendix's figures")
    p.add_argument("--in", dest="panel_dir", required=True, help="panel CSV directory")
    p.add_argument("--appendix", required=True, help="appendix letter A..H")
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--format", choices=("png", "svg"), default="png")
    args = parser.parse_args(argv)
    try:
        written = render(args.panel_dir, args.appendix, args.out_dir, args.format)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for name in written:
        print(name)
    return 0


if __name__ == "__main__":
    sys.exit(main())
