import argparse
import sys
from typing import List, Optional

import tools


def _hex_int(text: str) -> int:
    try:
        return int(text, 16)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a hex address: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bir", description="Inspect, check and lay out .bir IR files.")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("validate", "list structural violations (exit 1 if any)"),
        ("stats", "entity counts, edge kinds and AuxData tables"),
        ("dump", "hierarchical listing with comments"),
        ("cfg-dot", "IPCFG as Graphviz DOT"),
    ):
        sub.add_parser(name, help=help_text).add_argument("path")

    diff = sub.add_parser("diff", help="structural diff keyed by UUID (exit 1 if different)")
    diff.add_argument("path_a")
    diff.add_argument("path_b")

    canon = sub.add_parser("canonicalize", help="rewrite a file in canonical byte form")
    canon.add_argument("path")
    canon.add_argument("--out", help="write here instead of in place")

    lay = sub.add_parser("layout", help="relayout, relocate and emit a flat image plus address map")
    lay.add_argument("path")
    lay.add_argument("--base", type=_hex_int, default=None, help="hex base address (default BIR_DEFAULT_BASE)")
    lay.add_argument("--out-image", required=True)
    lay.add_argument("--out-map", required=True)
    return parser


def run_cli(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "validate":
        code, text = tools.cmd_validate(args.path)
    elif args.command == "stats":
        code, text = tools.cmd_stats(args.path)
    elif args.command == "dump":
        code, text = tools.cmd_dump(args.path)
    elif args.command == "cfg-dot":
        code, text = tools.cmd_cfg_dot(args.path)
    elif args.command == "diff":
        code, text = tools.cmd_diff(args.path_a, args.path_b)
    elif args.command == "canonicalize":
        code, text = tools.cmd_canonicalize(args.path, args.out)
    else:
        code, text = tools.cmd_layout(args.path, args.base, args.out_image, args.out_map)

    if text:
        print(text, file=sys.stderr if code == 2 else sys.stdout)
    return code


if __name__ == "__main__":
    sys.exit(run_cli())
