"""Command-line entry point: gen-data, label, run <stage>, report.

Exit codes: 0 success, 2 config error, 3 missing or stale dependency, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline as P
from .dataset import DatasetError
from .diffusion import ContractError
from .rules import RuleError, RuleSet, default_ruleset
from .tensor import NumericError

EXIT_OK, EXIT_CONFIG, EXIT_DEPENDENCY, EXIT_NUMERIC = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dkroot", description="Diffusion-augmented contrastive root-cause classifier.")
    p.add_argument("--out", help=f"output root (default: ${P.OUT_ENV} or ./runs)")
    p.add_argument("--config", help="JSON config with per-stage sections")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=JSON",
                   help="override one config field, e.g. --set pretrain.epochs=5")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write the synthetic rule, expert and test pools")
    g.add_argument("--scale", type=float, help="multiply pool sizes (floor, at least 6 expert samples)")
    g.add_argument("--seed", type=int)

    lab = sub.add_parser("label", help="rule-label a samples CSV")
    lab.add_argument("samples")
    lab.add_argument("output")
    lab.add_argument("--rules", help="ruleset JSON (default: built-in rules)")

    r = sub.add_parser("run", help="run a pipeline stage")
    r.add_argument("stage", choices=list(P.STAGES) + ["all"])
    r.add_argument("--seeds", default="1", help="seed count N (seeds 0..N-1) or a comma list")

    sub.add_parser("report", help="print the evaluation summary")
    return p


def _overrides(items) -> dict:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise P.ConfigError(f"bad override {item!r}; expected SECTION.KEY=VALUE")
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        node = out
        *parents, leaf = key.split(".")
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = parsed
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(message)s")
    try:
        return _dispatch(args)
    except (P.ConfigError, RuleError, DatasetError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (P.DependencyError, ContractError) as exc:
        print(f"dependency error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def _dispatch(args) -> int:
    ws = P.Workspace(args.out)
    over = _overrides(args.set)
    if args.command == "gen-data":
        data = over.setdefault("data", {})
        if args.scale is not None:
            data["scale"] = args.scale
        if args.seed is not None:
            data["seed"] = args.seed
        cfg = P.resolve_config(args.config, over)
        counts = P.gen_data(ws, cfg)
        for name, c in counts.items():
            print(f"{name:7s} {sum(c):5d} samples, per class {c}")
        return EXIT_OK
    if args.command == "label":
        rules = RuleSet.load(args.rules) if args.rules else default_ruleset()
        counts = P.label_file(args.samples, args.output, rules)
        print(" ".join(f"{k}:{v}" for k, v in counts.items()))
        return EXIT_OK
    cfg = P.resolve_config(args.config, over)
    if args.command == "run":
        P.run_stage(ws, cfg, args.stage, P.parse_seeds(args.seeds))
        if args.stage in ("evaluate", "all"):
            print(P.format_report(P.read_metrics(ws)))
        return EXIT_OK
    print(P.format_report(P.read_metrics(ws)))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
