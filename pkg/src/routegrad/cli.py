"""Command-line entry point: train, eval, validate-routing, compare.

Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .config import RunConfig
from .dataio import DataConsistencyError, DataFormatError
from .gradrouter import RoutingError, validate_routing
from .netgraph import ConfigError
from .training import NumericError, compare, eval_checkpoint, format_compare_table, train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    res = train(cfg, out)
    print(f"top1_err {res.top1_err:.4f} top5_err {res.top5_err:.4f}")
    print(f"checkpoint {res.checkpoint}")
    print(f"metrics {res.metrics_path}")
    if res.telemetry_path:
        print(f"grad_stats {res.telemetry_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    top1, top5 = eval_checkpoint(cfg, args.checkpoint)
    print(f"top1_err {top1:.4f}")
    print(f"top5_err {top5:.4f}")
    return EXIT_OK


def cmd_validate_routing(args) -> int:
    cfg = _load_config(args)
    graph = cfg.build_graph()
    spec = cfg.routing_spec(graph)
    try:
        report = validate_routing(spec, graph)
    except RoutingError as exc:
        if exc.report is not None:
            print(exc.report.to_text())
        else:
            print(f"error: {exc}")
        return EXIT_CONFIG
    print(report.to_text())
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load_config(args)
    rows = compare(cfg, Path(args.out))
    print(format_compare_table(rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="routegrad", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", required=True, help="run config (YAML)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if out:
            p.add_argument("--out", default="runs/latest", help="output directory")

    p = sub.add_parser("train", help="train a network")
    common(p)
    p.set_defaults(func=cmd_train)
    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    common(p, out=False)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)
    p = sub.add_parser("validate-routing", help="check the routing spec against the architecture")
    common(p, out=False)
    p.set_defaults(func=cmd_validate_routing)
    p = sub.add_parser("compare", help="train standard, multi-loss and relay with one seed")
    common(p)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except RoutingError as exc:
        if exc.report is not None:
            print(exc.report.to_text(), file=sys.stderr)
        print(f"routing error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, CheckpointError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, DataFormatError, DataConsistencyError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
