"""Command line entry point: ``mmfl run|compare|validate|init``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .errors import ConfigurationError, DataError
from .experiment import (
    ExperimentConfig,
    dump_config,
    load_config,
    run_experiment,
    run_scheme_comparison,
    summary_path,
    validate_config,
)

log = logging.getLogger("mmfl")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if args.seed is not None:
        changes["base_seed"] = args.seed
    if args.replicates is not None:
        changes["replicates"] = args.replicates
    if getattr(args, "output", None) is not None and args.command == "run":
        changes["output_path"] = args.output
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _cmd_validate(args) -> int:
    status = EXIT_OK
    for path in args.configs:
        errors = validate_config(_apply_overrides(load_config(path), args))
        if errors:
            status = EXIT_CONFIG
            print(f"{path}: invalid")
            for e in errors:
                print(f"  - {e}")
        else:
            print(f"{path}: ok")
    return status


def _cmd_run(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    result = run_experiment(cfg, workers=args.workers)
    last = result.summary[-1]
    conv = result.converged_accuracy()
    print(f"{cfg.name}: {cfg.replicates} replicates, {len(result.rows)} metric rows")
    print(f"  final round {last.round}: accuracy {last.mean_accuracy:.4f} +/- {last.std_error:.4f} (SE)")
    print(f"  converged accuracy {conv.mean():.4f}")
    if cfg.output_path:
        print(f"  metrics: {cfg.output_path}\n  summary: {summary_path(cfg.output_path)}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    cfgs = [_apply_overrides(load_config(p), args) for p in args.configs]
    out = Path(args.output) if args.output else Path("comparison.csv")
    cfgs = [
        dataclasses.replace(c, output_path=str(out.with_name(f"{out.stem}.{i}.{c.name}.metrics.csv")))
        for i, c in enumerate(cfgs)
    ]
    table, _ = run_scheme_comparison(cfgs, workers=args.workers, output_path=out)
    width = max(len(r.name) for r in table)
    print(f"{'scheme':{width}s}  converged  std_err  rounds_to_95%")
    for r in table:
        rt = "-" if r.rounds_to_threshold is None else str(r.rounds_to_threshold)
        print(f"{r.name:{width}s}  {r.converged_accuracy:9.4f}  {r.std_error:7.4f}  {rt}")
    print(f"comparison table: {out}")
    return EXIT_OK


def _cmd_init(args) -> int:
    dump_config(ExperimentConfig(), args.path)
    print(f"wrote default config to {args.path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmfl", description="Multimodal semi-supervised FL simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def overrides(p):
        p.add_argument("--seed", type=int, help="override base_seed")
        p.add_argument("--replicates", type=int, help="override replicates")

    p = sub.add_parser("run", help="run one experiment config")
    p.add_argument("config")
    overrides(p)
    p.add_argument("--output", help="metrics CSV path (summary is written next to it)")
    p.add_argument("--workers", type=int, default=1, help="replicates run in parallel")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("compare", help="run several configs on shared data and tabulate them")
    p.add_argument("configs", nargs="+")
    overrides(p)
    p.add_argument("--output", help="comparison CSV path (default comparison.csv)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("validate", help="check configs without running them")
    p.add_argument("configs", nargs="+")
    overrides(p)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("init", help="write the default config file")
    p.add_argument("path")
    p.set_defaults(func=_cmd_init)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # invariant violations and bugs
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
