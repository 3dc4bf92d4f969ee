"""Command-line entry point.

    cnlqnn search --config cfg.json --out runs/a
    cnlqnn attack --config cfg.json --model runs/a --out runs/a
    cnlqnn noise  --model runs/a --out runs/a
    cnlqnn ablate --config cfg.json --out runs/ablation
    cnlqnn report runs/a runs/ablation --out runs/report

Exit codes: 0 success, 2 invalid config, 3 data error, 4 missing artifacts.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

from .experiment import (
    ConfigError,
    DataError,
    ExperimentConfig,
    MissingArtifactError,
    model_config_for,
    run_ablate,
    run_attack,
    run_noise,
    run_search,
)

log = logging.getLogger("cnlqnn")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH", help="JSON experiment config")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
    p.add_argument("--threads", type=int, help="worker threads for the simulation kernels")
    p.add_argument("--deterministic", action="store_true", default=None,
                   help="single-thread reproducible mode")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="cnlqnn", description="Robust quantum classifier search and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("search", parents=[common], help="architecture search and final training")
    for name, text in (("attack", "white-box and transfer attacks"), ("noise", "circuit-noise evaluation")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--model", metavar="DIR", required=True, help="directory written by `search`")
    sub.add_parser("ablate", parents=[common], help="train with and without the classical noise layer")
    p = sub.add_parser("report", parents=[common], help="merge run directories into summary tables and figures")
    p.add_argument("runs", nargs="+", metavar="RUN_DIR")
    p.add_argument("--no-figures", action="store_true")
    return parser


def _overrides(args) -> dict:
    keys = ("seed", "out", "threads", "deterministic")
    return {k: getattr(args, k) for k in keys if getattr(args, k) is not None}


def _resolve(args) -> ExperimentConfig:
    overrides = _overrides(args)
    if getattr(args, "model", None):
        return model_config_for(args.model, overrides, args.config)
    if args.config:
        return ExperimentConfig.load(args.config, overrides)
    return ExperimentConfig.from_dict(overrides)


def _set_threads(n: int) -> None:
    import numba

    # the kernels are serial; this only bounds numba's pool for parallel builds
    numba.config.THREADING_LAYER = "workqueue"
    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(name)s %(message)s")
    try:
        if args.command == "report":
            from .report import write_report

            try:
                merged = write_report(args.runs, args.out or "report", figures=not args.no_figures)
            except ValueError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return 2
            print(f"{len(merged)} rows -> {args.out or 'report'}")
            return 0
        cfg = _resolve(args)
        _set_threads(1 if cfg.deterministic else cfg.threads)
        if args.command == "search":
            res = run_search(cfg)
            print(f"val_accuracy={res['val_accuracy']:.4f} test_accuracy={res['test_accuracy']:.4f}")
        elif args.command == "attack":
            rows = run_attack(cfg, args.model)
            print(f"{len(rows)} attack rows -> {cfg.out}/attack.csv")
        elif args.command == "noise":
            rows = run_noise(cfg, args.model)
            print(f"{len(rows)} noise rows -> {cfg.out}/noise.csv")
        elif args.command == "ablate":
            rows = run_ablate(cfg)
            print(f"robust accuracy delta {rows[-1]['robust_acc']:+.4f} -> {cfg.out}/ablation.csv")
    except (ConfigError, DataError, MissingArtifactError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
