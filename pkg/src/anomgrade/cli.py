"""Command-line entry point.

Subcommands mirror the pipeline stages::

    anomgrade config init --out config.json
    anomgrade synth        --config config.json
    anomgrade pipeline     --config config.json
    anomgrade pretrain     --config config.json [--seed 1]
    anomgrade score        --config config.json [--seed 1] [--stage pretrain|retrain]
    anomgrade pseudo-label --config config.json [--seed 1]
    anomgrade denoise      --config config.json [--seed 1]
    anomgrade retrain      --config config.json [--seed 1]
    anomgrade evaluate     --config config.json [--seed 1] [--stage ...]
    anomgrade report       --config config.json [--baseline-csv scores.csv] [--force]

Without ``--seed``, per-seed stages run for every seed listed in the config.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import pipeline
from .config import default_config, load_config, save_config
from .errors import GradingError
from .training import PRETRAIN, RETRAIN

# Directory for downloaded backbone weights and text-image models; maps onto
# torch hub's cache location.
CACHE_ENV_VAR = "ANOMGRADE_CACHE_DIR"


def _apply_cache_dir() -> None:
    cache = os.environ.get(CACHE_ENV_VAR)
    if cache:
        os.environ.setdefault("TORCH_HOME", cache)


def _add_common(parser: argparse.ArgumentParser, seed: bool = True) -> None:
    parser.add_argument("--config", required=True, type=Path, help="run config JSON")
    parser.add_argument("--run-dir", type=Path, default=None, help="override run directory")
    parser.add_argument("--scorer", choices=["mock", "production"], default=None,
                        help="override text-image scorer selection")
    if seed:
        parser.add_argument("--seed", type=int, default=None,
                            help="run only this seed (default: every config seed)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anomgrade",
                                     description="few-shot continuous severity grading")
    sub = parser.add_subparsers(dest="command", required=True)

    p_config = sub.add_parser("config", help="configuration helpers")
    config_sub = p_config.add_subparsers(dest="config_command", required=True)
    p_init = config_sub.add_parser("init", help="write a full-default config file")
    p_init.add_argument("--out", type=Path, default=Path("config.json"))
    p_init.add_argument("--dataset-root", default="corpus")
    p_init.add_argument("--run-dir", default="runs/default")
    p_init.add_argument("--seeds", default="1,2,3,4,5", help="comma-separated seed list")

    p_synth = sub.add_parser("synth", help="generate the synthetic corpus")
    _add_common(p_synth, seed=False)
    p_synth.add_argument("--corpus-seed", type=int, default=0)

    for name in ("pretrain", "pseudo-label", "denoise", "retrain"):
        _add_common(sub.add_parser(name, help=f"run the {name} stage"))

    for name in ("score", "evaluate"):
        p = sub.add_parser(name, help=f"run the {name} stage")
        _add_common(p)
        p.add_argument("--stage", choices=[PRETRAIN, RETRAIN], default=PRETRAIN,
                       help="which checkpoint's outputs to use")

    p_report = sub.add_parser("report", help="aggregate metrics, table and plots")
    _add_common(p_report, seed=False)
    p_report.add_argument("--baseline-csv", type=Path, default=None,
                          help="external score CSV (columns id,score) to compare against")
    p_report.add_argument("--force", action="store_true",
                          help="aggregate even if artifact digests mismatch")

    _add_common(sub.add_parser("pipeline", help="run every stage for every seed"), seed=False)
    return parser


def _load(args: argparse.Namespace):
    cfg = load_config(args.config)
    if args.run_dir is not None:
        cfg.run_dir = args.run_dir
    if getattr(args, "scorer", None):
        cfg.scorer = args.scorer
    cfg.validate()
    return cfg


def _seeds(cfg, args: argparse.Namespace) -> list[int]:
    if getattr(args, "seed", None) is not None:
        return [args.seed]
    return list(cfg.seeds)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _apply_cache_dir()
    try:
        if args.command == "config":
            seeds = [int(s) for s in str(args.seeds).split(",") if s.strip()]
            save_config(args.out, default_config(dataset_root=args.dataset_root,
                                                 run_dir=args.run_dir, seeds=seeds))
            print(f"wrote {args.out}")
            return 0

        cfg = _load(args)
        if args.command == "synth":
            pipeline.stage_synth(cfg, corpus_seed=args.corpus_seed)
        elif args.command == "pipeline":
            pipeline.run_pipeline(cfg)
        elif args.command == "report":
            pipeline.stage_report(cfg, baseline_csv=args.baseline_csv, force=args.force)
        else:
            stage_fn = {
                "pretrain": pipeline.stage_pretrain,
                "pseudo-label": pipeline.stage_pseudo_label,
                "denoise": pipeline.stage_denoise,
                "retrain": pipeline.stage_retrain,
            }
            for seed in _seeds(cfg, args):
                if args.command in stage_fn:
                    stage_fn[args.command](cfg, seed)
                elif args.command == "score":
                    pipeline.stage_score(cfg, seed, stage=args.stage)
                elif args.command == "evaluate":
                    pipeline.stage_evaluate(cfg, seed, stage=args.stage)
        return 0
    except GradingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
