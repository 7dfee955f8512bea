"""Command-line entry point.

    groupdistil gen-data   --out DIR [--config FILE]
    groupdistil train      --method M --out DIR [--config FILE]
                           [--teacher CKPT] [--seed N]
    groupdistil experiment [--config FILE] [--out DIR] [--jobs N]
    groupdistil show-config

All commands are deterministic given their config and seeds: running
one twice produces byte-identical files. Exit codes: 0 success,
2 usage or config problem, 3 numeric failure during training, 4 I/O.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import generate, save_dataset
from .errors import ConfigError, DataError, NumericError, ShapeError
from .experiment import (
    default_experiment_config,
    load_experiment_config,
    run_experiment,
    save_experiment_config,
)
from .network import init_mlp
from .training import (
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train_for_method,
    write_metrics_json,
    write_run_csv,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _load_config(path: str | None):
    if path is None:
        return default_experiment_config()
    return load_experiment_config(path)


def cmd_gen_data(args) -> int:
    cfg = _load_config(args.config)
    train, test = generate(cfg.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(train, out / "train.csv")
    save_dataset(test, out / "test.csv")
    print(f"wrote {out / 'train.csv'} and {out / 'test.csv'}")
    print(f"train group counts: {train.domain_counts()}")
    print(f"test group counts:  {test.domain_counts()}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    needs_teacher = args.method in ("kd", "group_distil")
    if needs_teacher and args.teacher is None:
        raise ConfigError(f"--method {args.method} requires --teacher")
    if not needs_teacher and args.teacher is not None:
        raise ConfigError(f"--method {args.method} does not take --teacher")

    arm_name = {"group_dro": "dro_student", "kd": "kd", "group_distil": "group_distil"}
    arm = cfg.arm(arm_name[args.method])
    seed = args.seed if args.seed is not None else arm.train.seed
    run_cfg = replace(arm.train, seed=seed)

    train, test = generate(cfg.data)
    teacher = load_checkpoint(args.teacher) if needs_teacher else None
    init = init_mlp(
        arm.dims(cfg.data.feature_dim, cfg.data.num_classes),
        arm.activation,
        np.random.default_rng(seed),
    )
    params, record = train_for_method(args.method, init, teacher, train, run_cfg)
    record.metrics = evaluate(params, test, cfg.data.train_group_proportions)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, out / "checkpoint.json")
    write_run_csv(record, train.num_domains, out / "run.csv")
    write_metrics_json(record, out / "metrics.json")
    m = record.metrics
    print(f"method={args.method} seed={seed} steps={run_cfg.steps}")
    print(f"per-group accuracy: {[round(a, 4) for a in m.per_group_accuracy]}")
    print(
        f"worst-group {m.worst_group_accuracy:.4f}  "
        f"average {m.average_accuracy:.4f}  "
        f"adjusted {m.adjusted_average_accuracy:.4f}"
    )
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _load_config(args.config)
    if args.out is not None:
        cfg = replace(cfg, output_dir=args.out)
    jobs = args.jobs
    if jobs is None:
        jobs = int(os.environ.get("GROUPDISTIL_JOBS", "1"))
    rows = run_experiment(cfg, jobs=jobs)
    summary = Path(cfg.output_dir) / "summary.txt"
    print(summary.read_text(), end="")
    print(f"summary written to {Path(cfg.output_dir) / 'summary.csv'}")
    return EXIT_OK


def cmd_show_config(args) -> int:
    save_experiment_config(default_experiment_config(), "/dev/stdout")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="groupdistil",
        description="Group-robust knowledge distillation on a synthetic "
        "sub-population-shift benchmark.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate and write the dataset files")
    p.add_argument("--config", help="experiment config JSON (default: built-in)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model arm")
    p.add_argument("--config", help="experiment config JSON (default: built-in)")
    p.add_argument(
        "--method",
        required=True,
        choices=("group_dro", "kd", "group_distil"),
    )
    p.add_argument("--teacher", help="teacher checkpoint JSON (kd/group_distil)")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("experiment", help="run the multi-seed comparison")
    p.add_argument("--config", help="experiment config JSON (default: built-in)")
    p.add_argument("--out", help="override the configured output directory")
    p.add_argument(
        "--jobs",
        type=int,
        help="parallel seed jobs (default: $GROUPDISTIL_JOBS or 1)",
    )
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("show-config", help="print the default config JSON")
    p.set_defaults(func=cmd_show_config)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ShapeError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
