"""Command line: generate, train, eval, ablate, gradcheck.

Exit codes: 0 success, 1 check or evaluation failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .ablation import evaluate_model, grid_csv, grid_table, specialization_ablation
from .checkpoint import CheckpointFormatError, CheckpointShapeError, CheckpointVersionError, load_checkpoint, save_checkpoint
from .gradcheck import run_gradcheck
from .metrics import MetricError, format_table
from .model import init_params
from .synthdata import DatasetFormatError, generate, read_dataset, split, write_dataset, write_ground_truth
from .training import ConfigError, fit, transfer_train

log = logging.getLogger("vespa")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SPLIT_NAMES = ("train", "val", "test")


class UsageError(Exception):
    pass


def _load_config(args) -> cfgmod.ExperimentConfig:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides += args._seed_keys(args.seed)
    return cfgmod.load(args.config, overrides)


def _write_resolved(out: Path, config: cfgmod.ExperimentConfig) -> None:
    (out / "config.resolved.txt").write_text(cfgmod.dump(config))


def _dataset_path(path: str, default_split: str) -> Path:
    p = Path(path)
    if p.is_dir():
        p = p / f"{default_split}.jsonl"
    if not p.exists():
        raise UsageError(f"dataset not found: {p}")
    return p


def cmd_generate(args) -> int:
    config = _load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data, gt = generate(config.gen)
    parts = split(data, config.split.ratios, config.split.seed)
    names = SPLIT_NAMES if len(parts) == 3 else tuple(f"part{i}" for i in range(len(parts)))
    if args.hide_views:
        hidden = {"dataset": data.views.tolist()}
        hidden.update({n: p.views.tolist() for n, p in zip(names, parts)})
        (out / "hidden_views.json").write_text(json.dumps(hidden, sort_keys=True) + "\n")
        data = data.without_views()
        parts = [p.without_views() for p in parts]
    write_dataset(data, out / "dataset.jsonl")
    for name, part in zip(names, parts):
        write_dataset(part, out / f"{name}.jsonl")
    write_ground_truth(gt, config.gen, out / "ground_truth.json")
    _write_resolved(out, config)
    print(f"wrote {len(data)} samples ({', '.join(f'{n}={len(p)}' for n, p in zip(names, parts))}) to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load_config(args)
    out = Path(args.out)
    data = read_dataset(_dataset_path(args.data, "train"))
    if args.transfer:
        if args.init is None:
            raise UsageError("--transfer needs --init CHECKPOINT with a trained view branch")
        if config.train.view_branch_lr not in (None, 0.0):
            raise UsageError(f"train.view_branch_lr: transfer mode requires 0, got {config.train.view_branch_lr}")
        config = replace(config, train=replace(config.train, view_branch_lr=0.0))
    elif config.model.gated and np.all(data.views < 0):
        raise UsageError("every view label is unknown (-1); use --transfer with a pretrained --init checkpoint")

    if args.init is not None:
        params, _, _ = load_checkpoint(args.init)
        if params.config.input_dim != data.feature_dim or params.config.attribute_count != data.attribute_count:
            raise UsageError(
                f"init checkpoint expects D={params.config.input_dim}, C={params.config.attribute_count}; "
                f"data has D={data.feature_dim}, C={data.attribute_count}"
            )
    else:
        model_cfg = config.model.build(data.feature_dim, data.attribute_count, data.view_count)
        params = init_params(model_cfg, config.model.init_seed)

    out.mkdir(parents=True, exist_ok=True)
    log_lines, timing = [], []

    def record(summary):
        log_lines.append(summary.record())
        timing.append(f"epoch={summary.epoch} wall_ms={summary.wall_ms:.1f}")
        log.info(summary.record())

    trainer = transfer_train if args.transfer else fit
    result = trainer(params, data, config.train, callback=record)
    save_checkpoint(out / "checkpoint.bin", result.params, result.priors, result.state)
    (out / "train_log.txt").write_text("\n".join(log_lines) + "\n")
    (out / "timing.txt").write_text("\n".join(timing) + "\n")
    _write_resolved(out, config)
    print(f"trained {config.train.epochs} epochs; checkpoint at {out / 'checkpoint.bin'}")
    return EXIT_OK


def _load_for_data(checkpoint: str, data):
    params, priors, _ = load_checkpoint(checkpoint)
    if params.config.attribute_count != data.attribute_count:
        raise CheckpointShapeError(
            "expert0", f"checkpoint predicts C={params.config.attribute_count} attributes, data has C={data.attribute_count}"
        )
    if params.config.input_dim != data.feature_dim:
        raise CheckpointShapeError(
            "trunk", f"checkpoint expects D={params.config.input_dim} features, data has D={data.feature_dim}"
        )
    return params, priors


def cmd_eval(args) -> int:
    data = read_dataset(_dataset_path(args.data, "test"))
    params, _ = _load_for_data(args.checkpoint, data)
    threshold = _load_config(args).eval.threshold
    report, _ = evaluate_model(params, data, threshold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = format_table(report)
    (out / "report.txt").write_text(table)
    (out / "report.kv").write_text("".join(f"{k}={v}\n" for k, v in report.records()))
    print(table, end="")
    return EXIT_OK


def cmd_ablate(args) -> int:
    data = read_dataset(_dataset_path(args.data, "test"))
    params, _ = _load_for_data(args.checkpoint, data)
    if np.all(data.views < 0):
        raise UsageError("ablation needs view-labeled data; every view label is -1")
    threshold = _load_config(args).eval.threshold
    grid = specialization_ablation(params, data, threshold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.csv").write_text(grid_csv(grid))
    table = grid_table(grid)
    (out / "ablation.txt").write_text(table)
    print(table, end="")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    report = run_gradcheck(args.seed if args.seed is not None else 0, corrupt=args.corrupt)
    for line in report.lines():
        print(line)
    if not report.passed:
        print("failed parameter groups: " + ", ".join(report.failed_groups))
        return EXIT_FAIL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vespa", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_keys):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")
        keys = [k.split("=")[0] for k in seed_keys(0)]
        p.add_argument("--seed", type=int, help=f"override {', '.join(keys)}" if keys else "accepted, no effect")
        p.set_defaults(_seed_keys=seed_keys)

    p = sub.add_parser("generate", help="write a synthetic dataset, its splits and ground truth")
    common(p, lambda s: [f"gen.seed={s}", f"split.seed={s}"])
    p.add_argument("--out", required=True)
    p.add_argument("--hide-views", action="store_true", help="write view=-1; true views go to hidden_views.json")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model and write checkpoint + log")
    common(p, lambda s: [f"train.seed={s}", f"model.init_seed={s}"])
    p.add_argument("--data", required=True, help="dataset file, or a directory holding train.jsonl")
    p.add_argument("--out", required=True)
    p.add_argument("--init", help="start from this checkpoint")
    p.add_argument("--transfer", action="store_true", help="freeze the view branch; view labels may be unknown")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics report for a checkpoint on a dataset")
    common(p, lambda s: [])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset file, or a directory holding test.jsonl")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="view-unit specialization grid")
    common(p, lambda s: [])
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of all parameter gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except cfgmod.ConfigFileError as exc:
        print(f"config error: {exc}", file=sys.stderr)
    except (UsageError, ConfigError, DatasetFormatError, CheckpointFormatError, CheckpointVersionError, CheckpointShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    except MetricError as exc:
        print(f"evaluation error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
