"""Command-line front end: generate, train, eval, mask-eval, compare.

Every command takes an optional config file (key = value lines) plus
repeatable ``--set key=value`` overrides; dedicated flags win over both.
All CSV outputs have fixed headers and are written deterministically.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from cpcm import config as cfg
from cpcm.cloud import sample_weak_labels, voxel_downsample
from cpcm.config import ConfigError, RunConfig, load_run_config
from cpcm.evaluation import evaluate_scenes, masked_evaluation
from cpcm.model import load_params, save_params
from cpcm.scenes import generate_dataset, load_manifest
from cpcm.trainer import TRAIN_MODES, train

METRICS_HEADER = "step,epoch,lr,l_seg,l_consis,l_mask,total"
MASK_EVAL_HEADER = "ratio,miou_mean,miou_sd"
COMPARE_HEADER = "mode,budget,miou_mean,miou_sd"
EVAL_HEADER = "class,iou"


def _fmt(value: float) -> str:
    return repr(float(value))


def _write_lines(path: Path, lines: list[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


def _overrides(args) -> dict[str, str]:
    overrides: dict[str, str] = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def _derived_seed(*parts: int) -> int:
    return int(np.random.default_rng(list(parts)).integers(0, 2**31 - 1))


def _prepare_scenes(run_config: RunConfig, data_dir):
    train_full, eval_full, num_classes = load_manifest(data_dir)
    voxel = run_config.data_voxel_size

    def prep(scene):
        cloud, labels = scene
        if voxel > 0:
            return voxel_downsample(cloud, labels, voxel)
        return cloud, labels.copy()

    return [prep(s) for s in train_full], [prep(s) for s in eval_full], num_classes


def _weak_dataset(train_scenes, num_classes, budget: str, label_seed: int):
    rng = np.random.default_rng(label_seed)
    dataset = []
    for cloud, full_labels in train_scenes:
        weak = sample_weak_labels(
            full_labels,
            num_classes,
            seed=int(rng.integers(0, 2**31 - 1)),
            **cfg.budget_kwargs(budget),
        )
        dataset.append((cloud, weak))
    return dataset


def _train_once(run_config: RunConfig, train_scenes, eval_scenes, num_classes):
    """Sample weak labels, train, and return (params, history, eval mIoU)."""
    sizes = [cloud.n for cloud, _ in train_scenes]
    effective = cfg.effective_budget_ratio(run_config.train_budget, sizes)
    dataset = _weak_dataset(
        train_scenes, num_classes, run_config.train_budget, run_config.label_seed
    )
    train_config = cfg.build_train_config(run_config, effective)
    model_config = cfg.build_model_config(run_config, num_classes)
    params, history = train(dataset, train_config, model_config, eval_scenes=eval_scenes or None)
    final_miou = history.epoch_mious[-1][1] if history.epoch_mious else float("nan")
    return params, history, final_miou


def cmd_generate(args) -> int:
    run_config = load_run_config(args.config, _overrides(args))
    if args.seed is not None:
        run_config.data_seed = args.seed
    total = args.scenes
    n_eval = args.eval_scenes if args.eval_scenes is not None else max(1, total // 5)
    n_train = total - n_eval
    if n_train < 1:
        raise ConfigError(f"--scenes {total} with {n_eval} eval scenes leaves no train scenes")
    scene_config = cfg.build_scene_config(run_config)
    train_scenes, eval_scenes = generate_dataset(
        n_train, n_eval, scene_config, seed=run_config.data_seed, out_dir=args.out
    )
    points = sum(c.n for c, _ in train_scenes + eval_scenes)
    print(
        f"wrote {total} scenes ({n_train} train, {n_eval} eval), "
        f"{points} points total, to {args.out}"
    )
    return 0


def cmd_train(args) -> int:
    overrides = _overrides(args)
    if args.mode:
        overrides["train.mode"] = args.mode
    if args.budget:
        overrides["train.budget"] = args.budget
    run_config = load_run_config(args.config, overrides)
    train_scenes, eval_scenes, num_classes = _prepare_scenes(run_config, args.data)
    if not train_scenes:
        raise ConfigError(f"{args.data}: manifest lists no train scenes")
    params, history, final_miou = _train_once(run_config, train_scenes, eval_scenes, num_classes)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_params(params, out_dir / "checkpoint.txt")
    lines = [METRICS_HEADER]
    for r in history.steps:
        lines.append(
            f"{r.step},{r.epoch},{_fmt(r.lr)},{_fmt(r.seg)},{_fmt(r.consis)},"
            f"{_fmt(r.mask)},{_fmt(r.total)}"
        )
    _write_lines(out_dir / "metrics.csv", lines)

    last = history.steps[-1]
    summary = (
        f"mode={run_config.train_mode} budget={run_config.train_budget} "
        f"steps={len(history.steps)} final(seg={last.seg:.4f}, consis={last.consis:.4f}, "
        f"mask={last.mask:.4f})"
    )
    if history.epoch_mious:
        summary += f" eval_miou={final_miou:.4f}"
    print(summary)
    print(f"checkpoint and metrics written to {out_dir}")
    return 0


def _eval_split(args, run_config: RunConfig):
    train_scenes, eval_scenes, num_classes = _prepare_scenes(run_config, args.data)
    scenes = eval_scenes if args.split == "eval" else train_scenes
    if not scenes:
        raise ConfigError(f"{args.data}: no scenes in the {args.split} split")
    return scenes, num_classes


def cmd_eval(args) -> int:
    run_config = load_run_config(args.config, _overrides(args))
    params = load_params(args.checkpoint)
    scenes, _ = _eval_split(args, run_config)
    ious, pooled = evaluate_scenes(params, scenes)
    print(f"{'class':>8}  iou")
    for index, iou in enumerate(ious):
        shown = "absent" if np.isnan(iou) else f"{iou:.4f}"
        print(f"{index:>8}  {shown}")
    print(f"{'miou':>8}  {pooled:.4f}")
    if args.out:
        lines = [EVAL_HEADER]
        lines += [f"{i},{_fmt(v)}" for i, v in enumerate(ious)]
        lines.append(f"mean,{_fmt(pooled)}")
        _write_lines(Path(args.out), lines)
    return 0


def cmd_mask_eval(args) -> int:
    run_config = load_run_config(args.config, _overrides(args))
    params = load_params(args.checkpoint)
    scenes, _ = _eval_split(args, run_config)
    ratios = cfg._parse_float_list(args.ratios) if args.ratios else run_config.eval_ratios
    if args.region_size is not None:
        region_size = args.region_size
    else:
        effective = cfg.effective_budget_ratio(
            run_config.train_budget, [cloud.n for cloud, _ in scenes]
        )
        region_size = cfg.resolve_mask_and_weights(run_config, effective)[0].region_size
    seed_rng = np.random.default_rng(run_config.mask_seed)
    seeds = [int(s) for s in seed_rng.integers(0, 2**31 - 1, size=args.seeds)]
    rows = masked_evaluation(params, scenes, ratios, region_size, seeds)
    lines = [MASK_EVAL_HEADER]
    for row in rows:
        print(f"ratio={row.ratio:.2f}  miou={row.miou_mean:.4f} +- {row.miou_sd:.4f}")
        lines.append(f"{_fmt(row.ratio)},{_fmt(row.miou_mean)},{_fmt(row.miou_sd)}")
    _write_lines(Path(args.out), lines)
    return 0


def cmd_compare(args) -> int:
    run_config = load_run_config(args.config, _overrides(args))
    train_scenes, eval_scenes, num_classes = _prepare_scenes(run_config, args.data)
    if not eval_scenes:
        raise ConfigError(f"{args.data}: compare needs an eval split")
    budgets = [b.strip() for b in args.budgets.split(",") if b.strip()]
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for mode in modes:
        if mode not in TRAIN_MODES:
            raise ConfigError(f"unknown mode {mode!r}; choose from {TRAIN_MODES}")

    def run_cell(cell_config: RunConfig, budget_index: int, rep: int) -> float:
        cell = replace(
            cell_config,
            label_seed=_derived_seed(run_config.label_seed, budget_index, rep),
            train_seed=_derived_seed(run_config.train_seed, rep),
        )
        _, _, final = _train_once(cell, train_scenes, eval_scenes, num_classes)
        return final

    summary = [COMPARE_HEADER]
    for budget_index, budget in enumerate(budgets):
        for mode in modes:
            scores = []
            for rep in range(args.seeds):
                cell = replace(run_config, train_mode=mode, train_budget=budget)
                scores.append(run_cell(cell, budget_index, rep))
                print(
                    f"[compare] budget={budget} mode={mode} rep={rep} "
                    f"miou={scores[-1]:.4f}",
                    flush=True,
                )
            mean = float(np.mean(scores))
            sd = float(np.std(scores, ddof=1)) if len(scores) > 1 else 0.0
            summary.append(f"{mode},{budget},{_fmt(mean)},{_fmt(sd)}")
            print(f"[compare] budget={budget} mode={mode}: {mean:.4f} +- {sd:.4f}", flush=True)
    out_dir = Path(args.out)
    _write_lines(out_dir / "compare.csv", summary)

    if args.sweep:
        if not args.sweep.startswith("mask_ratio="):
            raise ConfigError(f"--sweep supports mask_ratio=..., got {args.sweep!r}")
        ratios = cfg._parse_float_list(args.sweep.split("=", 1)[1])
        sweep_lines = [MASK_EVAL_HEADER]
        for ratio in ratios:
            scores = []
            for rep in range(args.seeds):
                cell = replace(
                    run_config,
                    train_mode="cpcm",
                    train_budget=budgets[0],
                    mask_ratio=ratio,
                )
                scores.append(run_cell(cell, 0, rep))
            mean = float(np.mean(scores))
            sd = float(np.std(scores, ddof=1)) if len(scores) > 1 else 0.0
            sweep_lines.append(f"{_fmt(ratio)},{_fmt(mean)},{_fmt(sd)}")
            print(f"[sweep] mask_ratio={ratio}: {mean:.4f} +- {sd:.4f}", flush=True)
        _write_lines(out_dir / "mask_ratio_sweep.csv", sweep_lines)
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="key = value config file")
    parser.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cpcm",
        description="Weakly-supervised point cloud segmentation on procedural scenes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a procedural dataset and its manifest")
    p.add_argument("--scenes", type=int, default=25, help="total scene count")
    p.add_argument("--eval-scenes", type=int, default=None, help="scenes held out for eval")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="overrides data_seed")
    _add_common(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one model on a generated dataset")
    p.add_argument("--data", required=True, help="dataset directory with manifest.txt")
    p.add_argument("--out", required=True, help="output directory for checkpoint and metrics")
    p.add_argument("--mode", choices=TRAIN_MODES, default=None)
    p.add_argument("--budget", default=None, help="label budget: ratio (0.001) or count (3)")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="mIoU of a checkpoint on one split")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "eval"), default="eval")
    p.add_argument("--out", default=None, help="optional CSV path")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("mask-eval", help="mIoU under region-masked colors at several ratios")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ratios", default=None, help="comma list, e.g. 0,0.2,0.4")
    p.add_argument("--seeds", type=int, default=3, help="mask seeds per ratio")
    p.add_argument("--region-size", type=int, default=None)
    p.add_argument("--split", choices=("train", "eval"), default="eval")
    p.add_argument("--out", required=True, help="CSV path")
    _add_common(p)
    p.set_defaults(func=cmd_mask_eval)

    p = sub.add_parser("compare", help="train all modes over budgets and seed replicates")
    p.add_argument("--data", required=True)
    p.add_argument("--budgets", default="0.001")
    p.add_argument("--seeds", type=int, default=3, help="seed replicates per cell")
    p.add_argument("--modes", default="ce_only,consis_baseline,cpcm")
    p.add_argument("--sweep", default=None, help="e.g. mask_ratio=0.15,0.45,0.75,0.9")
    p.add_argument("--out", required=True, help="output directory for summary CSVs")
    _add_common(p)
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
