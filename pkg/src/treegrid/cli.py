"""Command-line entry points: prepare, train, gradcheck, inspect, report."""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields

import numpy as np

from . import nn
from .data import write_image_cache
from .experiment import (
    ExperimentConfig,
    load_config_file,
    prepare_dataset,
    report_to_csv,
    resolve_data_dir,
    run_cv,
    save_report,
)
from .projection import write_ppm


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", help="dataset name (file prefix), e.g. MUTAG")
    p.add_argument(
        "--data-dir",
        help="dataset root directory (default: $TREEGRID_DATA_DIR, then ./data)",
    )
    p.add_argument("--strict", action="store_true", default=None,
                   help="reject disconnected graphs instead of keeping the largest component")


def _add_train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--variant", choices=nn.VARIANTS, help="network operator")
    p.add_argument("--aug", type=int, dest="augmentation",
                   help="images per training graph (1 = canonical only)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int, dest="batch_size")
    p.add_argument("--lr", type=float, dest="learning_rate")
    p.add_argument("--seed", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--precision", choices=("float64", "float32"))
    p.add_argument("--pool-all", action="store_true", default=None,
                   dest="pool_all_steps", help="max-pool over every scan step's outputs")
    p.add_argument("--aug-online", action="store_true", default=None,
                   dest="aug_online", help="experimental: fresh augmentations every epoch")
    p.add_argument("--config", help="TOML-style key = value config file")


def _build_config(args: argparse.Namespace) -> ExperimentConfig:
    """Layer config sources: defaults, then config file, then explicit flags."""
    values: dict = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for f in fields(ExperimentConfig):
        cli_value = getattr(args, f.name, None)
        if cli_value is not None:
            values[f.name] = cli_value
    values["data_dir"] = resolve_data_dir(values.get("data_dir"))
    config = ExperimentConfig(**values)
    if not config.dataset:
        raise SystemExit2("--dataset is required (or set it in --config)")
    return config


class SystemExit2(Exception):
    """Usage error: message goes to stderr, exit status 2."""


def _cmd_prepare(args) -> int:
    config = _build_config(args)
    graphs, profile, trees, images = prepare_dataset(config)
    labels = [g.graph_label for g in graphs]
    write_image_cache(images, labels, args.out)
    h, w, c = images[0].shape
    print(
        f"{config.dataset}: {profile.graph_count} graphs, "
        f"{profile.class_count} classes, node labels {profile.node_label_cardinality}, "
        f"edge labels {profile.edge_label_cardinality}, "
        f"max nodes {profile.max_nodes}, max depth {profile.max_tree_depth}"
    )
    print(f"cached {len(images)} images of shape {h}x{w}x{c} to {args.out}")
    return 0


def _cmd_train(args) -> int:
    config = _build_config(args)
    report = run_cv(config, cache_path=args.cache)
    if args.out:
        save_report(report, args.out)
        print(f"report written to {args.out}", file=sys.stderr)
    s = report["summary"]
    print(
        f"{config.dataset} {config.variant} aug={config.augmentation} "
        f"epochs={config.epochs} seed={config.seed}: "
        f"best {100 * s['mean_best_accuracy']:.2f} +- {100 * s['std_best_accuracy']:.2f} %"
    )
    return 0


def _cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    variants = [args.variant] if args.variant else list(nn.VARIANTS)
    for variant in variants:
        model = nn.build_model(variant, 7, 3, seed=args.seed)
        image = rng.standard_normal((4, 5, 7))
        label = int(rng.integers(3))
        report = nn.grad_check(
            model, image, label, eps=args.eps, tol=args.tol,
            entries_per_block=args.entries, seed=args.seed,
        )
        worst = max(worst, report.max_rel_err)
        blocks = ", ".join(f"{k}={v:.2e}" for k, v in report.per_block.items())
        print(f"{variant}: max relative error {report.max_rel_err:.3e}  ({blocks})")
    ok = worst < args.tol
    print(f"max relative error {worst:.3e} {'<' if ok else '>='} {args.tol:g}: "
          f"{'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


def _cmd_inspect(args) -> int:
    config = _build_config(args)
    graphs, profile, trees, images = prepare_dataset(config)
    if not (0 <= args.index < len(images)):
        raise SystemExit2(f"--index must be in [0, {len(images)})")
    img = images[args.index]
    write_ppm(img, args.out)
    t = trees[args.index]
    h, w, c = img.shape
    print(
        f"graph {args.index}: label {graphs[args.index].graph_label}, "
        f"{graphs[args.index].node_count} nodes, tree depth {t.depth}, "
        f"image {h}x{w}x{c}, {int(img.occupancy.sum())} occupied pixels -> {args.out}"
    )
    return 0


def _cmd_report(args) -> int:
    import json

    with open(args.report, "r", encoding="utf-8") as fh:
        report = json.load(fh)
    csv_text = report_to_csv(report)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
        print(f"csv written to {args.out}", file=sys.stderr)
    else:
        sys.stdout.write(csv_text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treegrid",
        description="Graph classification via center-rooted trees projected to images",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="parse a dataset and cache canonical images")
    _add_data_args(p)
    p.add_argument("--out", required=True, help="cache file to write")
    p.set_defaults(func=_cmd_prepare)

    p = sub.add_parser("train", help="run stratified cross-validation")
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument("--cache", help="canonical-image cache from 'prepare'")
    p.add_argument("--out", help="write the JSON report here")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--variant", choices=nn.VARIANTS,
                   help="check one operator (default: all)")
    p.add_argument("--entries", type=int, default=60,
                   help="entries sampled per parameter block (default 60)")
    p.add_argument("--eps", type=float, default=1e-6,
                   help="finite-difference step")
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("inspect", help="dump one graph's image as a PPM file")
    _add_data_args(p)
    p.add_argument("--index", type=int, default=0, help="graph index")
    p.add_argument("--out", required=True, help="PPM file to write")
    p.set_defaults(func=_cmd_inspect)

    p = sub.add_parser("report", help="render a JSON report as CSV")
    p.add_argument("report", help="JSON report from 'train'")
    p.add_argument("--out", help="CSV file (default: stdout)")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit2 as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
