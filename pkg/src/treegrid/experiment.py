"""Cross-validation experiment harness over the graph -> tree -> image pipeline.

A run is described by an :class:`ExperimentConfig`; every random choice
(fold assignment, parameter init, batch order, augmentation) is derived from
``config.seed`` through tagged seed sequences, so a config reproduces its
JSON report byte for byte apart from wall-clock fields.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import nn
from .data import (
    DatasetProfile,
    Graph,
    GraphImage,
    build_profile,
    largest_component_subgraph,
    load_dataset,
    read_image_cache,
)
from .projection import project
from .trees import GraphConnectivityError, bfs_tree, center_tree

REPORT_SCHEMA_VERSION = 1
TIMING_FIELDS = ("wall_clock_sec", "created_unix")

# seed-derivation tags; never reuse a tag for two purposes
_TAG_FOLDS = 1
_TAG_MODEL = 2
_TAG_ORDER = 3
_TAG_AUG_TREE = 4
_TAG_AUG_PROJ = 5
_TAG_ONLINE = 6

ENV_DATA_DIR = "TREEGRID_DATA_DIR"


def resolve_data_dir(value: str | None) -> str:
    """CLI value, else the TREEGRID_DATA_DIR environment variable, else ./data."""
    return value or os.environ.get(ENV_DATA_DIR) or "data"


def _rng(*parts: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(p) for p in parts]))


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass
class ExperimentConfig:
    """Everything a run depends on; hashed into every report."""

    dataset: str = ""
    data_dir: str = ""
    variant: str = "grid_rnn"
    augmentation: int = 1  # images per graph; 1 = canonical only
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-4
    seed: int = 0
    folds: int = 10
    strict: bool = False
    precision: str = "float64"  # "float64" | "float32"
    pool_all_steps: bool = False
    aug_online: bool = False  # experimental: fresh augmentations every epoch

    def validate(self) -> None:
        if self.augmentation < 1:
            raise ValueError("augmentation multiplier must be >= 1")
        if self.folds < 2:
            raise ValueError("need at least 2 folds")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("bad epochs/batch size")
        if self.variant not in nn.VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.precision not in ("float64", "float32"):
            raise ValueError("precision must be float64 or float32")

    @property
    def dtype(self):
        return np.float64 if self.precision == "float64" else np.float32


def config_hash(config: ExperimentConfig) -> str:
    blob = json.dumps(asdict(config), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def build_id() -> str:
    """Digest of the installed package sources; stamps every report."""
    h = hashlib.sha1()
    pkg = Path(__file__).parent
    for path in sorted(pkg.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:12]


def stratified_folds(labels, folds: int, seed: int) -> list[tuple[list[int], list[int]]]:
    """Disjoint covering folds whose per-class counts are off by at most one.

    Within each class, members are shuffled by the seeded generator and the
    remainder slots go to the currently smallest folds, so overall fold sizes
    stay balanced too.  Returns (train_indices, test_indices) pairs, sorted.
    """
    labels = np.asarray(labels)
    if folds < 2:
        raise ValueError("need at least 2 folds")
    rng = _rng(seed, _TAG_FOLDS)
    fold_members: list[list[int]] = [[] for _ in range(folds)]
    totals = np.zeros(folds, dtype=np.int64)
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if len(members) < folds:
            raise ValueError(
                f"class {int(c)} has {len(members)} samples, fewer than {folds} folds"
            )
        members = members[rng.permutation(len(members))]
        base, extra = divmod(len(members), folds)
        quota = np.full(folds, base, dtype=np.int64)
        order = np.lexsort((np.arange(folds), totals))  # smallest totals first
        quota[order[:extra]] += 1
        pos = 0
        for f in range(folds):
            fold_members[f].extend(int(i) for i in members[pos : pos + quota[f]])
            pos += quota[f]
        totals += quota
    out = []
    everything = set(range(len(labels)))
    for f in range(folds):
        test = sorted(fold_members[f])
        train = sorted(everything.difference(test))
        out.append((train, test))
    return out


@dataclass
class ImagePool:
    """Projected images with their provenance, grouped per graph.

    Image ``gid * per_graph + j`` is replica ``j`` of graph ``gid``; replica
    0 is always the canonical image (test folds only ever see replica 0).
    """

    images: list[GraphImage]
    graph_ids: np.ndarray
    labels: np.ndarray
    per_graph: int

    def indices_for(self, graph_ids) -> list[int]:
        return [
            gid * self.per_graph + j for gid in graph_ids for j in range(self.per_graph)
        ]


def augmentation_replica(
    g: Graph,
    root: int,
    profile: DatasetProfile,
    seed: int,
    gid: int,
    j: int,
    tag: int = 0,
):
    """Shuffled tree and projection for replica ``j`` of graph ``gid``.

    Returns ``(tree, image)``; the root stays the canonical one, only the
    BFS visit order and the sibling layout are randomized.
    """
    tree = bfs_tree(g, root, rng=_rng(seed, tag, gid, j, _TAG_AUG_TREE))
    image = project(tree, g, profile, rng=_rng(seed, tag, gid, j, _TAG_AUG_PROJ))
    return tree, image


def augment_dataset(
    graphs: list[Graph],
    profile: DatasetProfile,
    k: int,
    seed: int,
    trees=None,
    canonical_images=None,
    epoch_tag: int = 0,
) -> ImagePool:
    """Per graph: the canonical image plus k-1 shuffled tree/projection pairs.

    Replica seeds depend only on (seed, graph, replica), so growing ``k``
    extends each graph's replica list without changing existing ones.
    ``epoch_tag`` derives fresh replicas per epoch in online-augmentation
    mode (0 = the fixed pool).
    """
    if k < 1:
        raise ValueError("augmentation multiplier must be >= 1")
    if trees is None:
        trees = [center_tree(g) for g in graphs]
    if canonical_images is None:
        canonical_images = [project(t, g, profile) for t, g in zip(trees, graphs)]
    images: list[GraphImage] = []
    graph_ids: list[int] = []
    labels: list[int] = []
    tag = _TAG_ONLINE + epoch_tag if epoch_tag else 0
    for gid, g in enumerate(graphs):
        images.append(canonical_images[gid])
        for j in range(1, k):
            _, image = augmentation_replica(
                g, trees[gid].root, profile, seed, gid, j, tag
            )
            images.append(image)
        graph_ids.extend([gid] * k)
        labels.extend([g.graph_label] * k)
    return ImagePool(
        images=images,
        graph_ids=np.array(graph_ids, dtype=np.int64),
        labels=np.array(labels, dtype=np.int64),
        per_graph=k,
    )


def prepare_dataset(config: ExperimentConfig, dataset=None):
    """Load (or accept) graphs, resolve connectivity policy, build trees.

    Returns (graphs, profile, trees, canonical_images) with the profile's
    maximum tree depth filled in.
    """
    if dataset is None:
        graphs, profile = load_dataset(config.data_dir, config.dataset)
    else:
        graphs, profile = dataset
    bad = [i for i, g in enumerate(graphs) if not g.connected]
    if bad:
        if config.strict:
            raise GraphConnectivityError(
                f"{len(bad)} disconnected graphs in strict mode (ids {bad[:10]}...)"
                if len(bad) > 10
                else f"disconnected graphs in strict mode: ids {bad}"
            )
        graphs = [
            largest_component_subgraph(g) if not g.connected else g for g in graphs
        ]
        fixed = build_profile(graphs, label_map=profile.label_map)
        fixed.self_loops_dropped = profile.self_loops_dropped
        fixed.duplicate_edges_dropped = profile.duplicate_edges_dropped
        fixed.disconnected_count = len(bad)
        profile = fixed
    trees = [center_tree(g) for g in graphs]
    profile.max_tree_depth = max(t.depth for t in trees)
    canonical_images = [project(t, g, profile) for t, g in zip(trees, graphs)]
    return graphs, profile, trees, canonical_images


def _stack(images: list[GraphImage], dtype) -> np.ndarray:
    return np.stack([img.pixels for img in images]).astype(dtype, copy=False)


def _evaluate(model: nn.Model, pixels: np.ndarray, labels: np.ndarray) -> float:
    correct = 0
    for start in range(0, len(pixels), 256):
        chunk = pixels[start : start + 256]
        probs, _ = nn.forward_batch(model, chunk)
        correct += int(
            (probs.argmax(axis=1) == labels[start : start + 256]).sum()
        )
    return correct / len(pixels)


def _train_fold(
    config: ExperimentConfig,
    fold_idx: int,
    train_pixels_fn,
    train_size: int,
    test_pixels: np.ndarray,
    test_labels: np.ndarray,
    channels: int,
    class_count: int,
):
    model_seed = _derive_seed(config.seed, _TAG_MODEL, fold_idx)
    model = nn.build_model(
        config.variant,
        channels,
        class_count,
        seed=model_seed,
        pool_all_steps=config.pool_all_steps,
        dtype=config.dtype,
    )
    state = nn.adam_init(model)
    order_rng = _rng(config.seed, _TAG_ORDER, fold_idx)

    accuracy_trace: list[float] = []
    loss_trace: list[float] = []
    t0 = time.perf_counter()
    if config.epochs == 0:
        accuracy_trace.append(_evaluate(model, test_pixels, test_labels))
    for epoch in range(config.epochs):
        pixels, labels = train_pixels_fn(epoch)
        order = order_rng.permutation(len(pixels))
        total_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            loss, grads = nn.loss_and_backward_batch(
                model, pixels[batch], labels[batch]
            )
            nn.adam_step(model, grads, state, lr=config.learning_rate)
            total_loss += loss * len(batch)
        loss_trace.append(total_loss / len(order))
        accuracy_trace.append(_evaluate(model, test_pixels, test_labels))
    best_epoch = int(np.argmax(accuracy_trace))
    return {
        "fold": fold_idx,
        "model_seed": model_seed,
        "train_size": int(train_size),
        "test_size": int(len(test_pixels)),
        "best_accuracy": float(max(accuracy_trace)),
        "best_epoch": best_epoch,
        "final_accuracy": float(accuracy_trace[-1]),
        "accuracy_trace": [float(a) for a in accuracy_trace],
        "train_loss_trace": [float(l) for l in loss_trace],
        "wall_clock_sec": time.perf_counter() - t0,
    }


def run_cv(config: ExperimentConfig, dataset=None, cache_path: str | None = None) -> dict:
    """Stratified k-fold cross-validation; returns the full JSON-ready report.

    ``dataset`` may inject pre-loaded ``(graphs, profile)``; ``cache_path``
    substitutes cached canonical images (validated against the dataset).
    Test folds are always evaluated on canonical images.
    """
    config.validate()
    t_run = time.perf_counter()
    graphs, profile, trees, canonical_images = prepare_dataset(config, dataset)
    labels = np.array([g.graph_label for g in graphs], dtype=np.int64)

    image_source = "projection"
    if cache_path:
        cached, cached_labels = read_image_cache(cache_path)
        if len(cached) != len(graphs):
            raise ValueError(
                f"cache has {len(cached)} images for {len(graphs)} graphs"
            )
        if cached and cached[0].shape != canonical_images[0].shape:
            raise ValueError(
                f"cache image shape {cached[0].shape} does not match "
                f"profile shape {canonical_images[0].shape}"
            )
        if not np.array_equal(cached_labels, labels):
            raise ValueError("cache labels disagree with dataset labels")
        for got, want in zip(cached, canonical_images):
            if not np.array_equal(got.pixels, want.pixels):
                raise ValueError("cache pixels disagree with canonical projection")
        canonical_images = cached
        image_source = "cache"

    dtype = config.dtype
    canon_pixels = _stack(canonical_images, dtype)
    online = config.aug_online and config.augmentation > 1
    if online:
        pool = None
        pool_pixels = None
    else:
        pool = augment_dataset(
            graphs,
            profile,
            config.augmentation,
            config.seed,
            trees=trees,
            canonical_images=canonical_images,
        )
        pool_pixels = _stack(pool.images, dtype)

    folds = stratified_folds(labels, config.folds, config.seed)
    # single-threaded BLAS: faster than threaded on these small matrices and
    # keeps reduction order independent of the machine's core count
    with threadpool_limits(limits=1, user_api="blas"):
        fold_reports = []
        for fold_idx, (train_gids, test_gids) in enumerate(folds):
            test_pixels = canon_pixels[test_gids]
            test_labels = labels[test_gids]
            if online:

                def train_pixels_fn(epoch, _gids=train_gids):
                    fresh = augment_dataset(
                        [graphs[i] for i in _gids],
                        profile,
                        config.augmentation,
                        config.seed,
                        trees=[trees[i] for i in _gids],
                        canonical_images=[canonical_images[i] for i in _gids],
                        epoch_tag=epoch + 1,
                    )
                    return _stack(fresh.images, dtype), fresh.labels

            else:
                idx = pool.indices_for(train_gids)
                fixed = (pool_pixels[idx], pool.labels[idx])

                def train_pixels_fn(epoch, _fixed=fixed):
                    return _fixed

            fold_reports.append(
                _train_fold(
                    config,
                    fold_idx,
                    train_pixels_fn,
                    config.augmentation * len(train_gids),
                    test_pixels,
                    test_labels,
                    profile.channels,
                    profile.class_count,
                )
            )

    best = np.array([f["best_accuracy"] for f in fold_reports])
    final = np.array([f["final_accuracy"] for f in fold_reports])
    model = nn.build_model(
        config.variant, profile.channels, profile.class_count, seed=0
    )
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "build_id": build_id(),
        "config": asdict(config),
        "config_hash": config_hash(config),
        "dataset": {
            "graph_count": profile.graph_count,
            "class_count": profile.class_count,
            "node_label_cardinality": profile.node_label_cardinality,
            "edge_label_cardinality": profile.edge_label_cardinality,
            "max_nodes": profile.max_nodes,
            "max_tree_depth": profile.max_tree_depth,
            "channels": profile.channels,
            "disconnected_count": profile.disconnected_count,
            "label_map": {str(k): v for k, v in sorted(profile.label_map.items())},
        },
        "model": {
            "variant": config.variant,
            "hidden": nn.HIDDEN,
            "parameter_count": nn.parameter_count(model),
        },
        "image_source": image_source,
        "folds": fold_reports,
        "summary": {
            "mean_best_accuracy": float(best.mean()),
            "std_best_accuracy": float(best.std()),
            "mean_final_accuracy": float(final.mean()),
            "std_final_accuracy": float(final.std()),
        },
        "wall_clock_sec": time.perf_counter() - t_run,
        "created_unix": time.time(),
    }
    return report


def strip_timing(obj):
    """Deep-copy ``obj`` with wall-clock fields removed (for comparisons)."""
    if isinstance(obj, dict):
        return {
            k: strip_timing(v) for k, v in obj.items() if k not in TIMING_FIELDS
        }
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def report_json(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def save_report(report: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(report_json(report))


def report_to_csv(report: dict) -> str:
    """Flatten a report into a small CSV table (per fold plus summary)."""
    import csv
    import io

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["fold", "best_accuracy", "best_epoch", "final_accuracy", "train_size", "test_size"]
    )
    for f in report["folds"]:
        writer.writerow(
            [
                f["fold"],
                f["best_accuracy"],
                f["best_epoch"],
                f["final_accuracy"],
                f["train_size"],
                f["test_size"],
            ]
        )
    s = report["summary"]
    writer.writerow([])
    writer.writerow(["mean_best", s["mean_best_accuracy"], "", "std_best", s["std_best_accuracy"], ""])
    writer.writerow(["mean_final", s["mean_final_accuracy"], "", "std_final", s["std_final_accuracy"], ""])
    return buf.getvalue()


def load_config_file(path: str) -> dict:
    """Parse a flat TOML-style ``key = value`` file into a config dict.

    Supports quoted strings, booleans, integers, floats, and bare words;
    ``#`` starts a comment.  Keys must be ExperimentConfig field names.
    """
    valid = set(ExperimentConfig.__dataclass_fields__)
    out: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in valid:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = _parse_config_value(value)
    return out


def _parse_config_value(value: str):
    if len(value) >= 2 and value[0] == value[-1] and value[0] in "'\"":
        return value[1:-1]
    if value.lower() in ("true", "false"):
        return value.lower() == "true"
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        pass
    return value
