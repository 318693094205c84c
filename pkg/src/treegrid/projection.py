"""Projection of rooted trees into fixed-size images with block layout.

Each tree layer fills one image row.  A node occupies a contiguous span of
``descendant_count + 1`` columns with its feature vector replicated across the
span; the row below starts the node's block with one empty separator pixel,
then the children's spans.  Empty pixels propagate one column straight down,
so every row of a tree's block is exactly ``node_count`` columns wide and the
layout meets the width lower bound with equality.
"""

from __future__ import annotations

import numpy as np

from .data import DatasetProfile, Graph, GraphImage
from .trees import Tree


class ImageSizeError(ValueError):
    """A tree does not fit the profile's image dimensions."""


def required_width(t: Tree) -> int:
    """Minimum number of image columns to lay out ``t``: its node count."""
    return t.node_count


def node_features(g: Graph, profile: DatasetProfile, tree: Tree) -> np.ndarray:
    """Per-node pixel feature vectors: one-hot node label ++ edge-label block.

    The edge block one-hot encodes the label of the edge to the parent; it is
    all-zero for the root, and for every node when the dataset carries no edge
    labels.
    """
    sv, se = profile.node_label_cardinality, profile.edge_label_cardinality
    feats = np.zeros((g.node_count, sv + se), dtype=np.float32)
    feats[np.arange(g.node_count), g.node_labels] = 1.0
    if profile.has_edge_labels:
        for v in range(g.node_count):
            lab = int(tree.tree_edge_label[v])
            if lab >= 0:  # root has no parent edge
                feats[v, sv + lab] = 1.0
    return feats


def project(
    tree: Tree,
    g: Graph,
    profile: DatasetProfile,
    rng: np.random.Generator | None = None,
) -> GraphImage:
    """Lay out ``tree`` into a ``max_tree_depth x max_nodes`` image.

    With ``rng`` given, each node's children list is permuted before layout
    (the sibling-order augmentation); the canonical order is the tree's own.
    Unused rows and columns stay zero.
    """
    height, width = profile.max_tree_depth, profile.max_nodes
    if tree.node_count > width:
        raise ImageSizeError(
            f"tree has {tree.node_count} nodes but the image is {width} columns wide"
        )
    if tree.depth > height:
        raise ImageSizeError(
            f"tree depth {tree.depth} exceeds image height {height}"
        )
    feats = node_features(g, profile, tree)
    span = tree.descendant_count + 1

    pixels = np.zeros((height, width, profile.channels), dtype=np.float32)
    occupancy = np.zeros((height, width), dtype=bool)
    source = np.full((height, width), -1, dtype=np.int32)

    layer: list[int | None] = [tree.root]
    for row in range(tree.depth):
        col = 0
        next_layer: list[int | None] = []
        for item in layer:
            if item is None:
                col += 1  # empty pixels propagate straight down
                next_layer.append(None)
            else:
                w = int(span[item])
                pixels[row, col : col + w] = feats[item]
                occupancy[row, col : col + w] = True
                source[row, col : col + w] = item
                col += w
                kids = tree.children[item]
                if rng is not None and len(kids) > 1:
                    kids = [kids[i] for i in rng.permutation(len(kids))]
                next_layer.append(None)
                next_layer.extend(kids)
        layer = next_layer
    return GraphImage(pixels=pixels, occupancy=occupancy, source_node=source)


def _span_of(source: np.ndarray, v: int) -> tuple[int, int, int] | None:
    """(row, first_col, last_col) of node ``v``, or None if not a single
    contiguous span within one row."""
    rows, cols = np.nonzero(source == v)
    if rows.size == 0 or not np.all(rows == rows[0]):
        return None
    lo, hi = int(cols.min()), int(cols.max())
    if cols.size != hi - lo + 1:
        return None
    return int(rows[0]), lo, hi


def verify_topology(img: GraphImage, tree: Tree) -> bool:
    """Check the two layout guarantees against the tree the image came from.

    (a) the children of a common parent occupy one contiguous block of
    columns within a single row, and (b) every child's span lies strictly
    inside its parent's span minus the separator column directly below the
    parent's first column.  Sibling order is free, so shuffled projections of
    the same tree pass too.
    """
    if img.source_node is None:
        raise ValueError("verify_topology needs an image with a source_node map")
    src = img.source_node
    spans = {}
    for v in range(tree.node_count):
        s = _span_of(src, v)
        if s is None:
            return False
        spans[v] = s

    for p in range(tree.node_count):
        kids = tree.children[p]
        if not kids:
            continue
        prow, plo, phi = spans[p]
        kid_spans = sorted(spans[k] for k in kids)
        for row, lo, hi in kid_spans:
            if row != prow + 1:
                return False
            if lo <= plo or hi > phi:  # strictly inside, separator excluded
                return False
        for (_, _, prev_hi), (_, lo, _) in zip(kid_spans, kid_spans[1:]):
            if lo != prev_hi + 1:  # siblings must stay connected
                return False
        if prow + 1 < img.occupancy.shape[0] and img.occupancy[prow + 1, plo]:
            return False  # separator pixel below the parent's first column
    return True


def write_ppm(img: GraphImage, path: str) -> None:
    """Dump occupancy as a binary P6 image (white = occupied pixel)."""
    h, w = img.occupancy.shape
    rgb = np.where(img.occupancy[..., None], 255, 0).astype(np.uint8)
    rgb = np.repeat(rgb, 3, axis=-1) if rgb.shape[-1] == 1 else rgb
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())
