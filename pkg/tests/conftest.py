"""Shared fixtures: tiny graphs, TU-format file builders, random generators."""

from __future__ import annotations

import os

import numpy as np
import pytest

from treegrid.data import Graph


def make_graph(n, edges, node_labels=None, edge_labels=None, label=0):
    """Build a Graph from loose edge pairs (normalized and sorted here)."""
    norm = sorted((min(u, v), max(u, v)) for u, v in edges)
    if node_labels is None:
        node_labels = np.zeros(n, dtype=np.int64)
    el = None
    if edge_labels is not None:
        pairs = sorted(zip(((min(u, v), max(u, v)) for u, v in edges), edge_labels))
        norm = [p for p, _ in pairs]
        el = np.array([l for _, l in pairs], dtype=np.int64)
    return Graph(
        node_count=n,
        edges=norm,
        node_labels=np.asarray(node_labels, dtype=np.int64),
        edge_labels=el,
        graph_label=label,
    )


def triangle():
    return make_graph(3, [(0, 1), (1, 2), (0, 2)])


def path3():
    return make_graph(3, [(0, 1), (1, 2)])


def star(n_leaves, hub_first=True):
    """Hub plus leaves; hub is node 0 unless hub_first is False (then last)."""
    hub = 0 if hub_first else n_leaves
    others = [i for i in range(n_leaves + 1) if i != hub]
    return make_graph(n_leaves + 1, [(hub, o) for o in others])


def four_cycle():
    return make_graph(4, [(0, 1), (1, 2), (2, 3), (0, 3)])


def random_connected_graph(rng, n_max=12, node_label_card=3, edge_label_card=None):
    """Random connected graph: a random tree plus random extra edges."""
    n = int(rng.integers(1, n_max + 1))
    edges = set()
    for v in range(1, n):
        u = int(rng.integers(0, v))
        edges.add((u, v))
    extra = int(rng.integers(0, n))
    for _ in range(extra):
        u, v = rng.integers(0, n, size=2)
        if u != v:
            edges.add((min(int(u), int(v)), max(int(u), int(v))))
    edges = sorted(edges)
    node_labels = rng.integers(0, node_label_card, size=n)
    edge_labels = (
        rng.integers(0, edge_label_card, size=len(edges))
        if edge_label_card
        else None
    )
    return make_graph(
        n, edges, node_labels=node_labels, edge_labels=edge_labels,
        label=int(rng.integers(0, 2)),
    )


def write_tu_files(directory, name, directed_edges, indicator, graph_labels,
                   node_labels, edge_labels=None, line_ending="\n"):
    """Write raw TU-format text files (edge pairs are 1-based, as given)."""
    os.makedirs(directory, exist_ok=True)
    p = lambda suffix: os.path.join(directory, f"{name}_{suffix}.txt")
    with open(p("A"), "w", newline="") as fh:
        for u, v in directed_edges:
            fh.write(f"{u}, {v}{line_ending}")
    with open(p("graph_indicator"), "w", newline="") as fh:
        for gid in indicator:
            fh.write(f"{gid}{line_ending}")
    with open(p("graph_labels"), "w", newline="") as fh:
        for lab in graph_labels:
            fh.write(f"{lab}{line_ending}")
    with open(p("node_labels"), "w", newline="") as fh:
        for lab in node_labels:
            fh.write(f"{lab}{line_ending}")
    if edge_labels is not None:
        with open(p("edge_labels"), "w", newline="") as fh:
            for lab in edge_labels:
                fh.write(f"{lab}{line_ending}")
    return directory


@pytest.fixture
def triangle_path_dir(tmp_path):
    """Two graphs: a triangle (label 1) and a path of three (label -1).

    Edges are listed in both directions, like real TU exports.
    """
    edges = [
        (1, 2), (2, 1), (2, 3), (3, 2), (1, 3), (3, 1),  # triangle, nodes 1-3
        (4, 5), (5, 4), (5, 6), (6, 5),  # path, nodes 4-6
    ]
    indicator = [1, 1, 1, 2, 2, 2]
    graph_labels = [1, -1]
    node_labels = [0, 1, 2, 0, 1, 0]
    edge_labels = [0, 0, 1, 1, 2, 2, 0, 0, 1, 1]
    d = tmp_path / "TRIPATH"
    write_tu_files(str(d), "TRIPATH", edges, indicator, graph_labels,
                   node_labels, edge_labels)
    return str(tmp_path)


def star_path_dataset(count_per_class=20):
    """Trivially separable two-class set: stars (label 0) vs paths (label 1).

    Star trees are two layers deep; center-rooted path trees go much deeper,
    so the projected images differ structurally.
    """
    from treegrid.data import build_profile

    graphs = []
    for i in range(count_per_class):
        n_leaves = 4 + (i % 5)
        graphs.append(make_graph(
            n_leaves + 1, [(0, o) for o in range(1, n_leaves + 1)], label=0))
    for i in range(count_per_class):
        n = 5 + (i % 5)
        graphs.append(make_graph(n, [(v, v + 1) for v in range(n - 1)], label=1))
    return graphs, build_profile(graphs)


def write_random_tu_dataset(directory, name, rng, graph_count=24, n_max=12,
                            node_label_card=4, edge_label_card=3):
    """Random connected-graph dataset in raw TU form; returns per-graph sizes."""
    directed_edges = []
    indicator = []
    graph_labels = []
    node_labels = []
    edge_labels = []
    offset = 0
    sizes = []
    for gid in range(1, graph_count + 1):
        g = random_connected_graph(
            rng, n_max=n_max, node_label_card=node_label_card,
            edge_label_card=edge_label_card,
        )
        sizes.append(g.node_count)
        indicator.extend([gid] * g.node_count)
        node_labels.extend(int(x) for x in g.node_labels)
        graph_labels.append(g.graph_label)
        for i, (u, v) in enumerate(g.edges):
            a, b = offset + u + 1, offset + v + 1
            directed_edges.append((a, b))
            directed_edges.append((b, a))
            lab = int(g.edge_labels[i])
            edge_labels.extend([lab, lab])
        offset += g.node_count
    write_tu_files(directory, name, directed_edges, indicator, graph_labels,
                   node_labels, edge_labels)
    return sizes
