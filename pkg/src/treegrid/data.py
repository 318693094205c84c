"""Loading of TU-style graph classification datasets and binary image caching.

A dataset directory holds plain-text files sharing a common prefix
(``<name>_A.txt``, ``<name>_graph_indicator.txt``, ...).  Node and edge ids in
the files are 1-based and global; in memory every graph uses 0-based local
node indices and stores each undirected edge exactly once as ``(u, v)`` with
``u < v``.
"""

from __future__ import annotations

import os
import struct
from collections import deque
from dataclasses import dataclass, field

import numpy as np

CACHE_MAGIC = b"TGIC"
CACHE_VERSION = 1
CACHE_HEADER = struct.Struct("<4sIIIII")  # magic, version, count, H, W, C


class DatasetFormatError(ValueError):
    """A dataset file is missing, malformed, or inconsistent."""


@dataclass
class Graph:
    """Undirected graph with categorical node labels and optional edge labels.

    ``edges[i]`` is ``(u, v)`` with ``u < v``; ``edge_labels`` (if present) is
    aligned with ``edges``.  ``connected`` is computed at construction time.
    """

    node_count: int
    edges: list[tuple[int, int]]
    node_labels: np.ndarray
    edge_labels: np.ndarray | None
    graph_label: int
    connected: bool = field(init=False)

    def __post_init__(self):
        if self.node_count < 1:
            raise ValueError("graph must have at least one node")
        self.node_labels = np.asarray(self.node_labels, dtype=np.int64)
        if self.node_labels.shape != (self.node_count,):
            raise ValueError("node_labels length must equal node_count")
        if np.any(self.node_labels < 0):
            raise ValueError("node labels must be non-negative")
        seen = set()
        for u, v in self.edges:
            if u == v:
                raise ValueError(f"self-loop at node {u}")
            if not (0 <= u < v < self.node_count):
                raise ValueError(f"edge ({u}, {v}) is not normalized or out of range")
            if (u, v) in seen:
                raise ValueError(f"duplicate edge ({u}, {v})")
            seen.add((u, v))
        if self.edge_labels is not None:
            self.edge_labels = np.asarray(self.edge_labels, dtype=np.int64)
            if self.edge_labels.shape != (len(self.edges),):
                raise ValueError("edge_labels length must equal edge count")
            if np.any(self.edge_labels < 0):
                raise ValueError("edge labels must be non-negative")
        self.connected = len(connected_components(self)) == 1

    @property
    def edge_count(self) -> int:
        return len(self.edges)


def adjacency_lists(g: Graph) -> list[list[tuple[int, int]]]:
    """Per-node neighbor lists as (neighbor, edge label), sorted by neighbor.

    The edge label is 0 when the graph carries no edge labels.
    """
    adj: list[list[tuple[int, int]]] = [[] for _ in range(g.node_count)]
    for i, (u, v) in enumerate(g.edges):
        lab = int(g.edge_labels[i]) if g.edge_labels is not None else 0
        adj[u].append((v, lab))
        adj[v].append((u, lab))
    for lst in adj:
        lst.sort()
    return adj


def connected_components(g: Graph) -> list[list[int]]:
    """Connected components, ordered by their lowest node index."""
    neighbors: list[list[int]] = [[] for _ in range(g.node_count)]
    for u, v in g.edges:
        neighbors[u].append(v)
        neighbors[v].append(u)
    seen = [False] * g.node_count
    components = []
    for start in range(g.node_count):
        if seen[start]:
            continue
        comp = []
        queue = deque([start])
        seen[start] = True
        while queue:
            x = queue.popleft()
            comp.append(x)
            for y in neighbors[x]:
                if not seen[y]:
                    seen[y] = True
                    queue.append(y)
        components.append(sorted(comp))
    return components


def largest_component_subgraph(g: Graph) -> Graph:
    """Restrict ``g`` to its largest connected component (lenient mode).

    Ties go to the component containing the lowest node index.  Kept nodes are
    relabeled 0..m-1 preserving their original order.
    """
    comps = connected_components(g)
    best = max(comps, key=len)  # components are ordered by lowest index
    remap = {old: new for new, old in enumerate(best)}
    keep = set(best)
    # remap is monotone, so the kept edges stay sorted and normalized
    edges = []
    labels = []
    for i, (u, v) in enumerate(g.edges):
        if u in keep and v in keep:
            edges.append((remap[u], remap[v]))
            if g.edge_labels is not None:
                labels.append(int(g.edge_labels[i]))
    return Graph(
        node_count=len(best),
        edges=edges,
        node_labels=g.node_labels[best],
        edge_labels=np.array(labels, dtype=np.int64) if g.edge_labels is not None else None,
        graph_label=g.graph_label,
    )


@dataclass
class DatasetProfile:
    """Dataset-wide statistics needed to size images and the classifier."""

    graph_count: int
    class_count: int
    node_label_cardinality: int
    edge_label_cardinality: int
    max_nodes: int
    max_tree_depth: int = 0  # filled after tree construction
    has_edge_labels: bool = False
    label_map: dict[int, int] = field(default_factory=dict)  # original -> 0..K-1
    self_loops_dropped: int = 0
    duplicate_edges_dropped: int = 0
    disconnected_count: int = 0

    @property
    def channels(self) -> int:
        return self.node_label_cardinality + self.edge_label_cardinality


def build_profile(graphs: list[Graph], label_map: dict[int, int] | None = None) -> DatasetProfile:
    """Profile an in-memory graph list (cardinalities from data, never assumed)."""
    if not graphs:
        raise ValueError("empty graph list")
    has_el = graphs[0].edge_labels is not None
    if any((g.edge_labels is not None) != has_el for g in graphs):
        raise ValueError("edge labels must be present on all graphs or none")
    max_node_label = max(int(g.node_labels.max()) for g in graphs)
    max_edge_label = 0
    if has_el:
        max_edge_label = max(
            int(g.edge_labels.max()) if g.edge_count else 0 for g in graphs
        )
    labels = sorted({g.graph_label for g in graphs})
    return DatasetProfile(
        graph_count=len(graphs),
        class_count=len(labels),
        node_label_cardinality=max_node_label + 1,
        edge_label_cardinality=max_edge_label + 1 if has_el else 1,
        max_nodes=max(g.node_count for g in graphs),
        has_edge_labels=has_el,
        label_map=label_map if label_map is not None else {l: l for l in labels},
        disconnected_count=sum(not g.connected for g in graphs),
    )


def _read_lines(path: str) -> list[str]:
    with open(path, "r", encoding="ascii") as fh:
        text = fh.read()
    lines = text.replace("\r\n", "\n").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def _dataset_dir(root_dir: str, dataset_name: str) -> str:
    sub = os.path.join(root_dir, dataset_name)
    return sub if os.path.isdir(sub) else root_dir


def _require(path: str) -> str:
    if not os.path.isfile(path):
        raise DatasetFormatError(f"missing dataset file: {os.path.basename(path)}")
    return path


def _parse_int(token: str, path: str, lineno: int) -> int:
    try:
        return int(token.strip())
    except ValueError:
        raise DatasetFormatError(
            f"{os.path.basename(path)}:{lineno}: expected integer, got {token!r}"
        ) from None


def load_dataset(root_dir: str, dataset_name: str) -> tuple[list[Graph], DatasetProfile]:
    """Parse a TU-layout dataset directory into graphs plus a profile.

    Node indices are remapped to 0-based per graph, graph labels to a
    contiguous 0..K-1 range (bijection recorded in the profile).  Self-loops
    are dropped and duplicate undirected edges collapsed, both counted.
    """
    d = _dataset_dir(root_dir, dataset_name)
    p = lambda suffix: os.path.join(d, f"{dataset_name}_{suffix}.txt")

    indicator_path = _require(p("graph_indicator"))
    graph_labels_path = _require(p("graph_labels"))
    node_labels_path = _require(p("node_labels"))
    edges_path = _require(p("A"))
    edge_labels_path = p("edge_labels")
    has_edge_labels = os.path.isfile(edge_labels_path)

    raw_graph_labels = [
        _parse_int(t, graph_labels_path, i + 1)
        for i, t in enumerate(_read_lines(graph_labels_path))
    ]
    graph_count = len(raw_graph_labels)
    if graph_count == 0:
        raise DatasetFormatError("graph labels file is empty")

    indicator = [
        _parse_int(t, indicator_path, i + 1)
        for i, t in enumerate(_read_lines(indicator_path))
    ]
    total_nodes = len(indicator)
    nodes_of: list[list[int]] = [[] for _ in range(graph_count)]
    for node_1b, gid in enumerate(indicator, start=1):
        if not (1 <= gid <= graph_count):
            raise DatasetFormatError(
                f"{os.path.basename(indicator_path)}:{node_1b}: graph id {gid} out of range"
            )
        nodes_of[gid - 1].append(node_1b)
    for gid0, nodes in enumerate(nodes_of):
        if not nodes:
            raise DatasetFormatError(f"graph {gid0 + 1} has zero nodes")

    node_label_lines = _read_lines(node_labels_path)
    if len(node_label_lines) != total_nodes:
        raise DatasetFormatError(
            f"{os.path.basename(node_labels_path)}: {len(node_label_lines)} lines for {total_nodes} nodes"
        )
    node_labels_global = [
        _parse_int(t, node_labels_path, i + 1) for i, t in enumerate(node_label_lines)
    ]
    if min(node_labels_global) < 0:
        raise DatasetFormatError("negative node label")

    local_index: dict[int, int] = {}
    graph_of_node: dict[int, int] = {}
    for gid0, nodes in enumerate(nodes_of):
        for li, node_1b in enumerate(nodes):
            local_index[node_1b] = li
            graph_of_node[node_1b] = gid0

    edge_lines = _read_lines(edges_path)
    edge_label_values: list[int] | None = None
    if has_edge_labels:
        el_lines = _read_lines(edge_labels_path)
        if len(el_lines) != len(edge_lines):
            raise DatasetFormatError(
                f"{os.path.basename(edge_labels_path)}: {len(el_lines)} lines for {len(edge_lines)} edges"
            )
        edge_label_values = [
            _parse_int(t, edge_labels_path, i + 1) for i, t in enumerate(el_lines)
        ]
        if edge_label_values and min(edge_label_values) < 0:
            raise DatasetFormatError("negative edge label")

    per_graph_edges: list[dict[tuple[int, int], int]] = [dict() for _ in range(graph_count)]
    self_loops = 0
    duplicates = 0
    for lineno, line in enumerate(edge_lines, start=1):
        parts = line.split(",")
        if len(parts) != 2:
            raise DatasetFormatError(
                f"{os.path.basename(edges_path)}:{lineno}: expected 'u, v', got {line!r}"
            )
        u = _parse_int(parts[0], edges_path, lineno)
        v = _parse_int(parts[1], edges_path, lineno)
        for x in (u, v):
            if not (1 <= x <= total_nodes):
                raise DatasetFormatError(
                    f"{os.path.basename(edges_path)}:{lineno}: node {x} does not exist"
                )
        if graph_of_node[u] != graph_of_node[v]:
            raise DatasetFormatError(
                f"{os.path.basename(edges_path)}:{lineno}: edge crosses graphs"
            )
        if u == v:
            self_loops += 1
            continue
        gid0 = graph_of_node[u]
        a, b = local_index[u], local_index[v]
        key = (min(a, b), max(a, b))
        bucket = per_graph_edges[gid0]
        if key in bucket:
            duplicates += 1
            continue
        bucket[key] = edge_label_values[lineno - 1] if edge_label_values else 0

    label_values = sorted(set(raw_graph_labels))
    label_map = {orig: k for k, orig in enumerate(label_values)}

    graphs = []
    for gid0 in range(graph_count):
        nodes = nodes_of[gid0]
        labels = np.array([node_labels_global[n - 1] for n in nodes], dtype=np.int64)
        keys = sorted(per_graph_edges[gid0])
        elabs = (
            np.array([per_graph_edges[gid0][k] for k in keys], dtype=np.int64)
            if has_edge_labels
            else None
        )
        graphs.append(
            Graph(
                node_count=len(nodes),
                edges=keys,
                node_labels=labels,
                edge_labels=elabs,
                graph_label=label_map[raw_graph_labels[gid0]],
            )
        )

    profile = build_profile(graphs, label_map=label_map)
    profile.self_loops_dropped = self_loops
    profile.duplicate_edges_dropped = duplicates
    return graphs, profile


def write_dataset(graphs: list[Graph], dataset_name: str, root_dir: str) -> str:
    """Serialize graphs to canonical TU text form; returns the directory written.

    Canonical form: each undirected edge once as ``u, v`` (1-based global ids,
    u < v), nodes grouped by graph in ascending order, ``\\n`` line endings.
    Re-parsing and re-serializing this form reproduces it byte for byte.
    """
    d = os.path.join(root_dir, dataset_name)
    os.makedirs(d, exist_ok=True)
    p = lambda suffix: os.path.join(d, f"{dataset_name}_{suffix}.txt")
    has_el = graphs[0].edge_labels is not None

    offsets = []
    total = 0
    for g in graphs:
        offsets.append(total)
        total += g.node_count

    with open(p("graph_indicator"), "w", encoding="ascii") as fh:
        for gid0, g in enumerate(graphs):
            fh.write(f"{gid0 + 1}\n" * g.node_count)
    with open(p("graph_labels"), "w", encoding="ascii") as fh:
        for g in graphs:
            fh.write(f"{g.graph_label}\n")
    with open(p("node_labels"), "w", encoding="ascii") as fh:
        for g in graphs:
            for lab in g.node_labels:
                fh.write(f"{int(lab)}\n")
    with open(p("A"), "w", encoding="ascii") as fa:
        fe = open(p("edge_labels"), "w", encoding="ascii") if has_el else None
        try:
            for gid0, g in enumerate(graphs):
                base = offsets[gid0] + 1
                for i, (u, v) in enumerate(g.edges):
                    fa.write(f"{base + u}, {base + v}\n")
                    if fe is not None:
                        fe.write(f"{int(g.edge_labels[i])}\n")
        finally:
            if fe is not None:
                fe.close()
    return d


@dataclass
class GraphImage:
    """Fixed-size image projection of one tree: H x W x C pixels.

    ``occupancy`` marks pixels carrying a node; empty pixels are all-zero.
    ``source_node`` maps occupied pixels back to node indices (-1 elsewhere)
    and exists for tests and debugging only; it is never fed to the network
    and is not stored in the binary cache.
    """

    pixels: np.ndarray  # (H, W, C) float32
    occupancy: np.ndarray  # (H, W) bool
    source_node: np.ndarray | None = None  # (H, W) int32, -1 = empty

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pixels.shape


class ImageCacheError(ValueError):
    """The image cache file is unreadable or incompatible."""


def write_image_cache(images: list[GraphImage], labels, path: str) -> None:
    """Write images and labels to a flat binary cache.

    Layout (all little-endian): magic ``TGIC``, u32 version, u32 count, u32 H,
    u32 W, u32 C, count x i32 labels, then count x H x W x C float32 pixels in
    row-major [image][row][col][channel] order.
    """
    labels = np.asarray(labels, dtype="<i4")
    if labels.shape != (len(images),):
        raise ValueError("labels length must equal image count")
    if images:
        h, w, c = images[0].shape
        for img in images:
            if img.shape != (h, w, c):
                raise ValueError("all cached images must share identical H, W, C")
    else:
        h = w = c = 0
    with open(path, "wb") as fh:
        fh.write(CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, len(images), h, w, c))
        fh.write(labels.tobytes())
        for img in images:
            fh.write(np.ascontiguousarray(img.pixels, dtype="<f4").tobytes())


def read_image_cache(path: str) -> tuple[list[GraphImage], np.ndarray]:
    """Read a cache written by :func:`write_image_cache`.

    Occupancy is reconstructed as "any nonzero channel" (exact for projected
    images, whose occupied pixels always carry a one-hot node block);
    ``source_node`` is not stored and comes back as None.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < CACHE_HEADER.size:
        raise ImageCacheError("truncated cache file: header incomplete")
    magic, version, count, h, w, c = CACHE_HEADER.unpack_from(blob)
    if magic != CACHE_MAGIC:
        raise ImageCacheError("not an image cache file (bad magic)")
    if version != CACHE_VERSION:
        raise ImageCacheError(
            f"cache version mismatch: file has {version}, expected {CACHE_VERSION}"
        )
    expected = CACHE_HEADER.size + 4 * count + 4 * count * h * w * c
    if len(blob) != expected:
        raise ImageCacheError(
            f"truncated or oversized cache file: {len(blob)} bytes, expected {expected}"
        )
    off = CACHE_HEADER.size
    labels = np.frombuffer(blob, dtype="<i4", count=count, offset=off).astype(np.int64)
    off += 4 * count
    images = []
    for _ in range(count):
        pixels = (
            np.frombuffer(blob, dtype="<f4", count=h * w * c, offset=off)
            .reshape(h, w, c)
            .copy()
        )
        off += 4 * h * w * c
        images.append(GraphImage(pixels=pixels, occupancy=pixels.any(axis=-1)))
    return images, labels
