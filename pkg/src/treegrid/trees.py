"""Hop-count shortest paths, center-root selection, and BFS spanning trees.

Edge labels in these datasets are categories, not lengths, so every edge
counts as one hop and a BFS from each node computes all distances.  Node
depths are 1-based layers: the root sits on layer 1 and a child is always one
layer below its parent.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .data import Graph, adjacency_lists, connected_components


class GraphConnectivityError(ValueError):
    """An operation that needs a connected graph met a disconnected one."""


@dataclass
class Tree:
    """Rooted spanning tree over a graph's nodes.

    ``parent[v]`` is -1 for the root; ``children[v]`` is ordered (the order is
    what the shuffle augmentations vary).  ``tree_edge_label[v]`` is the label
    of the graph edge that discovered ``v`` (-1 for the root).
    """

    root: int
    parent: np.ndarray  # (n,) int64, -1 at root
    children: list[list[int]]
    depth_of: np.ndarray  # (n,) int64, 1-based layer per node
    depth: int  # D(T) = deepest layer
    descendant_count: np.ndarray  # (n,) int64, proper descendants
    tree_edge_label: np.ndarray  # (n,) int64, -1 at root

    @property
    def node_count(self) -> int:
        return len(self.parent)

    def layers(self) -> list[list[int]]:
        """Nodes per 1-based layer, each layer in children order."""
        out: list[list[int]] = [[] for _ in range(self.depth)]
        out[0] = [self.root]
        for d in range(1, self.depth):
            for v in out[d - 1]:
                out[d].extend(self.children[v])
        return out


def shortest_path_matrix(g: Graph, allow_disconnected: bool = False) -> np.ndarray:
    """All-pairs hop counts via BFS from every node.

    Unreachable pairs are ``inf``; by default a disconnected graph raises a
    :class:`GraphConnectivityError` naming its components.
    """
    if not g.connected and not allow_disconnected:
        comps = connected_components(g)
        raise GraphConnectivityError(
            f"graph is disconnected ({len(comps)} components): "
            + "; ".join(str(c) for c in comps)
        )
    n = g.node_count
    neighbors: list[list[int]] = [[] for _ in range(n)]
    for u, v in g.edges:
        neighbors[u].append(v)
        neighbors[v].append(u)
    dist = np.full((n, n), np.inf)
    for src in range(n):
        dist[src, src] = 0.0
        queue = deque([src])
        while queue:
            x = queue.popleft()
            for y in neighbors[x]:
                if not np.isfinite(dist[src, y]):
                    dist[src, y] = dist[src, x] + 1.0
                    queue.append(y)
    return dist


def select_root(h: np.ndarray) -> int:
    """Node of minimum eccentricity; ties broken by lowest index."""
    h = np.asarray(h)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError("distance matrix must be square")
    if not np.all(np.isfinite(h)):
        raise GraphConnectivityError("distance matrix has unreachable pairs")
    eccentricity = h.max(axis=1)
    return int(np.argmin(eccentricity))


def bfs_tree(g: Graph, root: int, rng: np.random.Generator | None = None) -> Tree:
    """Breadth-first spanning tree of ``g`` from ``root``.

    With ``rng=None`` neighbors are visited in ascending node index.  With a
    generator, each node's unvisited-neighbor list is permuted before being
    enqueued; this randomizes which parent discovers a node, i.e. which cycle
    edges get cut.  BFS layering is order-invariant either way, so
    ``depth_of[v]`` always equals the hop distance from the root plus one.
    """
    n = g.node_count
    if not (0 <= root < n):
        raise ValueError(f"root {root} out of range")
    adj = adjacency_lists(g)
    parent = np.full(n, -1, dtype=np.int64)
    depth_of = np.zeros(n, dtype=np.int64)
    edge_label = np.full(n, -1, dtype=np.int64)
    children: list[list[int]] = [[] for _ in range(n)]
    visited = np.zeros(n, dtype=bool)

    visited[root] = True
    depth_of[root] = 1
    queue = deque([root])
    order = []  # visit order, used for the bottom-up descendant pass
    while queue:
        v = queue.popleft()
        order.append(v)
        unvisited = [(w, lab) for w, lab in adj[v] if not visited[w]]
        if rng is not None and len(unvisited) > 1:
            unvisited = [unvisited[i] for i in rng.permutation(len(unvisited))]
        for w, lab in unvisited:
            visited[w] = True
            parent[w] = v
            depth_of[w] = depth_of[v] + 1
            edge_label[w] = lab
            children[v].append(w)
            queue.append(w)
    if not visited.all():
        missing = np.flatnonzero(~visited).tolist()
        raise GraphConnectivityError(f"nodes unreachable from root {root}: {missing}")

    return Tree(
        root=root,
        parent=parent,
        children=children,
        depth_of=depth_of,
        depth=int(depth_of.max()),
        descendant_count=_descendants(parent, order),
        tree_edge_label=edge_label,
    )


def _descendants(parent: np.ndarray, visit_order: list[int]) -> np.ndarray:
    counts = np.zeros(len(parent), dtype=np.int64)
    for v in reversed(visit_order):  # children before parents
        p = parent[v]
        if p >= 0:
            counts[p] += counts[v] + 1
    return counts


def descendant_counts(t: Tree) -> np.ndarray:
    """Per-node proper-descendant counts, recomputed bottom-up from parents."""
    order = sorted(range(t.node_count), key=lambda v: int(t.depth_of[v]))
    return _descendants(t.parent, order)


def center_tree(g: Graph, rng: np.random.Generator | None = None) -> Tree:
    """BFS tree rooted at a minimum-eccentricity node.

    The root is always chosen from canonical distances; ``rng`` only shuffles
    neighbor visit order during the BFS.
    """
    return bfs_tree(g, select_root(shortest_path_matrix(g)), rng=rng)
