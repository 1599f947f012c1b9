"""Undirected simple graphs over dense integer node ids.

Graphs are immutable. Adjacency is held in CSR form (``indptr``/``indices``)
for vectorised work and as a tuple of sorted tuples for the pure-Python hot
loops in tracing and enumeration.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np


class GraphError(ValueError):
    """Raised for malformed graphs or invalid graph queries."""


class Graph:
    """Immutable undirected simple graph with nodes ``0 .. n-1``.

    Build with :func:`build_graph` or :meth:`Graph.from_csr`.
    """

    __slots__ = ("n", "indptr", "indices", "__dict__")

    def __init__(self, n: int, indptr: np.ndarray, indices: np.ndarray):
        self.n = int(n)
        self.indptr = indptr
        self.indices = indices
        self.indptr.setflags(write=False)
        self.indices.setflags(write=False)

    @classmethod
    def from_csr(cls, n: int, indptr, indices) -> "Graph":
        return cls(n, np.asarray(indptr, dtype=np.int64), np.asarray(indices, dtype=np.int64))

    @property
    def num_edges(self) -> int:
        return int(self.indices.size // 2)

    @cached_property
    def degree(self) -> np.ndarray:
        deg = np.diff(self.indptr)
        deg.setflags(write=False)
        return deg

    @cached_property
    def adj(self) -> tuple[tuple[int, ...], ...]:
        ind = self.indices.tolist()
        ptr = self.indptr.tolist()
        return tuple(tuple(ind[ptr[v]:ptr[v + 1]]) for v in range(self.n))

    def neighbors(self, v: int) -> tuple[int, ...]:
        return self.adj[v]

    def has_node(self, v) -> bool:
        return isinstance(v, (int, np.integer)) and 0 <= v < self.n

    def has_edge(self, u: int, v: int) -> bool:
        lo, hi = self.indptr[u], self.indptr[u + 1]
        i = np.searchsorted(self.indices[lo:hi], v)
        return bool(i < hi - lo and self.indices[lo + i] == v)

    def edges(self) -> np.ndarray:
        """Edge array of shape (m, 2) with ``u < v``, lexicographically sorted."""
        src = np.repeat(np.arange(self.n), self.degree)
        mask = src < self.indices
        return np.stack([src[mask], self.indices[mask]], axis=1)

    def is_tree(self) -> bool:
        return self.n >= 1 and self.num_edges == self.n - 1 and is_connected(self)

    def subgraph(self, nodes: Iterable[int]) -> tuple["Graph", np.ndarray]:
        """Induced subgraph.

        Returns the subgraph relabelled to ``0 .. k-1`` and the array of the
        original ids, sorted ascending so that local id order matches global
        id order (tie-breaks by lowest id therefore agree).
        """
        keep = np.unique(np.fromiter(nodes, dtype=np.int64))
        local = np.full(self.n, -1, dtype=np.int64)
        local[keep] = np.arange(keep.size)
        e = self.edges()
        if e.size:
            a, b = local[e[:, 0]], local[e[:, 1]]
            ok = (a >= 0) & (b >= 0)
            sub_edges = np.stack([a[ok], b[ok]], axis=1)
        else:
            sub_edges = np.zeros((0, 2), dtype=np.int64)
        return build_graph(sub_edges, n=keep.size), keep

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.n == other.n
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )

    def __hash__(self):
        return hash((self.n, self.indices.tobytes()))

    def __repr__(self) -> str:
        return f"Graph(n={self.n}, m={self.num_edges})"


def build_graph(edges, n: int | None = None) -> Graph:
    """Build a graph from node-id pairs.

    Reversed and repeated pairs are merged. ``n`` defaults to one past the
    largest id seen; ids must lie in ``[0, n)``.

    >>> build_graph([(0, 1), (1, 2)]).degree.tolist()
    [1, 2, 1]
    """
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if n is None:
        n = int(e.max()) + 1 if e.size else 0
    if e.size:
        if e.min() < 0 or e.max() >= n:
            raise GraphError(f"edge endpoint outside [0, {n})")
        loops = e[:, 0] == e[:, 1]
        if loops.any():
            bad = int(e[loops][0, 0])
            raise GraphError(f"self-loop on node {bad}")
        e = np.sort(e, axis=1)
        e = np.unique(e, axis=0)
    both = np.concatenate([e, e[:, ::-1]]) if e.size else e
    order = np.lexsort((both[:, 1], both[:, 0])) if both.size else np.zeros(0, dtype=np.int64)
    both = both[order]
    counts = np.bincount(both[:, 0], minlength=n) if both.size else np.zeros(n, dtype=np.int64)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    indices = both[:, 1].copy() if both.size else np.zeros(0, dtype=np.int64)
    return Graph(n, indptr, indices)


@dataclass(frozen=True)
class RootedTree:
    """A spanning tree of ``root``'s component, with parents and visit order.

    ``parent[v]`` is -1 for the root and for nodes outside the component.
    """

    root: int
    parent: np.ndarray
    order: np.ndarray
    depth: np.ndarray

    @property
    def n(self) -> int:
        return int(self.order.size)

    def children(self) -> list[list[int]]:
        kids: list[list[int]] = [[] for _ in range(self.parent.size)]
        for v in self.order[1:].tolist():
            kids[int(self.parent[v])].append(v)
        return kids


def _check_root(g: Graph, root) -> int:
    if not g.has_node(root):
        raise GraphError(f"node {root!r} not in graph of {g.n} nodes")
    return int(root)


def bfs_tree(g: Graph, root: int) -> RootedTree:
    """Breadth-first spanning tree; neighbors are visited in ascending id."""
    root = _check_root(g, root)
    adj = g.adj
    parent = [-1] * g.n
    depth = [-1] * g.n
    depth[root] = 0
    order = [root]
    queue = deque([root])
    while queue:
        u = queue.popleft()
        du = depth[u] + 1
        for w in adj[u]:
            if depth[w] < 0:
                depth[w] = du
                parent[w] = u
                order.append(w)
                queue.append(w)
    return RootedTree(root, np.array(parent), np.array(order), np.array(depth))


def dfs_tree(g: Graph, root: int) -> RootedTree:
    """Depth-first (Tremaux) spanning tree in preorder, lowest id first."""
    root = _check_root(g, root)
    adj = g.adj
    parent = [-1] * g.n
    depth = [-1] * g.n
    depth[root] = 0
    order = [root]
    stack = [(root, iter(adj[root]))]
    while stack:
        u, it = stack[-1]
        for w in it:
            if depth[w] < 0:
                depth[w] = depth[u] + 1
                parent[w] = u
                order.append(w)
                stack.append((w, iter(adj[w])))
                break
        else:
            stack.pop()
    return RootedTree(root, np.array(parent), np.array(order), np.array(depth))


def bfs_distances(g: Graph, source: int) -> np.ndarray:
    """Hop distances from ``source``; -1 marks unreachable nodes."""
    source = _check_root(g, source)
    adj = g.adj
    dist = [-1] * g.n
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        du = dist[u] + 1
        for w in adj[u]:
            if dist[w] < 0:
                dist[w] = du
                queue.append(w)
    return np.array(dist, dtype=np.int64)


def distance(g: Graph, u: int, v: int) -> int | None:
    """Shortest-path hop count, or ``None`` if ``u`` and ``v`` are disconnected."""
    _check_root(g, v)
    d = int(bfs_distances(g, u)[v])
    return None if d < 0 else d


def all_pairs_distances(g: Graph) -> np.ndarray:
    return np.stack([bfs_distances(g, s) for s in range(g.n)]) if g.n else np.zeros((0, 0), int)


def is_connected(g: Graph) -> bool:
    if g.n == 0:
        return False
    return bool((bfs_distances(g, 0) >= 0).all())


def connected_components(g: Graph) -> list[np.ndarray]:
    label = np.full(g.n, -1, dtype=np.int64)
    comps = []
    for s in range(g.n):
        if label[s] >= 0:
            continue
        members = np.flatnonzero(bfs_distances(g, s) >= 0)
        label[members] = len(comps)
        comps.append(members)
    return comps


def diameter(g: Graph) -> int:
    if not is_connected(g):
        raise GraphError("diameter of a disconnected graph is undefined")
    return int(max(bfs_distances(g, s).max() for s in range(g.n)))


def subtree_sizes(t: RootedTree) -> np.ndarray:
    """Size of the subtree hanging from each node (0 outside the tree)."""
    size = np.zeros(t.parent.size, dtype=np.int64)
    size[t.order] = 1
    parent = t.parent.tolist()
    for v in t.order[:0:-1].tolist():
        size[parent[v]] += size[v]
    return size


def centroid(t: Graph) -> list[int]:
    """The one or two nodes whose removal leaves the smallest largest component."""
    if not t.is_tree():
        raise GraphError("centroid is defined here for trees only")
    n = t.n
    rt = bfs_tree(t, 0)
    size = subtree_sizes(rt)
    worst = np.zeros(n, dtype=np.int64)
    worst[:] = n - size
    for v in rt.order[1:].tolist():
        p = int(rt.parent[v])
        worst[p] = max(worst[p], size[v])
    best = worst.min()
    return np.flatnonzero(worst == best).tolist()


def path_graph(n: int) -> Graph:
    return build_graph([(i, i + 1) for i in range(n - 1)], n=n)


def star_graph(leaves: int) -> Graph:
    """Star with center 0 and ``leaves`` leaves."""
    return build_graph([(0, i) for i in range(1, leaves + 1)], n=leaves + 1)


def tree_from_parents(parent: Sequence[int]) -> Graph:
    """Tree from a parent array (-1 marks the root)."""
    p = np.asarray(parent, dtype=np.int64)
    child = np.flatnonzero(p >= 0)
    return build_graph(np.stack([p[child], child], axis=1), n=p.size)
