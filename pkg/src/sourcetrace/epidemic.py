"""Synthetic contact graphs and SI spreading on them."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import networkx as nx
import numpy as np

from .graph import Graph, GraphError, bfs_tree, build_graph, connected_components, is_connected

log = logging.getLogger(__name__)

FAMILIES = (
    "erdos-renyi",
    "barabasi-albert",
    "watts-strogatz",
    "random-regular-tree",
    "complete-nary-tree",
    "random-tree",
    "recent-attachment-tree",
)
FrontierRule = Literal["node-uniform", "edge-uniform"]

MAX_RESAMPLES = 100


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``.

    Every random draw in the package goes through here, so a root seed plus
    the integer path to a task fully determines its stream.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), *map(int, keys)]))


def _int_seed(seed: int, *keys: int) -> int:
    return int(substream(seed, *keys).integers(2**31 - 1))


@dataclass(frozen=True)
class GeneratorSpec:
    family: str
    size: int
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown graph family {self.family!r}; choose from {FAMILIES}")
        if self.size < 1:
            raise ValueError("size must be positive")

    def to_dict(self) -> dict:
        return {"family": self.family, "size": self.size, "params": dict(self.params), "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        return cls(d["family"], int(d["size"]), dict(d.get("params", {})), int(d.get("seed", 0)))


def _from_nx(g: nx.Graph) -> Graph:
    return build_graph(list(g.edges()), n=g.number_of_nodes())


def random_tree(n: int, rng: np.random.Generator) -> Graph:
    """Uniform random labelled tree via Pruefer decoding (linear time)."""
    if n <= 2:
        return build_graph([(0, 1)] if n == 2 else [], n=n)
    seq = rng.integers(0, n, size=n - 2)
    degree = np.bincount(seq, minlength=n) + 1
    degree = degree.tolist()
    seq = seq.tolist()
    parent = [-1] * n
    ptr = degree.index(1)
    leaf = ptr
    for v in seq:
        parent[leaf] = v
        degree[v] -= 1
        if v < ptr and degree[v] == 1:
            leaf = v
        else:
            ptr += 1
            while degree[ptr] != 1:
                ptr += 1
            leaf = ptr
    parent[leaf] = n - 1
    child = np.arange(n - 1)
    par = np.asarray(parent[: n - 1])
    # leaf indices run over all nodes except n-1 exactly once
    edges = np.stack([par, child], axis=1)
    return build_graph(edges, n=n)


def random_regular_tree(n: int, d: int, rng: np.random.Generator) -> Graph:
    """Random tree whose internal nodes all have degree ``d``."""
    if d < 2 or d >= n:
        raise ValueError(f"regular degree {d} infeasible for size {n}")
    if (n - 2) % (d - 1):
        raise ValueError(f"no tree on {n} nodes has all internal degrees {d}; need (n-2) divisible by {d - 1}")
    edges = [(0, i) for i in range(1, d + 1)]
    leaves = list(range(1, d + 1))
    nxt = d + 1
    while nxt < n:
        i = int(rng.integers(len(leaves)))
        u = leaves[i]
        leaves[i] = leaves[-1]
        leaves.pop()
        for _ in range(d - 1):
            edges.append((u, nxt))
            leaves.append(nxt)
            nxt += 1
    return build_graph(edges, n=n)


def leaf_balanced_regular_tree(d: int, depth: int, rng: np.random.Generator,
                               extend: float | None = None) -> Graph:
    """Random ``d``-regular tree whose leaves all sit at ``depth`` or ``depth+1`` from one node.

    Built as the full tree of the given depth around a center, then each
    deepest node independently grows ``d-1`` leaves with probability
    ``extend`` (drawn uniformly when omitted). Node labels are shuffled.
    """
    if d < 2 or depth < 1:
        raise ValueError("need d >= 2 and depth >= 1")
    extend = rng.random() if extend is None else extend
    parent = [-1]
    frontier = [0]
    for _ in range(depth):
        nxt = []
        for u in frontier:
            for _ in range(d if u == 0 else d - 1):
                parent.append(u)
                nxt.append(len(parent) - 1)
        frontier = nxt
    for u in frontier:
        if rng.random() < extend:
            parent.extend([u] * (d - 1))
    n = len(parent)
    perm = rng.permutation(n)
    return build_graph([(perm[i], perm[parent[i]]) for i in range(1, n)], n=n)


def recent_attachment_tree(n: int, window: int, rng: np.random.Generator) -> Graph:
    """Node ``i`` joins a uniform node among the ``window`` before it.

    ``window >= n`` is a random recursive tree (diameter ~ log n); ``window = 1``
    is a path. Intermediate windows sweep the diameter between the two.
    """
    if window < 1:
        raise ValueError("window must be at least 1")
    i = np.arange(1, n)
    lo = np.maximum(0, i - window)
    parent = lo + (rng.random(n - 1) * (i - lo)).astype(np.int64)
    return build_graph(np.stack([parent, i], axis=1), n=n)


def complete_nary_tree(n: int, arity: int) -> Graph:
    if arity < 1:
        raise ValueError("arity must be at least 1")
    child = np.arange(1, n)
    return build_graph(np.stack([(child - 1) // arity, child], axis=1), n=n)


def _attempt(spec: GeneratorSpec, seed: int) -> Graph:
    n, p = spec.size, spec.params
    rng = substream(seed)
    fam = spec.family
    if fam == "erdos-renyi":
        prob = float(p.get("p", 0.03))
        if not 0 <= prob <= 1:
            raise ValueError("edge probability must be in [0, 1]")
        return _from_nx(nx.gnp_random_graph(n, prob, seed=seed))
    if fam == "barabasi-albert":
        m = int(p.get("m", 2))
        if not 1 <= m < n:
            raise ValueError(f"attachment count {m} infeasible for size {n}")
        return _from_nx(nx.barabasi_albert_graph(n, m, seed=seed))
    if fam == "watts-strogatz":
        k, beta = int(p.get("k", 4)), float(p.get("p", 0.1))
        if not 2 <= k < n:
            raise ValueError(f"ring degree {k} infeasible for size {n}")
        return _from_nx(nx.watts_strogatz_graph(n, k, beta, seed=seed))
    if fam == "random-regular-tree":
        return random_regular_tree(n, int(p.get("degree", 3)), rng)
    if fam == "recent-attachment-tree":
        return recent_attachment_tree(n, int(p.get("window", n)), rng)
    if fam == "complete-nary-tree":
        return complete_nary_tree(n, int(p.get("arity", 2)))
    return random_tree(n, rng)


def generate(spec: GeneratorSpec) -> Graph:
    """Connected graph of the requested family, deterministic per ``spec.seed``.

    Disconnected draws are retried with sub-seeds ``(seed, 1)``, ``(seed, 2)``...
    up to 100 times; after that the giant component of the last draw is
    returned (relabelled densely) and the substitution is logged.
    """
    g = _attempt(spec, _int_seed(spec.seed, 0))
    attempt = 0
    while not is_connected(g) and attempt < MAX_RESAMPLES:
        attempt += 1
        g = _attempt(spec, _int_seed(spec.seed, attempt))
    if not is_connected(g):
        giant = max(connected_components(g), key=len)
        log.warning("%s n=%d stayed disconnected; using giant component of %d nodes",
                    spec.family, spec.size, giant.size)
        g, _ = g.subgraph(giant)
    return g


@dataclass(frozen=True)
class SiConfig:
    stop_fraction: float = 0.20
    frontier_rule: FrontierRule = "edge-uniform"
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.stop_fraction <= 1:
            raise ValueError("stop_fraction must be in (0, 1]")
        if self.frontier_rule not in ("node-uniform", "edge-uniform"):
            raise ValueError(f"unknown frontier rule {self.frontier_rule!r}")

    def target(self, n: int) -> int:
        # guard against 0.2*250 = 50.000000000000007
        return max(1, min(n, math.ceil(round(self.stop_fraction * n, 9))))

    def to_dict(self) -> dict:
        return {"stop_fraction": self.stop_fraction, "frontier_rule": self.frontier_rule, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "SiConfig":
        return cls(float(d["stop_fraction"]), d["frontier_rule"], int(d["seed"]))


@dataclass(frozen=True)
class EpidemicNetwork:
    """A contact graph with the infection order of one SI run.

    ``infected[0]`` is the ground-truth source; ``infectors[i]`` is the node
    that passed the infection to ``infected[i]`` (-1 for the source).
    """

    base: Graph
    infected: tuple[int, ...]
    infectors: tuple[int, ...]

    def __post_init__(self):
        if len(self.infected) != len(self.infectors):
            raise ValueError("infected and infectors differ in length")

    @property
    def source(self) -> int:
        return self.infected[0]

    @property
    def size(self) -> int:
        return len(self.infected)

    @cached_property
    def infected_mask(self) -> np.ndarray:
        m = np.zeros(self.base.n, dtype=bool)
        m[list(self.infected)] = True
        return m

    @cached_property
    def _induced(self) -> tuple[Graph, np.ndarray]:
        return self.base.subgraph(self.infected)

    @property
    def induced(self) -> Graph:
        """G_N on local ids; ``nodes[local] == global``, ascending."""
        return self._induced[0]

    @property
    def nodes(self) -> np.ndarray:
        return self._induced[1]

    def local(self, v: int) -> int:
        i = int(np.searchsorted(self.nodes, v))
        if i >= self.nodes.size or self.nodes[i] != v:
            raise GraphError(f"node {v} is not infected")
        return i

    def transmission_tree(self) -> tuple[Graph, np.ndarray]:
        """Tree of infector -> infectee edges, on the same local ids as :attr:`induced`."""
        nodes = self.nodes
        loc = {int(g): i for i, g in enumerate(nodes.tolist())}
        edges = [(loc[a], loc[b]) for a, b in zip(self.infectors[1:], self.infected[1:])]
        return build_graph(edges, n=len(nodes)), nodes

    @classmethod
    def fully_infected(cls, g: Graph, source: int = 0) -> "EpidemicNetwork":
        """Every node of connected ``g`` infected, in BFS order from ``source``."""
        t = bfs_tree(g, source)
        if t.order.size != g.n:
            raise GraphError("graph is not connected")
        order = t.order.tolist()
        return cls(g, tuple(order), tuple(int(t.parent[v]) for v in order))

    def validate(self) -> None:
        seen = {self.infected[0]}
        adj = self.base.adj
        for v, by in zip(self.infected[1:], self.infectors[1:]):
            if v in seen:
                raise ValueError(f"node {v} infected twice")
            if by not in seen or v not in adj[by]:
                raise ValueError(f"node {v} has no earlier-infected neighbor {by}")
            seen.add(v)


class _IndexedSet:
    """Set with O(1) add/remove and uniform random choice."""

    def __init__(self):
        self.items: list[int] = []
        self.pos: dict[int, int] = {}

    def add(self, x: int) -> None:
        if x not in self.pos:
            self.pos[x] = len(self.items)
            self.items.append(x)

    def remove(self, x: int) -> None:
        i = self.pos.pop(x)
        last = self.items.pop()
        if i < len(self.items):
            self.items[i] = last
            self.pos[last] = i

    def __len__(self) -> int:
        return len(self.items)


def simulate_si(g: Graph, source: int, cfg: SiConfig = SiConfig()) -> EpidemicNetwork:
    """Discrete SI spreading from ``source`` until ``ceil(stop_fraction * n)`` are infected.

    ``edge-uniform`` picks a uniformly random boundary edge (so a susceptible
    node is chosen proportionally to its number of infected neighbors);
    ``node-uniform`` picks a uniformly random susceptible boundary node and
    then a uniformly random infected neighbor as its infector.
    """
    if not g.has_node(source):
        raise GraphError(f"source {source} not in graph")
    rng = substream(cfg.seed, source)
    adj = g.adj
    target = cfg.target(g.n)
    infected = [int(source)]
    infectors = [-1]
    is_inf = np.zeros(g.n, dtype=bool)
    is_inf[source] = True
    if cfg.frontier_rule == "edge-uniform":
        boundary = [(source, w) for w in adj[source]]
        while len(infected) < target:
            if not boundary:
                raise GraphError("infection cannot reach the stop size: component too small")
            i = int(rng.integers(len(boundary)))
            u, w = boundary[i]
            boundary[i] = boundary[-1]
            boundary.pop()
            if is_inf[w]:
                continue  # stale edge; rejection keeps the draw uniform over live edges
            is_inf[w] = True
            infected.append(w)
            infectors.append(u)
            boundary.extend((w, x) for x in adj[w] if not is_inf[x])
    else:
        frontier = _IndexedSet()
        for w in adj[source]:
            frontier.add(w)
        while len(infected) < target:
            if not frontier:
                raise GraphError("infection cannot reach the stop size: component too small")
            w = frontier.items[int(rng.integers(len(frontier)))]
            frontier.remove(w)
            by = [u for u in adj[w] if is_inf[u]]
            u = by[int(rng.integers(len(by)))]
            is_inf[w] = True
            infected.append(w)
            infectors.append(u)
            for x in adj[w]:
                if not is_inf[x]:
                    frontier.add(x)
    return EpidemicNetwork(g, tuple(infected), tuple(infectors))


def random_source(g: Graph, seed: int) -> int:
    if g.n == 0:
        raise GraphError("cannot pick a source in an empty graph")
    return int(substream(seed, 0x50C).integers(g.n))
