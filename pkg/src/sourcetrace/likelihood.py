"""Source likelihoods over permitted permutations.

A permitted permutation rooted at ``v`` is an ordering of the support graph
that starts at ``v`` and in which every node touches an earlier one. Its
probability under SI spreading is a product over steps of
``phi_i / boundary_{i-1}``, where ``phi_i`` is the number of edges from the
new node into the already-infected prefix. Everything here is carried in
log space.

Two denominators are offered:

``exact-boundary``
    number of edges leaving the prefix, ``sum(deg) - 2 * internal_edges``.
``literal-eq3``
    ``sum(deg) - 2 * (i - phi_{i-1} - 1)`` with ``phi_1 = 1``. Identical on
    trees, different on graphs with cycles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Literal, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order
from scipy.special import gammaln, logsumexp

from .epidemic import EpidemicNetwork, substream
from .graph import Graph, GraphError, bfs_tree, build_graph, is_connected

DegreeUniverse = Literal["tracing-network", "observed-contacts", "epidemic-network", "constant-d"]
ProbabilityMode = Literal["exact-boundary", "literal-eq3"]
SamplingRule = Literal["edge-uniform", "node-uniform", "uniform", "auto"]

DEFAULT_CAP = 1_000_000
TIE_TOL = 1e-9


class EnumerationCapError(RuntimeError):
    """Too many permitted permutations to enumerate; use a sampling estimator."""


class FormulaDegenerateError(ArithmeticError):
    """The literal-eq3 denominator became non-positive."""


@dataclass(frozen=True)
class Observation:
    """What an estimator sees: the support graph plus degree information.

    ``graph`` uses local ids ``0..n-1``; ``nodes[i]`` is the global id of local
    node ``i`` (ascending). ``contact_degree`` counts every observed contact,
    infected or not; ``epidemic_degree`` is the degree inside G_N when known.
    """

    graph: Graph
    nodes: np.ndarray
    contact_degree: np.ndarray
    epidemic_degree: np.ndarray | None = None

    @classmethod
    def of(cls, graph: Graph, contact_degree=None, epidemic_degree=None) -> "Observation":
        nodes = np.arange(graph.n)
        cd = graph.degree if contact_degree is None else np.asarray(contact_degree, dtype=np.int64)
        ed = None if epidemic_degree is None else np.asarray(epidemic_degree, dtype=np.int64)
        return cls(graph, nodes, cd, ed)

    @classmethod
    def of_epidemic(cls, epi: EpidemicNetwork, tree: bool = False) -> "Observation":
        """Full G_N (or its transmission tree) with base-graph contact degrees."""
        g, nodes = epi.transmission_tree() if tree else (epi.induced, epi.nodes)
        return cls(g, nodes, epi.base.degree[nodes], epi.induced.degree)

    @property
    def n(self) -> int:
        return self.graph.n

    def local(self, v: int) -> int:
        i = int(np.searchsorted(self.nodes, v))
        if i >= self.nodes.size or self.nodes[i] != v:
            raise GraphError(f"node {v} not in the observation")
        return i


@dataclass(frozen=True)
class LikelihoodConfig:
    degree_universe: DegreeUniverse = "observed-contacts"
    probability_mode: ProbabilityMode = "exact-boundary"
    d: int | None = None

    def __post_init__(self):
        if self.degree_universe not in ("tracing-network", "observed-contacts", "epidemic-network", "constant-d"):
            raise ValueError(f"unknown degree universe {self.degree_universe!r}")
        if self.degree_universe == "constant-d" and (self.d is None or self.d < 1):
            raise ValueError("constant-d universe needs a positive d")
        if self.probability_mode not in ("exact-boundary", "literal-eq3"):
            raise ValueError(f"unknown probability mode {self.probability_mode!r}")

    def degrees(self, obs: Observation | Graph) -> np.ndarray:
        obs = _as_obs(obs)
        u = self.degree_universe
        if u == "tracing-network":
            return obs.graph.degree
        if u == "observed-contacts":
            deg = obs.contact_degree
        elif u == "epidemic-network":
            if obs.epidemic_degree is None:
                raise ValueError("observation carries no epidemic-network degrees")
            deg = obs.epidemic_degree
        elif u == "constant-d":
            if obs.n and obs.graph.degree.max(initial=0) > self.d:
                raise ValueError(f"constant d={self.d} below the support's max degree")
            return np.full(obs.n, self.d, dtype=np.int64)
        else:
            raise ValueError(f"unknown degree universe {u!r}")
        if np.any(deg < obs.graph.degree):
            raise ValueError(f"{u} degrees smaller than support degrees")
        return deg

    def to_dict(self) -> dict:
        return {"degree_universe": self.degree_universe, "probability_mode": self.probability_mode,
                "d": self.d, "phi1": 1}

    @classmethod
    def from_dict(cls, d: dict) -> "LikelihoodConfig":
        return cls(d["degree_universe"], d["probability_mode"], d.get("d"))


def _as_obs(x: Observation | Graph) -> Observation:
    return x if isinstance(x, Observation) else Observation.of(x)


@dataclass
class SourceScores:
    """Per-node log scores for one observation."""

    nodes: np.ndarray
    scores: np.ndarray
    estimator: str
    config: dict = field(default_factory=dict)

    def argmax(self) -> list[int]:
        """Global ids whose score ties the maximum (within 1e-9 in log space)."""
        top = self.scores.max()
        return self.nodes[self.scores >= top - TIE_TOL * max(1.0, abs(top))].tolist()

    def best(self, tie_break: str = "lowest", incumbent: int | None = None) -> int:
        """Single estimate. ``incumbent`` keeps the previous estimate when it is tied."""
        tied = self.argmax()
        if tie_break == "incumbent" and incumbent in tied:
            return incumbent
        if tie_break not in ("lowest", "incumbent"):
            raise ValueError(f"unknown tie break {tie_break!r}")
        return tied[0]

    def ranking(self) -> list[int]:
        """Global ids by descending score, ties by ascending id."""
        order = np.lexsort((self.nodes, -self.scores))
        return self.nodes[order].tolist()

    def score_of(self, v: int) -> float:
        return float(self.scores[int(np.searchsorted(self.nodes, v))])


# ---------------------------------------------------------------- probabilities


def _step_denominator(mode: str, sumdeg: int, internal: int, i: int, phi_prev: int) -> int:
    if mode == "exact-boundary":
        return sumdeg - 2 * internal
    den = sumdeg - 2 * (i - phi_prev - 1)
    if den <= 0:
        raise FormulaDegenerateError(f"literal denominator {den} at step {i}")
    return den


def permutation_probability(sigma: Sequence[int], support: Observation | Graph,
                            cfg: LikelihoodConfig = LikelihoodConfig()) -> float:
    """Log-probability of ``sigma`` (local ids); ``-inf`` if it is not permitted.

    >>> from sourcetrace.graph import path_graph
    >>> round(math.exp(permutation_probability((1, 0, 2), path_graph(3),
    ...       LikelihoodConfig("tracing-network"))), 12)
    0.5
    """
    obs = _as_obs(support)
    n = obs.n
    sigma = [int(x) for x in sigma]
    if sorted(sigma) != list(range(n)):
        raise ValueError("sigma must order every support node exactly once")
    deg = cfg.degrees(obs).tolist()
    adj = obs.graph.adj
    mode = cfg.probability_mode
    pos = [0] * n
    for i, x in enumerate(sigma):
        pos[x] = i
    logp = 0.0
    sumdeg = deg[sigma[0]]
    internal = 0
    phi_prev = 1
    for i in range(1, n):
        x = sigma[i]
        phi = sum(1 for y in adj[x] if pos[y] < i)
        if phi == 0:
            return -math.inf
        den = _step_denominator(mode, sumdeg, internal, i + 1, phi_prev)
        if den <= 0:
            raise FormulaDegenerateError(f"boundary {den} at step {i + 1}")
        logp += math.log(phi) - math.log(den)
        sumdeg += deg[x]
        internal += phi
        phi_prev = phi
    return logp


def literal_mismatch(sigma: Sequence[int], support: Observation | Graph,
                     cfg: LikelihoodConfig = LikelihoodConfig()) -> bool:
    """True when the literal-eq3 denominator differs from the true boundary at some step."""
    obs = _as_obs(support)
    deg = cfg.degrees(obs).tolist()
    adj = obs.graph.adj
    seen = set()
    sumdeg = internal = 0
    phi_prev = 1
    for i, x in enumerate(sigma):
        phi = sum(1 for y in adj[x] if y in seen)
        if i >= 1 and sumdeg - 2 * internal != sumdeg - 2 * (i + 1 - phi_prev - 1):
            return True
        seen.add(x)
        sumdeg += deg[x]
        internal += phi
        phi_prev = phi if i else 1
    return False


# ------------------------------------------------------------------ enumeration


def _walk(obs: Observation, v: int, cfg: LikelihoodConfig, cap: int,
          emit: Callable[[tuple, float], None]) -> int:
    """Depth-first walk over Omega(v) in lexicographic order, emitting (sigma, logp)."""
    n = obs.n
    adj = obs.graph.adj
    deg = cfg.degrees(obs).tolist()
    mode = cfg.probability_mode
    cnt = [0] * n
    taken = [False] * n
    prefix = [v]
    taken[v] = True
    for y in adj[v]:
        cnt[y] += 1
    count = 0

    def rec(sumdeg: int, internal: int, phi_prev: int, logp: float) -> None:
        nonlocal count
        k = len(prefix)
        if k == n:
            count += 1
            if count > cap:
                raise EnumerationCapError(f"more than {cap} permitted permutations; use sampling")
            emit(tuple(prefix), logp)
            return
        den = _step_denominator(mode, sumdeg, internal, k + 1, phi_prev)
        if den <= 0:
            raise FormulaDegenerateError(f"boundary {den} at step {k + 1}")
        lden = math.log(den)
        for w in range(n):
            if taken[w] or not cnt[w]:
                continue
            phi = cnt[w]
            taken[w] = True
            prefix.append(w)
            for y in adj[w]:
                cnt[y] += 1
            rec(sumdeg + deg[w], internal + phi, phi, logp + math.log(phi) - lden)
            for y in adj[w]:
                cnt[y] -= 1
            prefix.pop()
            taken[w] = False

    if n == 1:
        emit((v,), 0.0)
        return 1
    if not is_connected(obs.graph):
        raise GraphError("support graph must be connected")
    rec(deg[v], 0, 1, 0.0)
    return count


def enumerate_permitted(support: Observation | Graph, v: int, cap: int = DEFAULT_CAP) -> list[tuple[int, ...]]:
    """All permitted permutations rooted at local node ``v``, lexicographically."""
    out: list[tuple[int, ...]] = []
    _walk(_as_obs(support), v, LikelihoodConfig("tracing-network"), cap, lambda s, lp: out.append(s))
    return out


def enumerate_with_probabilities(support: Observation | Graph, v: int,
                                 cfg: LikelihoodConfig = LikelihoodConfig(),
                                 cap: int = DEFAULT_CAP) -> tuple[list[tuple[int, ...]], np.ndarray]:
    perms: list[tuple[int, ...]] = []
    logps: list[float] = []

    def emit(s, lp):
        perms.append(s)
        logps.append(lp)

    _walk(_as_obs(support), v, cfg, cap, emit)
    return perms, np.array(logps)


def permutation_logps(support: Observation | Graph, v: int, cfg: LikelihoodConfig = LikelihoodConfig(),
                      cap: int = DEFAULT_CAP) -> np.ndarray:
    logps: list[float] = []
    _walk(_as_obs(support), v, cfg, cap, lambda s, lp: logps.append(lp))
    return np.array(logps)


def exact_likelihood(support: Observation | Graph, v: int, cfg: LikelihoodConfig = LikelihoodConfig(),
                     cap: int = DEFAULT_CAP) -> float:
    """``log sum_{sigma in Omega(v)} P(sigma | v)`` by full enumeration."""
    return float(logsumexp(permutation_logps(support, v, cfg, cap)))


def exact_mle(support: Observation | Graph, cfg: LikelihoodConfig = LikelihoodConfig(),
              cap: int = DEFAULT_CAP) -> SourceScores:
    obs = _as_obs(support)
    scores = np.array([exact_likelihood(obs, v, cfg, cap) for v in range(obs.n)])
    return SourceScores(obs.nodes.copy(), scores, "exact", {**cfg.to_dict(), "cap": cap})


# ------------------------------------------------------------------ tree counts


@dataclass(frozen=True)
class TreeCounts:
    """|Omega(v)| for every node of a tree: ``log`` always, ``exact`` when requested."""

    log: np.ndarray
    exact: list[int] | None = None


def _tree_arrays(t: Graph, root: int = 0) -> tuple[np.ndarray, np.ndarray]:
    csr = csr_matrix((np.ones(t.indices.size, dtype=np.int8), t.indices, t.indptr), shape=(t.n, t.n))
    order, pred = breadth_first_order(csr, root, directed=True, return_predecessors=True)
    return order.astype(np.int64), pred.astype(np.int64)


def _bfs_levels(order: np.ndarray, pred: np.ndarray, max_levels: int = 4096) -> list[int] | None:
    """Start offsets of each depth level within a BFS order, or None when deeper than ``max_levels``."""
    n = order.size
    pos = np.empty(n, dtype=np.int64)
    pos[order] = np.arange(n)
    parent_pos = pos[pred[order[1:]]]  # nondecreasing along a BFS order
    bounds = [0, 1]
    while bounds[-1] < n:
        if len(bounds) > max_levels:
            return None
        bounds.append(1 + int(np.searchsorted(parent_pos, bounds[-1], side="left")))
    return bounds


def count_permutations_tree(t: Graph, v: int | None = None, exact: bool = False):
    """Number of permitted permutations of a tree, via subtree sizes and re-rooting.

    ``|Omega(v)| = n! / prod_u |T^v_u|``. Sizes come from one upward pass from
    an arbitrary root; a downward pass moves the root across each edge using
    ``R(c) = R(p) * s(c) / (n - s(c))``. Linear time.

    With ``v`` given returns the count for that node (an ``int`` when
    ``exact``, else its natural log); otherwise returns :class:`TreeCounts`.
    """
    n = t.n
    if n == 0 or t.num_edges != n - 1:
        raise GraphError("count_permutations_tree needs a tree")
    order, pred = _tree_arrays(t)
    if order.size != n:
        raise GraphError("count_permutations_tree needs a connected tree")
    levels = _bfs_levels(order, pred)
    size = np.ones(n, dtype=np.int64)
    if levels is None:
        # very deep tree: one Python step per node
        pl = pred.tolist()
        sl = [1] * n
        for c in reversed(order[1:].tolist()):
            sl[pl[c]] += sl[c]
        size = np.asarray(sl, dtype=np.int64)
    else:
        # deepest level first; within a level children are grouped by parent
        for a, b in reversed(list(zip(levels, levels[1:]))[1:]):
            nodes = order[a:b]
            par = pred[nodes]
            starts = np.flatnonzero(np.r_[True, par[1:] != par[:-1]])
            size[par[starts]] += np.add.reduceat(size[nodes], starts)
    logsize = np.log(size.astype(np.float64))
    root = int(order[0])
    log_root = float(gammaln(n + 1) - logsize.sum())
    delta = np.zeros(n)
    child = order[1:]
    delta[child] = logsize[child] - np.log((n - size[child]).astype(np.float64))
    logc = np.empty(n)
    logc[root] = log_root
    if levels is None:
        lc = logc.tolist()
        dl = delta.tolist()
        pl = pred.tolist()
        for c in order[1:].tolist():
            lc[c] = lc[pl[c]] + dl[c]
        logc = np.asarray(lc)
    else:
        for a, b in list(zip(levels, levels[1:]))[1:]:
            nodes = order[a:b]
            logc[nodes] = logc[pred[nodes]] + delta[nodes]
    ex = None
    if exact:
        ex = [0] * n
        denom = 1
        for s in size.tolist():
            denom *= s
        ex[root] = math.factorial(n) // denom
        sl = size.tolist()
        for c in order[1:].tolist():
            num = ex[pred[c]] * sl[c]
            ex[c] = num // (n - sl[c])
    if v is not None:
        return ex[v] if exact else float(logc[v])
    return TreeCounts(logc, ex)


def rumor_centrality(t: Graph) -> np.ndarray:
    """``log |Omega(v)|`` for every node of a tree."""
    return count_permutations_tree(t).log


def log_count(obs: Observation | Graph, v: int) -> tuple[float, bool]:
    """``(log |Omega(v)|, approximate)``; non-trees count on the BFS tree rooted at ``v``."""
    g = _as_obs(obs).graph
    if g.num_edges == g.n - 1:
        return count_permutations_tree(g, v), False
    rt = bfs_tree(g, v)
    child = rt.order[1:]
    span = build_graph(np.stack([rt.parent[child], child], axis=1), n=g.n)
    return count_permutations_tree(span, v), True


# ---------------------------------------------------------------------- sampling


def _omega_weights(obs: Observation, v: int) -> list[int]:
    """Subtree sizes rooted at ``v``: drawing frontier nodes in proportion to them is uniform over Omega."""
    if obs.graph.num_edges != obs.n - 1:
        raise GraphError("uniform sampling over Omega is implemented for trees only")
    return _subtree_sizes_list(bfs_tree(obs.graph, v))


def _sample(obs: Observation, v: int, rng: np.random.Generator, rule: str,
            deg: list[int], mode: str, weight: list[int] | None = None) -> tuple[tuple[int, ...], float]:
    n = obs.n
    adj = obs.graph.adj
    taken = [False] * n
    taken[v] = True
    perm = [v]
    cnt = [0] * n
    sumdeg = deg[v]
    internal = 0
    phi_prev = 1
    logp = 0.0
    if rule == "uniform" and weight is None:
        weight = _omega_weights(obs, v)
    total = 0
    edges: list[tuple[int, int]] = [(v, y) for y in adj[v]]
    frontier: list[int] = list(adj[v])
    for y in adj[v]:
        cnt[y] += 1
    if rule == "uniform":
        total = sum(weight[y] for y in frontier)
    while len(perm) < n:
        if rule == "edge-uniform":
            while True:
                i = int(rng.integers(len(edges)))
                w = edges[i][1]
                edges[i] = edges[-1]
                edges.pop()
                if not taken[w]:
                    break
        elif rule == "node-uniform":
            i = int(rng.integers(len(frontier)))
            w = frontier[i]
            frontier[i] = frontier[-1]
            frontier.pop()
        elif rule == "uniform":
            r = rng.random() * total
            i = 0
            last = len(frontier) - 1
            while i < last:
                r -= weight[frontier[i]]
                if r < 0:
                    break
                i += 1
            w = frontier[i]
            frontier[i] = frontier[-1]
            frontier.pop()
            total -= weight[w]
        else:
            raise ValueError(f"unknown sampling rule {rule!r}")
        phi = cnt[w]
        den = _step_denominator(mode, sumdeg, internal, len(perm) + 1, phi_prev)
        if den <= 0:
            raise FormulaDegenerateError(f"boundary {den} at step {len(perm) + 1}")
        logp += math.log(phi) - math.log(den)
        taken[w] = True
        perm.append(w)
        sumdeg += deg[w]
        internal += phi
        phi_prev = phi
        for y in adj[w]:
            if not taken[y]:
                if rule == "edge-uniform":
                    edges.append((w, y))
                elif cnt[y] == 0:
                    frontier.append(y)
                    if rule == "uniform":
                        total += weight[y]
            cnt[y] += 1
    return tuple(perm), logp


def _subtree_sizes_list(rt) -> list[int]:
    size = [0] * rt.parent.size
    parent = rt.parent.tolist()
    for x in rt.order.tolist():
        size[x] = 1
    for x in rt.order[:0:-1].tolist():
        size[parent[x]] += size[x]
    return size


def sample_permutation(support: Observation | Graph, v: int, rng: np.random.Generator,
                       rule: SamplingRule = "edge-uniform") -> tuple[int, ...]:
    """Random permitted permutation grown from ``v``.

    ``edge-uniform``/``node-uniform`` grow like SI spreading over the support;
    ``uniform`` draws uniformly from Omega(v) (trees: each frontier node is
    picked with probability proportional to its subtree size).
    """
    obs = _as_obs(support)
    return _sample(obs, v, rng, rule, obs.graph.degree.tolist(), "exact-boundary")[0]


def sample_logps(support: Observation | Graph, v: int, k: int, rng: np.random.Generator,
                 cfg: LikelihoodConfig = LikelihoodConfig(), rule: SamplingRule = "edge-uniform") -> np.ndarray:
    obs = _as_obs(support)
    deg = cfg.degrees(obs).tolist()
    rule = resolve_rule(obs, rule)
    weight = _omega_weights(obs, v) if rule == "uniform" else None
    return np.array([_sample(obs, v, rng, rule, deg, cfg.probability_mode, weight)[1] for _ in range(k)])


def random_bfs_permutation(support: Observation | Graph, v: int, rng: np.random.Generator) -> tuple[int, ...]:
    """BFS order from ``v`` with each node's unvisited neighbors shuffled."""
    obs = _as_obs(support)
    adj = obs.graph.adj
    seen = [False] * obs.n
    seen[v] = True
    order = [v]
    head = 0
    while head < len(order):
        u = order[head]
        head += 1
        nb = [y for y in adj[u] if not seen[y]]
        for j in rng.permutation(len(nb)).tolist():
            y = nb[j]
            seen[y] = True
            order.append(y)
    return tuple(order)


# -------------------------------------------------------------------- estimators


def approx_average(support: Observation | Graph, v: int, k: int, rng: np.random.Generator,
                   cfg: LikelihoodConfig = LikelihoodConfig(), rule: SamplingRule = "edge-uniform") -> float:
    """Log of the mean probability of ``k`` sampled permitted permutations."""
    if k < 1:
        raise ValueError("k must be at least 1")
    return float(logsumexp(sample_logps(support, v, k, rng, cfg, rule)) - math.log(k))


def resolve_rule(support: Observation | Graph, rule: SamplingRule) -> str:
    """``auto`` samples uniformly over Omega on trees and by edge-uniform growth otherwise."""
    if rule != "auto":
        return rule
    g = _as_obs(support).graph
    return "uniform" if g.num_edges == g.n - 1 else "edge-uniform"


def approx_rsavr(support: Observation | Graph, v: int, k: int = 100,
                 cfg: LikelihoodConfig = LikelihoodConfig(), rng: np.random.Generator | None = None,
                 rule: SamplingRule = "auto") -> float:
    """``log[(1/k) sum_i P(sigma_i | v) * |Omega(v)|]`` over ``k`` sampled permutations."""
    rng = rng if rng is not None else np.random.default_rng(0)
    rule = resolve_rule(support, rule)
    lc, _ = log_count(support, v)
    return approx_average(support, v, k, rng, cfg, rule) + lc


def approx_bfsran(support: Observation | Graph, v: int, cfg: LikelihoodConfig = LikelihoodConfig(),
                  rng: np.random.Generator | None = None) -> float:
    """``log[P(sigma_bfs | v) * |Omega(v)|]`` for one randomised BFS order."""
    rng = rng if rng is not None else np.random.default_rng(0)
    sigma = random_bfs_permutation(support, v, rng)
    lc, _ = log_count(support, v)
    return permutation_probability(sigma, support, cfg) + lc


def extreme_logps(support: Observation | Graph, v: int, cfg: LikelihoodConfig, mode: str,
                  rng: np.random.Generator, k: int = 100, cap: int = DEFAULT_CAP) -> tuple[float, bool]:
    """Max/min/random single-permutation log-probability; ``(value, enumerated)``."""
    try:
        logps = permutation_logps(support, v, cfg, cap)
        enumerated = True
    except EnumerationCapError:
        logps = sample_logps(support, v, k, rng, cfg)
        enumerated = False
    if mode == "DegMax":
        val = logps.max()
    elif mode == "DegMin":
        val = logps.min()
    elif mode == "DegRan":
        val = logps[int(rng.integers(logps.size))]
    else:
        raise ValueError(f"unknown extreme mode {mode!r}")
    return float(val), enumerated


def approx_extremes(support: Observation | Graph, v: int, cfg: LikelihoodConfig = LikelihoodConfig(),
                    mode: str = "DegMax", rng: np.random.Generator | None = None,
                    k: int = 100, cap: int = DEFAULT_CAP) -> float:
    rng = rng if rng is not None else np.random.default_rng(0)
    val, _ = extreme_logps(support, v, cfg, mode, rng, k, cap)
    lc, _ = log_count(support, v)
    return val + lc


def _per_source(obs: Observation, fn, name: str, extra: dict) -> SourceScores:
    scores = np.array([fn(v) for v in range(obs.n)])
    return SourceScores(obs.nodes.copy(), scores, name, extra)


def _approx_count_flag(obs: Observation) -> bool:
    return obs.graph.num_edges != obs.n - 1


def rsavr_scores(support: Observation | Graph, k: int = 100, cfg: LikelihoodConfig = LikelihoodConfig(),
                 seed: int = 0, rule: SamplingRule = "auto") -> SourceScores:
    """RSAvr over all sources; node ``v`` draws from substream ``(seed, global id)``."""
    obs = _as_obs(support)
    rule = resolve_rule(obs, rule)
    snap = {**cfg.to_dict(), "k": k, "seed": seed, "sampling_rule": rule,
            "count": "approximate-count" if _approx_count_flag(obs) else "exact-count"}
    return _per_source(obs, lambda v: approx_rsavr(obs, v, k, cfg, substream(seed, int(obs.nodes[v])), rule),
                       "rsavr", snap)


def bfsran_scores(support: Observation | Graph, cfg: LikelihoodConfig = LikelihoodConfig(),
                  seed: int = 0) -> SourceScores:
    obs = _as_obs(support)
    snap = {**cfg.to_dict(), "seed": seed,
            "count": "approximate-count" if _approx_count_flag(obs) else "exact-count"}
    return _per_source(obs, lambda v: approx_bfsran(obs, v, cfg, substream(seed, int(obs.nodes[v]))),
                       "bfsran", snap)


def extreme_scores(support: Observation | Graph, mode: str, cfg: LikelihoodConfig = LikelihoodConfig(),
                   seed: int = 0, k: int = 100, cap: int = DEFAULT_CAP) -> SourceScores:
    obs = _as_obs(support)
    flags = []

    def one(v):
        rng = substream(seed, int(obs.nodes[v]))
        val, enumerated = extreme_logps(obs, v, cfg, mode, rng, k, cap)
        flags.append(enumerated)
        return val + log_count(obs, v)[0]

    res = _per_source(obs, one, mode.lower(), {})
    res.config = {**cfg.to_dict(), "seed": seed, "k": k, "cap": cap,
                  "over": "enumeration" if all(flags) else "samples",
                  "count": "approximate-count" if _approx_count_flag(obs) else "exact-count"}
    return res


def regular_tree_log_constant(n: int, d: int) -> float:
    """``log P(sigma|v)`` shared by every permutation of an n-node tree in a d-regular universe."""
    i = np.arange(2, n + 1)
    return float(-np.log(d * (i - 1) - 2 * (i - 2)).sum()) if n > 1 else 0.0


def centrality_scores(support: Observation | Graph, d: int | None = None) -> SourceScores:
    """Tree likelihoods via message passing.

    With ``d`` set this is the exact likelihood under a constant-``d`` degree
    universe (every permutation has the same probability); without it the
    score is ``log |Omega(v)|`` alone.
    """
    obs = _as_obs(support)
    logc = count_permutations_tree(obs.graph).log
    if d is not None:
        if obs.graph.degree.max(initial=0) > d:
            raise ValueError(f"constant d={d} below the support's max degree")
        logc = logc + regular_tree_log_constant(obs.n, d)
    cfg = {"degree_universe": "constant-d", "d": d} if d is not None else {"score": "log-count"}
    return SourceScores(obs.nodes.copy(), logc, "centrality", cfg)


def score(support: Observation | Graph, estimator: str, cfg: LikelihoodConfig = LikelihoodConfig(),
          seed: int = 0, k: int = 100, cap: int = DEFAULT_CAP, rule: SamplingRule = "auto") -> SourceScores:
    """Dispatch by estimator name (the non-learned ones)."""
    if estimator == "exact":
        return exact_mle(support, cfg, cap)
    if estimator == "rsavr":
        return rsavr_scores(support, k, cfg, seed, rule)
    if estimator == "bfsran":
        return bfsran_scores(support, cfg, seed)
    if estimator in ("degmax", "degmin", "degran"):
        return extreme_scores(support, {"degmax": "DegMax", "degmin": "DegMin", "degran": "DegRan"}[estimator],
                              cfg, seed, k, cap)
    if estimator == "centrality":
        return centrality_scores(support, cfg.d if cfg.degree_universe == "constant-d" else None)
    raise ValueError(f"unknown estimator {estimator!r}")


ESTIMATORS = ("exact", "rsavr", "bfsran", "degmax", "degmin", "degran", "centrality")


def iter_permitted(support: Observation | Graph, v: int, cap: int = DEFAULT_CAP) -> Iterator[tuple[int, ...]]:
    yield from enumerate_permitted(support, v, cap)
