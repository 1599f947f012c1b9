"""Forward contact tracing over an epidemic network and trajectory analysis."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterator, Literal, Sequence

import numpy as np

from .epidemic import EpidemicNetwork
from .graph import Graph, GraphError, bfs_distances
from .likelihood import LikelihoodConfig, Observation, SourceScores, centrality_scores, score

Strategy = Literal["BFS", "DFS"]
Estimator = Callable[[Observation], SourceScores]


class TraceComplete(StopIteration):
    """No untraced infected node is reachable from the tracing network."""


class TraceState:
    """Mutable tracing state; single owner.

    Traced nodes are always infected; tracing never expands through an
    uninfected contact, but every contact of a traced node is recorded.
    """

    def __init__(self, epidemic: EpidemicNetwork, index_case: int, strategy: Strategy = "BFS"):
        if strategy not in ("BFS", "DFS"):
            raise ValueError(f"unknown strategy {strategy!r}")
        if not (0 <= index_case < epidemic.base.n and epidemic.infected_mask[index_case]):
            raise GraphError(f"index case {index_case} is not infected")
        self.epidemic = epidemic
        self.index_case = int(index_case)
        self.strategy = strategy
        self.traced: list[int] = []
        self._traced = np.zeros(epidemic.base.n, dtype=bool)
        self._seen = np.zeros(epidemic.base.n, dtype=bool)
        self._queue: deque[int] = deque()
        self._stack: list[int] = []
        self._visit(self.index_case)

    @property
    def n(self) -> int:
        return len(self.traced)

    def _visit(self, x: int) -> None:
        self.traced.append(x)
        self._traced[x] = True
        self._seen[x] = True
        if self.strategy == "BFS":
            inf = self.epidemic.infected_mask
            for y in self.epidemic.base.adj[x]:
                if inf[y] and not self._seen[y]:
                    self._seen[y] = True
                    self._queue.append(y)
        else:
            self._stack.append(x)

    def _next(self) -> int:
        if self.strategy == "BFS":
            if not self._queue:
                raise TraceComplete
            return self._queue.popleft()
        inf = self.epidemic.infected_mask
        adj = self.epidemic.base.adj
        while self._stack:
            top = self._stack[-1]
            for y in adj[top]:
                if inf[y] and not self._traced[y]:
                    return y
            self._stack.pop()
        raise TraceComplete

    def step(self) -> "TraceState":
        self._visit(self._next())
        return self

    @property
    def observed_contacts(self) -> set[tuple[int, int]]:
        adj = self.epidemic.base.adj
        return {(x, y) for x in self.traced for y in adj[x]}

    def observation(self) -> Observation:
        """The current G_n with contact degrees from the base graph."""
        epi = self.epidemic
        g, nodes = epi.base.subgraph(self.traced)
        gn_local = epi.induced.degree[np.searchsorted(epi.nodes, nodes)]
        return Observation(g, nodes, epi.base.degree[nodes], gn_local)


def trace_step(state: TraceState, strategy: Strategy | None = None) -> TraceState:
    if strategy is not None and strategy != state.strategy:
        raise ValueError("strategy is fixed for a run")
    return state.step()


@dataclass
class TraceRun:
    """One tracing run: traced order plus the estimate after every stage."""

    strategy: str
    index_case: int
    traced: list[int]
    estimates: list[int]
    estimated_stages: list[int] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def final(self) -> int:
        return self.estimates[-1]

    def views(self, epidemic: EpidemicNetwork) -> Iterator[tuple[Graph, np.ndarray]]:
        for n in range(1, len(self.traced) + 1):
            yield epidemic.base.subgraph(self.traced[:n])


def run_trace(epidemic: EpidemicNetwork, index_case: int, strategy: Strategy,
              estimator: Estimator, every: int = 1, tie_break: str = "lowest") -> TraceRun:
    """Trace to completion, estimating the source after each stage.

    With ``every > 1`` the estimator runs on stages ``1, 1+every, ...`` and the
    final stage; skipped stages repeat the previous estimate.
    """
    if every < 1:
        raise ValueError("every must be at least 1")
    state = TraceState(epidemic, index_case, strategy)
    estimates: list[int] = []
    done: list[int] = []
    incumbent: int | None = None
    while True:
        n = state.n
        last = False
        try:
            nxt = state._next()
        except TraceComplete:
            last = True
        if n == 1:
            est = state.index_case
            done.append(n)
        elif last or (n - 1) % every == 0:
            est = estimator(state.observation()).best(tie_break, incumbent)
            done.append(n)
        else:
            est = incumbent
        estimates.append(est)
        incumbent = est
        if last:
            break
        state._visit(nxt)
    return TraceRun(strategy, int(index_case), list(state.traced), estimates, done,
                    {"every": every, "tie_break": tie_break})


def make_estimator(name: str, cfg: LikelihoodConfig = LikelihoodConfig(), seed: int = 0,
                   k: int = 100, rule: str = "auto", model=None) -> Estimator:
    """Estimator callable for :func:`run_trace`.

    ``centrality`` is the tree-only message-passing MLE under a constant-d
    universe (any ``d`` gives the same argmax); ``gnn`` needs ``model``.
    """
    if name == "centrality":
        return lambda obs: centrality_scores(obs)
    if name == "gnn":
        if model is None:
            raise ValueError("gnn estimator needs a model")
        from .gnn import gnn_scores
        return lambda obs: gnn_scores(model, obs)
    return lambda obs: score(obs, name, cfg, seed=seed, k=k, rule=rule)


# ----------------------------------------------------------------- trajectories


def classify_transitions(s: Sequence[int]) -> tuple[tuple[int, int, int], list[str]]:
    """Counts of unchanged (S1), first-time (S2) and revisited (S3) consecutive pairs."""
    if len(s) < 1:
        raise ValueError("empty estimate sequence")
    tags = []
    seen = {s[0]}
    for a, b in zip(s, s[1:]):
        if a == b:
            tags.append("S1")
        elif b in seen:
            tags.append("S3")
        else:
            tags.append("S2")
        seen.add(b)
    return (tags.count("S1"), tags.count("S2"), tags.count("S3")), tags


def is_shortest_path_trajectory(s: Sequence[int], epidemic: EpidemicNetwork) -> bool:
    """Whether the de-duplicated estimates walk a shortest path in G_N from first to last."""
    if not s:
        raise ValueError("empty estimate sequence")
    g = epidemic.induced
    loc = [epidemic.local(v) for v in s]
    walk = [loc[0]]
    for x in loc[1:]:
        if x != walk[-1]:
            walk.append(x)
    if len(walk) == 1:
        return True
    dist = int(bfs_distances(g, walk[0])[walk[-1]])
    if dist != len(walk) - 1:
        return False
    return all(g.has_edge(a, b) for a, b in zip(walk, walk[1:]))
