"""Graph neural network that regresses per-node source log-likelihoods.

Each layer aggregates neighbour states and combines them with the node's own
state: ``h <- relu(W [h ; agg(h_neighbours)] + b)``. A linear head maps the
last state to one scalar per node. Forward and reverse passes are written
out by hand in numpy; :func:`gradients` is checked against central finite
differences in the test suite.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from .epidemic import substream
from .likelihood import (
    DEFAULT_CAP,
    LikelihoodConfig,
    Observation,
    SourceScores,
    _as_obs,
    centrality_scores,
    exact_mle,
    rsavr_scores,
)

log = logging.getLogger(__name__)

Aggregator = Literal["mean", "sum", "max", "lstm"]
Phase = Literal["pretrain", "finetune"]
BoundaryMode = Literal["farthest-leaf", "nearest-exit"]

PROVENANCES = ("approx-eq11", "exact-eq2", "regular-tree-centrality")
PHASE_PROVENANCE = {"pretrain": ("approx-eq11",), "finetune": ("exact-eq2", "regular-tree-centrality")}


class TrainingDivergedError(FloatingPointError):
    """Loss or an intermediate became non-finite during training."""


# ------------------------------------------------------------------ features


def _outside_edges(obs: Observation) -> int:
    return int(obs.contact_degree.sum() - 2 * obs.graph.num_edges)


def degree_ratio(support: Observation | object) -> np.ndarray:
    """Contact degree over the total degree of the observed contact network.

    The observed network is G_n plus every recorded contact of a traced node,
    so the denominator is ``sum(contact degree) + (# edges to untraced contacts)``.
    With no outside contacts the ratios sum to 1.
    """
    obs = _as_obs(support)
    if obs.n == 0:
        raise ValueError("empty graph")
    total = int(obs.contact_degree.sum()) + _outside_edges(obs)
    if total == 0:
        return np.ones(obs.n) / obs.n
    return obs.contact_degree / total


def infected_proportion(support: Observation | object) -> np.ndarray:
    """Share of each node's contacts that are in the (infected) support graph."""
    obs = _as_obs(support)
    if obs.n > 1 and np.any(obs.contact_degree == 0):
        raise ValueError("isolated node has no contacts")
    if obs.n == 1:
        return np.ones(1)
    return obs.graph.degree / obs.contact_degree


def _hop_matrix(obs: Observation, sources: np.ndarray) -> np.ndarray:
    g = obs.graph
    csr = csr_matrix((np.ones(g.indices.size), g.indices, g.indptr), shape=(g.n, g.n))
    return shortest_path(csr, unweighted=True, directed=False, indices=sources)


def boundary_distance_ratio(support: Observation | object, mode: BoundaryMode = "farthest-leaf") -> np.ndarray:
    """``b(v) / max b`` for a boundary distance ``b``.

    ``farthest-leaf``: ``b(v)`` is the largest hop distance from ``v`` to a leaf
    of the support graph (any node when it has no leaves).

    ``nearest-exit``: ``b(v)`` is the number of nodes on a shortest path from
    ``v`` out to an untraced contact: two more than the hop distance to the
    nearest support node that has one. Nodes of a support without untraced
    contacts use the support leaves as exits.
    """
    obs = _as_obs(support)
    n = obs.n
    if n == 1:
        return np.ones(1)
    deg = obs.graph.degree
    if mode == "farthest-leaf":
        leaves = np.flatnonzero(deg <= 1)
        if leaves.size == 0:
            leaves = np.arange(n)
        b = _hop_matrix(obs, leaves).max(axis=0)
    elif mode == "nearest-exit":
        exits = np.flatnonzero(obs.contact_degree > deg)
        if exits.size == 0:
            exits = np.flatnonzero(deg <= 1)
        b = _hop_matrix(obs, exits).min(axis=0) + 2
    else:
        raise ValueError(f"unknown boundary mode {mode!r}")
    if not np.all(np.isfinite(b)):
        raise ValueError("support graph is disconnected")
    return b / b.max()


def node_features(support: Observation | object, boundary: BoundaryMode = "farthest-leaf") -> np.ndarray:
    """``n x 3`` matrix ``[degree ratio, infected proportion, boundary distance ratio]``."""
    obs = _as_obs(support)
    return np.stack([degree_ratio(obs), infected_proportion(obs), boundary_distance_ratio(obs, boundary)], axis=1)


# ------------------------------------------------------------------ model


@dataclass(frozen=True)
class GnnConfig:
    aggregator: Aggregator = "mean"
    layers: int = 3
    hidden: int = 32
    in_dim: int = 3
    boundary: BoundaryMode = "farthest-leaf"
    lstm_shuffle: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.aggregator not in ("mean", "sum", "max", "lstm"):
            raise ValueError(f"unknown aggregator {self.aggregator!r}")
        if self.layers < 1 or self.hidden < 1:
            raise ValueError("layers and hidden must be positive")

    def to_dict(self) -> dict:
        return {"aggregator": self.aggregator, "layers": self.layers, "hidden": self.hidden,
                "in_dim": self.in_dim, "boundary": self.boundary, "lstm_shuffle": self.lstm_shuffle,
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "GnnConfig":
        return cls(**d)

    def layer_in(self, layer: int) -> int:
        return self.in_dim if layer == 0 else self.hidden


def _glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_out, fan_in))


@dataclass
class GnnModel:
    """Parameters plus config. ``params`` maps names to float64 arrays.

    Layer ``l`` owns ``W{l}`` (hidden x 2*in) and ``b{l}``; the lstm aggregator
    adds ``Lx{l}``, ``Lh{l}`` (4*in x in) and ``Lb{l}``; the head is ``w_out``
    and ``b_out``.
    """

    config: GnnConfig
    params: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    @classmethod
    def init(cls, config: GnnConfig = GnnConfig()) -> "GnnModel":
        p: dict[str, np.ndarray] = {}
        for l in range(config.layers):
            f = config.layer_in(l)
            rng = substream(config.seed, l)
            p[f"W{l}"] = _glorot(rng, config.hidden, 2 * f)
            p[f"b{l}"] = np.zeros(config.hidden)
            if config.aggregator == "lstm":
                p[f"Lx{l}"] = _glorot(rng, 4 * f, f)
                p[f"Lh{l}"] = _glorot(rng, 4 * f, f)
                p[f"Lb{l}"] = np.zeros(4 * f)
        p["w_out"] = _glorot(substream(config.seed, config.layers), 1, config.hidden)[0]
        p["b_out"] = np.zeros(1)
        return cls(config, p, {"init": "glorot-uniform", "optimizer": None})

    def copy(self) -> "GnnModel":
        return GnnModel(self.config, {k: v.copy() for k, v in self.params.items()}, copy.deepcopy(self.meta))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in sorted(self.params)])

    def check(self) -> None:
        cfg = self.config
        for l in range(cfg.layers):
            f = cfg.layer_in(l)
            if self.params[f"W{l}"].shape != (cfg.hidden, 2 * f):
                raise ValueError(f"layer {l} weight shape {self.params[f'W{l}'].shape}")
        if self.params["w_out"].shape != (cfg.hidden,):
            raise ValueError("output head shape mismatch")
        for k, v in self.params.items():
            if not np.all(np.isfinite(v)):
                raise ValueError(f"non-finite parameter {k}")


# ------------------------------------------------------------ graph inputs


@dataclass
class GraphInput:
    """Everything the forward pass needs about one support graph."""

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    row: np.ndarray
    mean_op: csr_matrix
    sum_op: csr_matrix
    seq: np.ndarray        # n x T neighbour ids for the lstm, -1 padded
    lengths: np.ndarray
    feats: np.ndarray


def _lstm_order(adj, deg: np.ndarray, v: int) -> list[int]:
    # descending degree, then ascending id
    return sorted(adj[v], key=lambda u: (-int(deg[u]), u))


def prepare(support: Observation | object, config: GnnConfig = GnnConfig(),
            feats: np.ndarray | None = None) -> GraphInput:
    obs = _as_obs(support)
    g = obs.graph
    n = g.n
    indptr, indices = g.indptr, g.indices
    deg = np.diff(indptr)
    row = np.repeat(np.arange(n), deg)
    ones = np.ones(indices.size)
    sum_op = csr_matrix((ones, indices, indptr), shape=(n, n))
    inv = np.divide(1.0, deg, out=np.zeros(n), where=deg > 0)
    mean_op = csr_matrix((inv[row], indices, indptr), shape=(n, n))
    T = int(deg.max(initial=0))
    seq = np.full((n, max(T, 1)), -1, dtype=np.int64)
    for v in range(n):
        order = _lstm_order(g.adj, deg, v)
        seq[v, : len(order)] = order
    x = node_features(obs, config.boundary) if feats is None else np.asarray(feats, dtype=np.float64)
    if x.shape != (n, config.in_dim):
        raise ValueError(f"features have shape {x.shape}, expected {(n, config.in_dim)}")
    return GraphInput(n, indptr, indices, row, mean_op, sum_op, seq, deg.astype(np.int64), x)


def _shuffled_seq(gi: GraphInput, rng: np.random.Generator) -> np.ndarray:
    seq = gi.seq.copy()
    for v in range(gi.n):
        k = int(gi.lengths[v])
        if k > 1:
            seq[v, :k] = seq[v, rng.permutation(k)]
    return seq


# ----------------------------------------------------------- aggregators


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _agg_forward(kind: str, h: np.ndarray, gi: GraphInput, p: dict, l: int, seq: np.ndarray):
    if kind == "mean":
        return gi.mean_op @ h, None
    if kind == "sum":
        return gi.sum_op @ h, None
    if kind == "max":
        f = h.shape[1]
        out = np.full((gi.n, f), -np.inf, dtype=h.dtype)
        vals = h[gi.indices]
        np.maximum.at(out, gi.row, vals)
        empty = gi.lengths == 0
        out[empty] = 0.0
        e = gi.indices.size
        cand = np.where(vals == out[gi.row], np.arange(e)[:, None], e)
        winner = np.full((gi.n, f), e)
        np.minimum.at(winner, gi.row, cand)
        return out, winner
    # lstm
    Lx, Lh, Lb = p[f"Lx{l}"], p[f"Lh{l}"], p[f"Lb{l}"]
    f = h.shape[1]
    hs = np.zeros((gi.n, f), dtype=h.dtype)
    cs = np.zeros((gi.n, f), dtype=h.dtype)
    steps = []
    for t in range(seq.shape[1]):
        active = gi.lengths > t
        if not active.any():
            break
        x = np.where(active[:, None], h[np.maximum(seq[:, t], 0)], 0.0)
        z = x @ Lx.T + hs @ Lh.T + Lb
        i, fg, g, o = _sigmoid(z[:, :f]), _sigmoid(z[:, f:2 * f]), np.tanh(z[:, 2 * f:3 * f]), _sigmoid(z[:, 3 * f:])
        c_new = fg * cs + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        steps.append((active, x, hs, cs, i, fg, g, o, tc))
        a = active[:, None]
        hs = np.where(a, h_new, hs)
        cs = np.where(a, c_new, cs)
    return hs, steps


def _agg_backward(kind: str, dagg: np.ndarray, h: np.ndarray, gi: GraphInput, p: dict, l: int,
                  cache, seq: np.ndarray, grads: dict) -> np.ndarray:
    if kind == "mean":
        return gi.mean_op.T @ dagg
    if kind == "sum":
        return gi.sum_op.T @ dagg
    dh = np.zeros_like(h)
    if kind == "max":
        winner = cache
        rows = np.flatnonzero(gi.lengths > 0)
        if rows.size:
            src = gi.indices[winner[rows]]
            cols = np.broadcast_to(np.arange(h.shape[1]), src.shape)
            np.add.at(dh, (src, cols), dagg[rows])
        return dh
    Lx, Lh = p[f"Lx{l}"], p[f"Lh{l}"]
    f = h.shape[1]
    dLx = np.zeros_like(Lx)
    dLh = np.zeros_like(Lh)
    dLb = np.zeros(4 * f)
    dhs = dagg.copy()
    dcs = np.zeros_like(dagg)
    for t in range(len(cache) - 1, -1, -1):
        active, x, h_prev, c_prev, i, fg, g, o, tc = cache[t]
        a = active[:, None]
        dh_a = np.where(a, dhs, 0.0)
        dc_a = np.where(a, dcs, 0.0)
        do = dh_a * tc
        dct = dc_a + dh_a * o * (1.0 - tc * tc)
        dz = np.concatenate([dct * g * i * (1.0 - i), dct * c_prev * fg * (1.0 - fg),
                             dct * i * (1.0 - g * g), do * o * (1.0 - o)], axis=1)
        dLx += dz.T @ x
        dLh += dz.T @ h_prev
        dLb += dz.sum(axis=0)
        dx = dz @ Lx
        idx = np.flatnonzero(active)
        np.add.at(dh, seq[idx, t], dx[idx])
        dhs = np.where(a, dz @ Lh, dhs)
        dcs = np.where(a, dct * fg, dcs)
    grads[f"Lx{l}"] = dLx
    grads[f"Lh{l}"] = dLh
    grads[f"Lb{l}"] = dLb
    return dh


# ------------------------------------------------------- forward / backward


def _forward(model: GnnModel, gi: GraphInput, seq: np.ndarray | None = None):
    p = model.params
    cfg = model.config
    seq = gi.seq if seq is None else seq
    h = gi.feats
    if h.shape[1] != cfg.in_dim:
        raise ValueError(f"feature width {h.shape[1]} != model input {cfg.in_dim}")
    caches = []
    for l in range(cfg.layers):
        agg, acache = _agg_forward(cfg.aggregator, h, gi, p, l, seq)
        c = np.concatenate([h, agg], axis=1)
        z = c @ p[f"W{l}"].T + p[f"b{l}"]
        caches.append((h, agg, acache, c, z))
        h = np.maximum(z, 0.0)
        if not np.all(np.isfinite(h)):
            raise TrainingDivergedError(f"non-finite activations after layer {l}")
    y = h @ p["w_out"] + p["b_out"][0]
    return y, (caches, h)


def forward(model: GnnModel, support: Observation | GraphInput, feats: np.ndarray | None = None) -> np.ndarray:
    """Predicted log-likelihood for every node of the support graph."""
    gi = support if isinstance(support, GraphInput) else prepare(support, model.config, feats)
    return _forward(model, gi)[0]


def loss(predictions, labels):
    """Sum of squared errors, in the wider of the two input precisions."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError(f"{predictions.shape} predictions vs {labels.shape} labels")
    return ((labels - predictions) ** 2).sum()


def _backward(model: GnnModel, gi: GraphInput, labels: np.ndarray, seq: np.ndarray | None = None):
    seq = gi.seq if seq is None else seq
    y, (caches, h_last) = _forward(model, gi, seq)
    p = model.params
    cfg = model.config
    dy = 2.0 * (y - labels)
    grads: dict[str, np.ndarray] = {"w_out": h_last.T @ dy, "b_out": np.array([dy.sum()])}
    dh = np.outer(dy, p["w_out"])
    for l in range(cfg.layers - 1, -1, -1):
        h, agg, acache, c, z = caches[l]
        dz = dh * (z > 0)
        grads[f"W{l}"] = dz.T @ c
        grads[f"b{l}"] = dz.sum(axis=0)
        dc = dz @ p[f"W{l}"]
        f = h.shape[1]
        dh = dc[:, :f] + _agg_backward(cfg.aggregator, dc[:, f:], h, gi, p, l, acache, seq, grads)
    return loss(y, labels), grads


@dataclass
class LabeledGraph:
    """A support graph with its features and per-node log-likelihood labels."""

    obs: Observation
    labels: np.ndarray
    provenance: str
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown label provenance {self.provenance!r}")
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.labels.shape != (self.obs.n,):
            raise ValueError("one label per node required")
        self._inputs: dict = {}

    def inputs(self, config: GnnConfig) -> GraphInput:
        key = (config.boundary, config.in_dim)
        if key not in self._inputs:
            self._inputs[key] = prepare(self.obs, config)
        return self._inputs[key]


def gradients(model: GnnModel, batch: Sequence[LabeledGraph] | LabeledGraph) -> tuple[float, dict[str, np.ndarray]]:
    """Loss summed over ``batch`` and its gradient for every parameter."""
    batch = [batch] if isinstance(batch, LabeledGraph) else list(batch)
    total = 0.0
    acc = {k: np.zeros_like(v) for k, v in model.params.items()}
    for lg in batch:
        val, g = _backward(model, lg.inputs(model.config), lg.labels)
        total += val
        for k, v in g.items():
            acc[k] += v
    for k, v in acc.items():
        if not np.all(np.isfinite(v)):
            raise TrainingDivergedError(f"non-finite gradient for {k}")
    return total, acc


# ---------------------------------------------------------------- labels


def annotate(support: Observation | object, provenance: str, cfg: LikelihoodConfig = LikelihoodConfig(),
             seed: int = 0, k: int = 100, d: int | None = None, cap: int = DEFAULT_CAP) -> LabeledGraph:
    """Label every node with a log-likelihood.

    ``approx-eq11``: sampled average (RSAvr) with ``k`` samples per node.
    ``exact-eq2``: full enumeration; raises when the enumeration cap is hit.
    ``regular-tree-centrality``: exact closed form for a tree under a
    constant-``d`` universe.
    """
    obs = _as_obs(support)
    if provenance == "approx-eq11":
        s = rsavr_scores(obs, k, cfg, seed)
    elif provenance == "exact-eq2":
        s = exact_mle(obs, cfg, cap)
    elif provenance == "regular-tree-centrality":
        if d is None:
            raise ValueError("regular-tree labels need d")
        s = centrality_scores(obs, d)
    else:
        raise ValueError(f"unknown label provenance {provenance!r}")
    return LabeledGraph(obs, s.scores, provenance, s.config)


# -------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    phase: Phase = "pretrain"
    epochs: int = 150
    lr: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    center_output: bool = True

    def __post_init__(self):
        if self.phase not in PHASE_PROVENANCE:
            raise ValueError(f"unknown phase {self.phase!r}")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.lr <= 0:
            raise ValueError("step size must be positive")
        if self.optimizer != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        return {"phase": self.phase, "epochs": self.epochs, "lr": self.lr, "optimizer": self.optimizer,
                "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "seed": self.seed,
                "center_output": self.center_output}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)


def dataset_loss(model: GnnModel, data: Sequence[LabeledGraph]) -> float:
    """Mean per-graph loss."""
    return float(np.mean([loss(forward(model, lg.inputs(model.config)), lg.labels) for lg in data]))


def train(model: GnnModel, dataset: Sequence[LabeledGraph], cfg: TrainConfig = TrainConfig(),
          validation: Sequence[LabeledGraph] = ()) -> tuple[GnnModel, TrainHistory]:
    """Adam, one update per graph, graphs visited in a seeded order each epoch.

    In the pretrain phase with ``center_output`` the head bias starts at the
    mean label, so early steps fit shape instead of a constant offset.
    """
    ok = PHASE_PROVENANCE[cfg.phase]
    for lg in dataset:
        if lg.provenance not in ok:
            raise ValueError(f"{cfg.phase} expects labels from {ok}, got {lg.provenance}")
    model = model.copy()
    hist = TrainHistory()
    if cfg.epochs == 0 or not dataset:
        return model, hist
    p = model.params
    if cfg.center_output and cfg.phase == "pretrain":
        p["b_out"][:] = np.mean(np.concatenate([lg.labels for lg in dataset]))
    m = {k: np.zeros_like(v) for k, v in p.items()}
    s = {k: np.zeros_like(v) for k, v in p.items()}
    t = 0
    for epoch in range(cfg.epochs):
        rng = substream(cfg.seed, epoch)
        order = rng.permutation(len(dataset))
        ep_loss = 0.0
        for gi_idx in order.tolist():
            lg = dataset[gi_idx]
            gin = lg.inputs(model.config)
            seq = _shuffled_seq(gin, rng) if model.config.lstm_shuffle else None
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    val, g = _backward(model, gin, lg.labels, seq)
            except TrainingDivergedError as e:
                raise TrainingDivergedError(f"epoch {epoch}, graph {gi_idx}: {e}") from None
            if not math.isfinite(val) or not all(np.all(np.isfinite(x)) for x in g.values()):
                raise TrainingDivergedError(f"epoch {epoch}, graph {gi_idx}: loss {val}")
            ep_loss += val
            t += 1
            for k in p:
                m[k] = cfg.beta1 * m[k] + (1 - cfg.beta1) * g[k]
                s[k] = cfg.beta2 * s[k] + (1 - cfg.beta2) * g[k] * g[k]
                mh = m[k] / (1 - cfg.beta1 ** t)
                sh = s[k] / (1 - cfg.beta2 ** t)
                p[k] -= cfg.lr * mh / (np.sqrt(sh) + cfg.eps)
        hist.train_loss.append(ep_loss / len(dataset))
        if validation:
            hist.val_loss.append(dataset_loss(model, validation))
    model.meta.setdefault("training", []).append({**cfg.to_dict(), "graphs": len(dataset),
                                                   "final_loss": hist.train_loss[-1]})
    model.meta["optimizer"] = {"kind": "adam", "betas": [cfg.beta1, cfg.beta2], "lr": cfg.lr}
    return model, hist


def two_phase(model: GnnModel, pretrain_set: Sequence[LabeledGraph], finetune_set: Sequence[LabeledGraph],
              pre_cfg: TrainConfig = TrainConfig("pretrain"),
              fine_cfg: TrainConfig = TrainConfig("finetune")) -> tuple[GnnModel, GnnModel, TrainHistory, TrainHistory]:
    """Pre-train on approximate labels, then fine-tune a copy on exact labels."""
    pre, h1 = train(model, pretrain_set, pre_cfg)
    fine, h2 = train(pre, finetune_set, fine_cfg)
    return pre, fine, h1, h2


# ------------------------------------------------------------ prediction


def gnn_scores(model: GnnModel, support: Observation | object) -> SourceScores:
    obs = _as_obs(support)
    y = forward(model, obs)
    return SourceScores(obs.nodes.copy(), y, "gnn", {"model": model.config.to_dict()})


def predict_topk(model: GnnModel, support: Observation | object, k: int) -> list[int]:
    """Global ids of the ``k`` highest-scoring nodes, ties by id; ``k`` is clamped to ``n``."""
    if k < 1:
        raise ValueError("k must be positive")
    obs = _as_obs(support)
    if k > obs.n:
        log.info("top-%d clamped to %d nodes", k, obs.n)
        k = obs.n
    return gnn_scores(model, obs).ranking()[:k]
