"""Evaluation quantities for tracing runs and source estimators."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph import Graph, bfs_distances


class DegenerateNormalizationError(ValueError):
    """Refused: the reference log-likelihood is 0 (probability 1) or constant across sources."""


@dataclass
class EvalReport:
    metric: str
    value: float | dict
    breakdown: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        # numpy scalars -> Python, so JSON and CSV output is plain
        self.breakdown = [b.item() if isinstance(b, np.generic) else b for b in self.breakdown]
        if isinstance(self.value, np.generic):
            self.value = self.value.item()
        vals = self.value.values() if isinstance(self.value, dict) else [self.value]
        if not all(math.isfinite(float(v)) for v in vals):
            raise ValueError(f"non-finite value in report {self.metric}")

    def to_dict(self) -> dict:
        return {"metric": self.metric, "value": self.value, "breakdown": list(self.breakdown),
                "config": self.config}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(d["metric"], d["value"], list(d["breakdown"]), dict(d["config"]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["# config", json.dumps(self.config, sort_keys=True)])
        w.writerow(["metric", "instance", "value"])
        if isinstance(self.value, dict):
            for key, v in sorted(self.value.items()):
                w.writerow([self.metric, f"summary:{key}", repr(float(v))])
        else:
            w.writerow([self.metric, "summary", repr(float(self.value))])
        for i, b in enumerate(self.breakdown):
            w.writerow([self.metric, i, repr(float(b)) if isinstance(b, float) else b])
        return buf.getvalue()


def average_error(s: Sequence[int], target: int, g: Graph) -> float:
    """Mean hop distance from each stage's estimate to ``target``."""
    dist = bfs_distances(g, target)
    d = dist[list(s)]
    if (d < 0).any():
        raise ValueError("estimate unreachable from target")
    return float(d.mean())


def first_detected_time(s: Sequence[int], target: int) -> int | None:
    """Zero-based first stage whose estimate equals ``target``; ``None`` if never."""
    for i, v in enumerate(s):
        if v == target:
            return i
    return None


def _bias(approx: float, exact: float) -> float:
    if exact == 0.0:
        raise DegenerateNormalizationError("reference log-probability is 0; relative bias undefined")
    return abs((approx - exact) / exact) * 100.0


def bias_approx(approx_avg_logp, exact_avg_logp):
    """Relative log-space error in percent; works elementwise on arrays."""
    a = np.asarray(approx_avg_logp, dtype=float)
    e = np.asarray(exact_avg_logp, dtype=float)
    if np.any(e == 0.0):
        raise DegenerateNormalizationError("reference log-probability is 0; relative bias undefined")
    out = np.abs((a - e) / e) * 100.0
    return float(out) if out.ndim == 0 else out


def bias_gnn(predicted_logp, exact_logp):
    return bias_approx(predicted_logp, exact_logp)


def check_discriminative(exact_scores: np.ndarray, tol: float = 1e-9) -> None:
    """Guard against scoring against a constant likelihood (argmax is vacuous)."""
    s = np.asarray(exact_scores, dtype=float)
    if s.size > 1 and np.ptp(s) <= tol * max(1.0, np.abs(s).max()):
        raise DegenerateNormalizationError("reference likelihood is constant across sources")


def topk_accuracy(rankings: Sequence[Sequence[int]], ground_truths: Sequence[int], k: int) -> float:
    """Fraction of instances whose ground truth is among the first ``k`` of its ranking."""
    if len(rankings) == 0:
        raise ValueError("no instances")
    if len(rankings) != len(ground_truths):
        raise ValueError("rankings and ground truths differ in length")
    hits = sum(1 for r, t in zip(rankings, ground_truths) if t in list(r)[:k])
    return hits / len(rankings)
