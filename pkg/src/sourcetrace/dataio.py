"""Artifact files, cluster edge lists and dataset construction.

Every artifact is one canonical JSON document (sorted keys, compact
separators, trailing newline)::

    {"checksum": <sha256 of the canonical payload>, "config": {...},
     "format": "sourcetrace", "kind": "graph", "payload": {...}, "version": 1}

``.gz`` paths hold the same bytes gzip-compressed with a zeroed timestamp, so
both forms are byte-reproducible.
"""

from __future__ import annotations

import gzip
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .epidemic import EpidemicNetwork, GeneratorSpec, SiConfig, generate, random_source, simulate_si, substream
from .gnn import GnnConfig, GnnModel, LabeledGraph, PROVENANCES, annotate
from .graph import Graph, GraphError, build_graph
from .likelihood import DEFAULT_CAP, EnumerationCapError, LikelihoodConfig, Observation, SourceScores
from .metrics import EvalReport
from .tracing import TraceRun

log = logging.getLogger(__name__)

FORMAT = "sourcetrace"
VERSION = 1
DATA_ROOT_ENV = "SOURCETRACE_DATA"


class ArtifactError(ValueError):
    """A file could not be read back as the expected artifact."""

    def __init__(self, path, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)
        self.reason = reason


class ClusterParseError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


def data_root() -> Path:
    """Directory named by ``SOURCETRACE_DATA``, else ``./data``."""
    return Path(os.environ.get(DATA_ROOT_ENV, "data"))


def resolve_path(p: str | os.PathLike) -> Path:
    """Absolute or existing relative paths as given; otherwise under :func:`data_root`."""
    p = Path(p)
    if p.is_absolute() or p.exists():
        return p
    return data_root() / p


# ------------------------------------------------------------------ encoding


def _obs_to(obs: Observation) -> dict:
    return {"graph": _graph_to(obs.graph), "nodes": obs.nodes.tolist(),
            "contact_degree": np.asarray(obs.contact_degree).tolist(),
            "epidemic_degree": None if obs.epidemic_degree is None else np.asarray(obs.epidemic_degree).tolist()}


def _obs_from(d: dict) -> Observation:
    ed = d["epidemic_degree"]
    return Observation(_graph_from(d["graph"]), np.asarray(d["nodes"], dtype=np.int64),
                       np.asarray(d["contact_degree"], dtype=np.int64),
                       None if ed is None else np.asarray(ed, dtype=np.int64))


def _graph_to(g: Graph) -> dict:
    return {"n": g.n, "edges": g.edges().tolist()}


def _graph_from(d: dict) -> Graph:
    return build_graph(d["edges"], n=d["n"])


def _model_to(m: GnnModel) -> dict:
    return {"config": m.config.to_dict(), "meta": m.meta,
            "params": {k: {"shape": list(v.shape), "data": [float(x) for x in v.ravel()]}
                       for k, v in sorted(m.params.items())}}


def _model_from(d: dict) -> GnnModel:
    params = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in d["params"].items()}
    m = GnnModel(GnnConfig.from_dict(d["config"]), params, d["meta"])
    m.check()
    return m


def _labeled_to(lg: LabeledGraph) -> dict:
    return {"obs": _obs_to(lg.obs), "labels": [float(x) for x in lg.labels], "provenance": lg.provenance,
            "config": lg.config}


def _labeled_from(d: dict) -> LabeledGraph:
    return LabeledGraph(_obs_from(d["obs"]), np.asarray(d["labels"], dtype=np.float64), d["provenance"], d["config"])


_CODECS: dict[str, tuple[type, Any, Any]] = {
    "graph": (Graph, _graph_to, _graph_from),
    "epidemic": (EpidemicNetwork,
                 lambda e: {"base": _graph_to(e.base), "infected": list(e.infected), "infectors": list(e.infectors)},
                 lambda d: EpidemicNetwork(_graph_from(d["base"]), tuple(d["infected"]), tuple(d["infectors"]))),
    "trace-run": (TraceRun,
                  lambda r: {"strategy": r.strategy, "index_case": r.index_case, "traced": list(r.traced),
                             "estimates": list(r.estimates), "estimated_stages": list(r.estimated_stages),
                             "config": r.config},
                  lambda d: TraceRun(d["strategy"], d["index_case"], d["traced"], d["estimates"],
                                     d["estimated_stages"], d["config"])),
    "scores": (SourceScores,
               lambda s: {"nodes": s.nodes.tolist(), "scores": [float(x) for x in s.scores],
                          "estimator": s.estimator, "config": s.config},
               lambda d: SourceScores(np.asarray(d["nodes"], dtype=np.int64), np.asarray(d["scores"], dtype=np.float64),
                                      d["estimator"], d["config"])),
    "model": (GnnModel, _model_to, _model_from),
    "report": (EvalReport, lambda r: r.to_dict(), EvalReport.from_dict),
    "observation": (Observation, _obs_to, _obs_from),
    "labeled-graph": (LabeledGraph, _labeled_to, _labeled_from),
}


def kind_of(obj) -> str:
    if isinstance(obj, list):
        return "list"
    for k, (cls, _, _) in _CODECS.items():
        if isinstance(obj, cls):
            return k
    raise TypeError(f"no codec for {type(obj).__name__}")


def _canonical(x) -> str:
    return json.dumps(x, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _encode(obj) -> dict:
    kind = kind_of(obj)
    if kind == "list":
        return {"kind": "list", "items": [_encode(o) for o in obj]}
    return {"kind": kind, "data": _CODECS[kind][1](obj)}


def _decode(d: dict):
    if d["kind"] == "list":
        return [_decode(x) for x in d["items"]]
    return _CODECS[d["kind"]][2](d["data"])


def dumps(obj, config: dict | None = None) -> bytes:
    """Canonical bytes for an artifact (a record, or a list of records)."""
    payload = _encode(obj)
    doc = {"format": FORMAT, "version": VERSION, "kind": payload["kind"], "config": config or {},
           "checksum": hashlib.sha256(_canonical(payload).encode()).hexdigest(), "payload": payload}
    return (_canonical(doc) + "\n").encode()


def loads(raw: bytes, path: str = "<bytes>", expect: str | None = None):
    """Inverse of :func:`dumps`; returns ``(object, config)``."""
    try:
        doc = json.loads(raw.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ArtifactError(path, f"corrupt or truncated ({e.__class__.__name__})") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ArtifactError(path, "not a sourcetrace artifact")
    if doc.get("version") != VERSION:
        raise ArtifactError(path, f"version {doc.get('version')} unsupported (this build reads {VERSION})")
    payload = doc.get("payload")
    if hashlib.sha256(_canonical(payload).encode()).hexdigest() != doc.get("checksum"):
        raise ArtifactError(path, "checksum mismatch")
    if expect is not None and doc.get("kind") != expect:
        raise ArtifactError(path, f"holds {doc.get('kind')!r}, expected {expect!r}")
    try:
        return _decode(payload), doc.get("config", {})
    except (KeyError, TypeError, ValueError, GraphError) as e:
        raise ArtifactError(path, f"malformed payload: {e}") from None


def save(obj, path: str | os.PathLike, config: dict | None = None) -> Path:
    path = Path(path)
    raw = dumps(obj, config)
    if path.suffix == ".gz":
        raw = gzip.compress(raw, mtime=0)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(raw)
    return path


def load(path: str | os.PathLike, expect: str | None = None, with_config: bool = False):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise ArtifactError(path, "no such file") from None
    if path.suffix == ".gz":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError):
            raise ArtifactError(path, "corrupt gzip stream") from None
    obj, cfg = loads(raw, str(path), expect)
    return (obj, cfg) if with_config else obj


# ------------------------------------------------------------------ clusters


@dataclass
class ClusterRecord:
    """Confirmed cases and their contacts, as transcribed from a cluster diagram."""

    cases: list[str]
    edges: list[tuple[str, str]]
    order: dict[str, int] = field(default_factory=dict)
    source: str | None = None
    comments: list[str] = field(default_factory=list)

    def graph(self) -> tuple[Graph, list[str]]:
        """Graph on case indices (declaration order) plus the id list."""
        idx = {c: i for i, c in enumerate(self.cases)}
        return build_graph([(idx[a], idx[b]) for a, b in self.edges], n=len(self.cases)), list(self.cases)

    def epidemic(self) -> EpidemicNetwork:
        """All cases infected. Infection order from ``order`` lines when every case has
        one, else BFS from the source (or the first case)."""
        g, ids = self.graph()
        idx = {c: i for i, c in enumerate(ids)}
        if len(self.order) == len(ids):
            seq = sorted(ids, key=lambda c: (self.order[c], idx[c]))
            infected = [idx[c] for c in seq]
            seen: set[int] = set()
            infectors = []
            for v in infected:
                by = [u for u in g.adj[v] if u in seen]
                if seen and not by:
                    raise GraphError(f"case {ids[v]} has no earlier-ordered contact")
                infectors.append(min(by, key=lambda u: infected.index(u)) if by else -1)
                seen.add(v)
            return EpidemicNetwork(g, tuple(infected), tuple(infectors))
        root = idx[self.source] if self.source is not None else 0
        return EpidemicNetwork.fully_infected(g, root)


def parse_cluster(text: str) -> ClusterRecord:
    cases: list[str] = []
    declared: set[str] = set()
    edges: list[tuple[str, str]] = []
    edge_lines: list[int] = []
    order: dict[str, int] = {}
    order_lines: dict[str, int] = {}
    source = None
    comments = []
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            comments.append(line[1:].strip())
            continue
        tok = line.split()
        op = tok[0]
        if op == "case" and len(tok) == 2:
            if tok[1] in declared:
                raise ClusterParseError(no, f"case {tok[1]} declared twice")
            declared.add(tok[1])
            cases.append(tok[1])
        elif op == "edge" and len(tok) == 3:
            if tok[1] == tok[2]:
                raise ClusterParseError(no, f"self-contact on {tok[1]}")
            edges.append((tok[1], tok[2]))
            edge_lines.append(no)
        elif op == "order" and len(tok) == 3:
            try:
                order[tok[1]] = int(tok[2])
            except ValueError:
                raise ClusterParseError(no, f"order must be an integer, got {tok[2]!r}") from None
            order_lines[tok[1]] = no
        elif op == "source" and len(tok) == 2:
            if source is not None:
                raise ClusterParseError(no, "second source marker")
            source = tok[1]
            source_line = no
        else:
            raise ClusterParseError(no, f"cannot parse {line!r}")
    if not cases:
        raise ClusterParseError(0, "empty record: no cases declared")
    for (a, b), no in zip(edges, edge_lines):
        for c in (a, b):
            if c not in declared:
                raise ClusterParseError(no, f"edge references undeclared case {c}")
    for c, no in order_lines.items():
        if c not in declared:
            raise ClusterParseError(no, f"order for undeclared case {c}")
    if source is not None and source not in declared:
        raise ClusterParseError(source_line, f"source {source} is not a declared case")
    return ClusterRecord(cases, edges, order, source, comments)


def format_cluster(rec: ClusterRecord) -> str:
    out = [f"# {c}" for c in rec.comments]
    out += [f"case {c}" for c in rec.cases]
    out += [f"edge {a} {b}" for a, b in rec.edges]
    out += [f"order {c} {rec.order[c]}" for c in rec.cases if c in rec.order]
    if rec.source is not None:
        out.append(f"source {rec.source}")
    return "\n".join(out) + "\n"


def read_cluster(path: str | os.PathLike) -> ClusterRecord:
    return parse_cluster(Path(path).read_text(encoding="utf-8"))


def write_cluster(rec: ClusterRecord, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_cluster(rec), encoding="utf-8")
    return path


FIXTURES = ("temple-19", "wedding-23")


def load_fixture(name: str) -> ClusterRecord:
    """Bundled reconstructed clusters at published scale (not the original data)."""
    if name not in FIXTURES:
        raise ValueError(f"unknown fixture {name!r}; choose from {FIXTURES}")
    text = resources.files("sourcetrace").joinpath("fixtures", f"{name}.cluster").read_text(encoding="utf-8")
    return parse_cluster(text)


# ------------------------------------------------------------------ datasets


@dataclass(frozen=True)
class SplitSpec:
    """How to produce one split: ``count`` supports with ``sizes[0]..sizes[1]`` nodes.

    Each item grows an SI epidemic on a fresh ``family`` graph of roughly
    ``size / stop_fraction`` nodes until ``size`` nodes are infected; the
    support is the transmission tree (``tree``) or the infected subgraph.
    """

    count: int
    sizes: tuple[int, int]
    annotator: str = "approx-eq11"
    family: str = "random-tree"
    params: dict = field(default_factory=dict)
    k: int = 100
    d: int | None = None
    tree: bool = True
    stop_fraction: float = 0.2
    frontier_rule: str = "edge-uniform"
    universe: str = "observed-contacts"
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("split size must be positive")
        if not 1 <= self.sizes[0] <= self.sizes[1]:
            raise ValueError(f"bad size range {self.sizes}")
        if self.annotator not in PROVENANCES:
            raise ValueError(f"unknown annotator {self.annotator!r}")
        if self.annotator == "regular-tree-centrality" and (self.d is None or not self.tree):
            raise ValueError("regular-tree labels need d and tree supports")

    def to_dict(self) -> dict:
        return {"count": self.count, "sizes": list(self.sizes), "annotator": self.annotator,
                "family": self.family, "params": dict(self.params), "k": self.k, "d": self.d,
                "tree": self.tree, "stop_fraction": self.stop_fraction, "frontier_rule": self.frontier_rule,
                "universe": self.universe, "cap": self.cap}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        d = dict(d)
        d["sizes"] = tuple(d["sizes"])
        return cls(**d)


@dataclass(frozen=True)
class DatasetManifest:
    splits: dict
    seed: int = 0

    def to_dict(self) -> dict:
        return {"seed": self.seed, "splits": {k: v.to_dict() for k, v in self.splits.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls({k: SplitSpec.from_dict(v) for k, v in d["splits"].items()}, int(d.get("seed", 0)))


def table1_manifest(scale: float = 1.0, seed: int = 0) -> DatasetManifest:
    """Split counts and size ranges of the published protocol, optionally scaled down."""
    def c(x):
        return max(1, round(x * scale))
    return DatasetManifest({
        "pretrain": SplitSpec(c(500), (50, 1000), "approx-eq11"),
        "finetune": SplitSpec(c(250), (50, 50), "regular-tree-centrality", "random-regular-tree", {"degree": 3}, d=3),
        "test": SplitSpec(c(250), (50, 1000), "approx-eq11"),
    }, seed)


def _base_size(split: SplitSpec, size: int) -> int:
    n = max(size, math.ceil(size / split.stop_fraction))
    if split.family == "random-regular-tree":
        d = int(split.params.get("degree", 3))
        n += (-(n - 2)) % (d - 1)
    return n


def _one_item(split: SplitSpec, seed: int, name: str, i: int) -> LabeledGraph:
    rng = substream(seed, _split_key(name), i)
    size = int(rng.integers(split.sizes[0], split.sizes[1] + 1))
    cfg = LikelihoodConfig(split.universe)
    while True:
        gspec = GeneratorSpec(split.family, _base_size(split, size), split.params, int(rng.integers(2**31 - 1)))
        g = generate(gspec)
        src = random_source(g, int(rng.integers(2**31 - 1)))
        si = SiConfig(min(1.0, size / g.n), split.frontier_rule, int(rng.integers(2**31 - 1)))
        epi = simulate_si(g, src, si)
        obs = Observation.of_epidemic(epi, tree=split.tree)
        try:
            lg = annotate(obs, split.annotator, cfg, seed=int(rng.integers(2**31 - 1)), k=split.k, d=split.d,
                          cap=split.cap)
        except EnumerationCapError:
            smaller = max(1, int(size * 0.8))
            log.warning("split %s item %d: exact labels infeasible at %d nodes; resampling at %d",
                        name, i, size, smaller)
            size = smaller
            continue
        lg.config = {**lg.config, "generator": gspec.to_dict(), "si": si.to_dict(), "source": int(src),
                     "split": name, "item": i}
        return lg


def _split_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:4], "big")


def _item_task(args):
    return _one_item(*args)


def build_dataset(manifest: DatasetManifest, jobs: int = 1) -> dict[str, list[LabeledGraph]]:
    """Labelled supports per split; identical output for any ``jobs``."""
    out: dict[str, list[LabeledGraph]] = {}
    for name, split in manifest.splits.items():
        tasks = [(split, manifest.seed, name, i) for i in range(split.count)]
        if jobs > 1:
            with ProcessPoolExecutor(jobs) as ex:
                out[name] = list(ex.map(_item_task, tasks))
        else:
            out[name] = [_item_task(t) for t in tasks]
    return out
