"""Command line harness: generate, spread, trace, estimate, train, evaluate, export, run.

Each subcommand is one pipeline stage. ``run --manifest`` chains stages from a
JSON file; standalone subcommands build the same stage from flags. Stage
outputs are list artifacts (see :mod:`sourcetrace.dataio`).

Seeds: a standalone subcommand uses ``--seed`` as its stage seed. In a
manifest, stage ``s`` uses ``config.seed`` when given, else an integer drawn
from ``substream(root_seed, hash(s))``. Item ``i`` of a stage draws from
``substream(stage_seed, i)``.

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import (
    FIXTURES,
    ArtifactError,
    ClusterParseError,
    DatasetManifest,
    _split_key,
    build_dataset,
    kind_of,
    load,
    load_fixture,
    read_cluster,
    resolve_path,
    save,
)
from .epidemic import EpidemicNetwork, GeneratorSpec, SiConfig, generate, random_source, simulate_si, substream
from .gnn import GnnConfig, GnnModel, TrainConfig, dataset_loss, gnn_scores, two_phase
from .graph import GraphError
from .likelihood import (
    DEFAULT_CAP,
    ESTIMATORS,
    EnumerationCapError,
    LikelihoodConfig,
    Observation,
    SourceScores,
    score,
)
from .metrics import (
    DegenerateNormalizationError,
    EvalReport,
    average_error,
    bias_approx,
    first_detected_time,
    topk_accuracy,
)
from .tracing import make_estimator, run_trace

log = logging.getLogger("sourcetrace")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class ManifestError(ValueError):
    """Invalid stage wiring or configuration, raised before anything runs."""


# Allowed config keys and defaults per stage op.
DEFAULTS: dict[str, dict] = {
    "generate": {"family": "random-tree", "size": 100, "sizes": None, "count": 1, "params": {}},
    "spread": {"stop_fraction": 0.2, "frontier_rule": "edge-uniform", "source": None},
    "trace": {"strategy": "BFS", "estimator": "centrality", "universe": "observed-contacts",
              "mode": "exact-boundary", "d": None, "k": 100, "rule": "auto", "every": 1,
              "tie_break": "lowest", "index_case": "random"},
    "estimate": {"estimator": "exact", "universe": "observed-contacts", "mode": "exact-boundary",
                 "d": None, "k": 100, "rule": "auto", "tree": False, "cap": DEFAULT_CAP},
    "train": {"dataset": None, "pretrain_split": "pretrain", "finetune_split": "finetune",
              "test_split": None, "gnn": {}, "pretrain": {}, "finetune": {}},
    "evaluate": {"metrics": None, "ks": [1, 3, 5, 10]},
    "export": {"format": "dot"},
}
# Input kinds each op accepts (first entry required, "model" optional).
INPUTS: dict[str, tuple[set, set]] = {
    "generate": (set(), set()),
    "spread": ({"graph"}, set()),
    "trace": ({"epidemic"}, {"model"}),
    "estimate": ({"epidemic", "graph"}, {"model"}),
    "train": (set(), set()),
    "evaluate": ({"trace-run", "scores"}, {"epidemic", "scores"}),
    "export": ({"epidemic", "graph"}, {"scores"}),
}
# Kind of the records each op emits.
EMITS = {"generate": "graph", "spread": "epidemic", "trace": "trace-run", "estimate": "scores",
         "train": "model", "evaluate": "report", "export": "export"}


def _int_seed(seed: int, *keys: int) -> int:
    return int(substream(seed, *keys).integers(2**31 - 1))


def resolve_config(op: str, cfg: dict) -> dict:
    if op not in DEFAULTS:
        raise ManifestError(f"unknown op {op!r}; choose from {sorted(DEFAULTS)}")
    extra = set(cfg) - set(DEFAULTS[op]) - {"seed"}
    if extra:
        raise ManifestError(f"{op}: unknown config keys {sorted(extra)}")
    out = {**DEFAULTS[op], **cfg}
    _check_config(op, out)
    return out


def _lik(cfg: dict) -> LikelihoodConfig:
    return LikelihoodConfig(cfg["universe"], cfg["mode"], cfg["d"])


def _check_config(op: str, c: dict) -> None:
    """Construct every typed config once so bad values fail before execution."""
    try:
        if op == "generate":
            GeneratorSpec(c["family"], int(c["size"]), c["params"])
            if c["sizes"] is not None and not 1 <= c["sizes"][0] <= c["sizes"][1]:
                raise ValueError(f"bad size range {c['sizes']}")
            if c["count"] < 1:
                raise ValueError("count must be positive")
        elif op == "spread":
            SiConfig(c["stop_fraction"], c["frontier_rule"])
        elif op in ("trace", "estimate"):
            _lik(c)
            names = ESTIMATORS + ("gnn",)
            if c["estimator"] not in names:
                raise ValueError(f"unknown estimator {c['estimator']!r}; choose from {names}")
            if op == "trace":
                if c["strategy"] not in ("BFS", "DFS"):
                    raise ValueError(f"unknown strategy {c['strategy']!r}")
                if c["tie_break"] not in ("lowest", "incumbent"):
                    raise ValueError(f"unknown tie break {c['tie_break']!r}")
                if c["every"] < 1:
                    raise ValueError("every must be at least 1")
        elif op == "train":
            if c["dataset"] is None:
                raise ValueError("train needs a dataset manifest")
            m = DatasetManifest.from_dict(c["dataset"])
            for s in (c["pretrain_split"], c["finetune_split"], c["test_split"]):
                if s is not None and s not in m.splits:
                    raise ValueError(f"dataset has no split {s!r}")
            GnnConfig.from_dict(c["gnn"]) if c["gnn"] else None
            TrainConfig(**{"phase": "pretrain", **c["pretrain"]})
            TrainConfig(**{"phase": "finetune", **c["finetune"]})
        elif op == "export":
            if c["format"] not in ("dot", "json"):
                raise ValueError(f"unknown export format {c['format']!r}")
        elif op == "evaluate":
            known = {"average_error", "first_detected_time", "topk", "bias"}
            if c["metrics"] is not None and set(c["metrics"]) - known:
                raise ValueError(f"unknown metrics {sorted(set(c['metrics']) - known)}")
    except (TypeError, KeyError, ValueError) as e:
        if isinstance(e, ManifestError):
            raise
        raise ManifestError(f"{op}: {e}") from None


# ------------------------------------------------------------------ stage ops


def _map(fn, tasks: list, jobs: int) -> list:
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(jobs) as ex:
            return list(ex.map(fn, tasks))
    return [fn(t) for t in tasks]


def _generate_one(task):
    c, seed, i = task
    rng = substream(seed, i)
    size = int(rng.integers(c["sizes"][0], c["sizes"][1] + 1)) if c["sizes"] else int(c["size"])
    return generate(GeneratorSpec(c["family"], size, c["params"], _int_seed(seed, i, 1)))


def _spread_one(task):
    c, seed, i, g = task
    src = c["source"] if c["source"] is not None else random_source(g, _int_seed(seed, i, 0))
    return simulate_si(g, int(src), SiConfig(c["stop_fraction"], c["frontier_rule"], _int_seed(seed, i, 1)))


def _index_case(epi: EpidemicNetwork, how, seed: int) -> int:
    if how == "random":
        return int(epi.infected[int(substream(seed, 2).integers(epi.size))])
    if how == "last":
        return int(epi.infected[-1])
    if how == "source":
        return int(epi.infected[0])
    return int(how)


def _trace_one(task):
    c, seed, i, epi, model = task
    s = _int_seed(seed, i)
    est = make_estimator(c["estimator"], _lik(c), s, c["k"], c["rule"], model)
    run = run_trace(epi, _index_case(epi, c["index_case"], s), c["strategy"], est, c["every"], c["tie_break"])
    run.config = {**run.config, "item": i, "stage_seed": seed}
    return run


def _observation(item, tree: bool) -> Observation:
    if isinstance(item, EpidemicNetwork):
        return Observation.of_epidemic(item, tree=tree)
    return Observation.of(item)


def _estimate_one(task):
    c, seed, i, item, model = task
    obs = _observation(item, c["tree"])
    if c["estimator"] == "gnn":
        if model is None:
            raise ManifestError("gnn estimator needs a model input")
        return gnn_scores(model, obs)
    return score(obs, c["estimator"], _lik(c), seed=_int_seed(seed, i), k=c["k"], cap=c["cap"], rule=c["rule"])


def op_generate(c, seed, inputs, jobs):
    return _map(_generate_one, [(c, seed, i) for i in range(c["count"])], jobs)


def op_spread(c, seed, inputs, jobs):
    return _map(_spread_one, [(c, seed, i, g) for i, g in enumerate(inputs["graph"])], jobs)


def _model(inputs) -> GnnModel | None:
    models = inputs.get("model", [])
    return models[-1] if models else None


def op_trace(c, seed, inputs, jobs):
    model = _model(inputs)
    if c["estimator"] == "gnn" and model is None:
        raise ManifestError("gnn estimator needs a model input")
    return _map(_trace_one, [(c, seed, i, e, model) for i, e in enumerate(inputs["epidemic"])], jobs)


def op_estimate(c, seed, inputs, jobs):
    items = inputs.get("epidemic") or inputs.get("graph", [])
    return _map(_estimate_one, [(c, seed, i, x, _model(inputs)) for i, x in enumerate(items)], jobs)


def op_train(c, seed, inputs, jobs):
    manifest = DatasetManifest.from_dict(c["dataset"])
    data = build_dataset(manifest, jobs)
    gcfg = GnnConfig.from_dict({**c["gnn"], "seed": c["gnn"].get("seed", seed)}) if c["gnn"] else GnnConfig(seed=seed)
    pre_cfg = TrainConfig(**{"phase": "pretrain", "seed": seed, **c["pretrain"]})
    fine_cfg = TrainConfig(**{"phase": "finetune", "seed": seed, **c["finetune"]})
    pre, fine, h1, h2 = two_phase(GnnModel.init(gcfg), data[c["pretrain_split"]], data[c["finetune_split"]],
                                  pre_cfg, fine_cfg)
    if c["test_split"]:
        test = data[c["test_split"]]
        for m in (pre, fine):
            m.meta["test_loss"] = dataset_loss(m, test)
    return [pre, fine]


def _pair(inputs, kind, n):
    items = inputs.get(kind, [])
    if len(items) != n:
        raise ManifestError(f"evaluate: {n} records but {len(items)} {kind} records")
    return items


def op_evaluate(c, seed, inputs, jobs):
    reports = []
    metrics = c["metrics"]
    if "trace-run" in inputs:
        runs = inputs["trace-run"]
        epis = _pair(inputs, "epidemic", len(runs))
        metrics = metrics or ["average_error", "first_detected_time"]
        cfg = {"strategy": sorted({r.strategy for r in runs}), "runs": len(runs)}
        if "average_error" in metrics:
            errs = [average_error([e.local(v) for v in r.estimates], e.local(r.final), e.induced)
                    for r, e in zip(runs, epis)]
            reports.append(EvalReport("average_error", float(np.mean(errs)), errs, cfg))
        if "first_detected_time" in metrics:
            times = [first_detected_time(r.estimates, r.final) for r in runs]
            reports.append(EvalReport("first_detected_time", float(np.mean(times)), times, cfg))
    if "scores" in inputs:
        groups = inputs["scores"]
        metrics = metrics or ["topk"]
        if "topk" in metrics:
            epis = _pair(inputs, "epidemic", len(groups))
            rankings = [s.ranking() for s in groups]
            truths = [e.source for e in epis]
            acc = {f"top{k}": topk_accuracy(rankings, truths, k) for k in c["ks"]}
            hits = [int(t in r[: c["ks"][0]]) for r, t in zip(rankings, truths)]
            reports.append(EvalReport("topk_accuracy", acc, hits, {"estimator": groups[0].estimator}))
        if "bias" in metrics:
            ref = inputs.get("reference")
            if not ref or len(ref) != len(groups):
                raise ManifestError("bias needs a second scores input of equal length as reference")
            per = [float(np.mean(bias_approx(a.scores, b.scores))) for a, b in zip(groups, ref)]
            reports.append(EvalReport("bias", float(np.mean(per)), per,
                                      {"estimator": groups[0].estimator, "reference": ref[0].estimator}))
    if not reports:
        raise ManifestError("evaluate: no metric applies to the given inputs")
    return reports


def to_dot(item, scores: SourceScores | None = None, name: str = "G") -> str:
    """DOT text; infected nodes carry their infection rank, scored nodes their score."""
    g = item.base if isinstance(item, EpidemicNetwork) else item
    attrs: dict[int, list[str]] = {v: [] for v in range(g.n)}
    if isinstance(item, EpidemicNetwork):
        for rank, v in enumerate(item.infected):
            attrs[v].append(f"infected={rank}")
        attrs[item.source].append("source=true")
    if scores is not None:
        for v, s in zip(scores.nodes.tolist(), scores.scores.tolist()):
            attrs[v].append(f'score="{s!r}"')
        for v in scores.argmax():
            attrs[int(v)].append("estimate=true")
    lines = [f"graph {name} {{"]
    lines += [f"  {v} [{', '.join(a)}];" if a else f"  {v};" for v, a in attrs.items()]
    lines += [f"  {u} -- {v};" for u, v in g.edges().tolist()]
    return "\n".join(lines) + "\n}\n"


def to_json_export(item, scores: SourceScores | None = None) -> str:
    g = item.base if isinstance(item, EpidemicNetwork) else item
    d = {"n": g.n, "edges": g.edges().tolist()}
    if isinstance(item, EpidemicNetwork):
        d["infected"] = list(item.infected)
    if scores is not None:
        d["scores"] = dict(zip(map(str, scores.nodes.tolist()), scores.scores.tolist()))
        d["estimate"] = [int(v) for v in scores.argmax()]
    return json.dumps(d, sort_keys=True, indent=1) + "\n"


def op_export(c, seed, inputs, jobs):
    items = inputs.get("epidemic") or inputs.get("graph", [])
    scores = inputs.get("scores") or [None] * len(items)
    if len(scores) != len(items):
        raise ManifestError("export: scores and graphs differ in count")
    fmt = to_dot if c["format"] == "dot" else lambda x, s, name=None: to_json_export(x, s)
    return [fmt(x, s, f"G{i}") for i, (x, s) in enumerate(zip(items, scores))]


OPS = {"generate": op_generate, "spread": op_spread, "trace": op_trace, "estimate": op_estimate,
       "train": op_train, "evaluate": op_evaluate, "export": op_export}


def write_outputs(op: str, records: list, out: Path, config: dict) -> list[Path]:
    """Artifacts for one stage. Exports become one text file per item under ``out``."""
    if op == "export":
        ext = "dot" if config["format"] == "dot" else "json"
        if len(records) == 1 and out.suffix == f".{ext}":
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(records[0])
            return [out]
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for i, text in enumerate(records):
            p = out / f"item_{i:04d}.{ext}"
            p.write_text(text)
            paths.append(p)
        return paths
    paths = [save(records, out, config)]
    if op == "evaluate":
        csv_path = out.with_suffix(".csv") if out.suffix != ".gz" else out.with_name(out.stem + ".csv")
        csv_path.write_text("".join(r.to_csv() for r in records))
        paths.append(csv_path)
    return paths


# ------------------------------------------------------------------ inputs


def read_input(ref: str) -> tuple[str, list]:
    """(kind, records) from an artifact path, a ``.cluster`` file or ``fixture:<name>``."""
    if ref.startswith("fixture:"):
        return "epidemic", [load_fixture(ref.split(":", 1)[1]).epidemic()]
    path = resolve_path(ref)
    if path.suffix == ".cluster":
        return "epidemic", [read_cluster(path).epidemic()]
    obj = load(path)
    recs = obj if isinstance(obj, list) else [obj]
    if not recs:
        raise ArtifactError(path, "empty artifact")
    return kind_of(recs[0]), recs


def group_inputs(op: str, loaded: list[tuple[str, list]]) -> dict[str, list]:
    required, optional = INPUTS[op]
    groups: dict[str, list] = {}
    for kind, recs in loaded:
        if kind not in required | optional:
            raise ManifestError(f"{op} cannot take {kind} input")
        if kind in groups:
            if op == "evaluate" and kind == "scores":
                groups["reference"] = recs
                continue
            raise ManifestError(f"{op}: more than one {kind} input")
        groups[kind] = recs
    if required and not required & set(groups):
        raise ManifestError(f"{op} needs one of {sorted(required)} as input")
    return groups


# ------------------------------------------------------------------ manifests


def validate_manifest(m: dict) -> list[dict]:
    """Resolved stage list; raises :class:`ManifestError` on any wiring or config problem."""
    if not isinstance(m, dict) or "stages" not in m:
        raise ManifestError("manifest needs a 'stages' list")
    extra = set(m) - {"seed", "out", "stages"}
    if extra:
        raise ManifestError(f"unknown manifest keys {sorted(extra)}")
    produced: dict[str, str] = {}
    stages = []
    for j, st in enumerate(m["stages"]):
        if set(st) - {"name", "op", "inputs", "config"} or "name" not in st or "op" not in st:
            raise ManifestError(f"stage {j}: needs name and op, allows inputs and config")
        name, op = st["name"], st["op"]
        if name in produced:
            raise ManifestError(f"stage name {name!r} used twice")
        cfg = resolve_config(op, st.get("config", {}))
        kinds = []
        for ref in st.get("inputs", []):
            if ref in produced:
                kinds.append(produced[ref])
            elif ref.startswith("fixture:") or resolve_path(ref).exists():
                if ref.startswith("fixture:") and ref.split(":", 1)[1] not in FIXTURES:
                    raise ManifestError(f"stage {name}: unknown fixture {ref}")
                kinds.append(None)
            else:
                raise ManifestError(f"stage {name}: input {ref!r} is neither an earlier stage nor a file")
        required, optional = INPUTS[op]
        for k in kinds:
            if k is not None and k not in required | optional:
                raise ManifestError(f"stage {name}: {op} cannot take {k} input")
        if required and kinds and None not in kinds and not required & set(kinds):
            raise ManifestError(f"stage {name}: {op} needs one of {sorted(required)}")
        if required and not kinds:
            raise ManifestError(f"stage {name}: {op} needs inputs")
        produced[name] = EMITS[op]
        stages.append({"name": name, "op": op, "inputs": list(st.get("inputs", [])), "config": cfg})
    return stages


def run_manifest(m: dict, out: Path | None = None, jobs: int = 1) -> dict[str, list[Path]]:
    stages = validate_manifest(m)
    root = int(m.get("seed", 0))
    out = Path(out or m.get("out", "runs"))
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.resolved.json").write_text(
        json.dumps({"seed": root, "stages": stages}, sort_keys=True, indent=1) + "\n")
    results: dict[str, tuple[str, list]] = {}
    written: dict[str, list[Path]] = {}
    for st in stages:
        name, op, cfg = st["name"], st["op"], st["config"]
        seed = int(cfg["seed"]) if "seed" in cfg else _int_seed(root, _split_key(name))
        loaded = [results[r] if r in results else read_input(r) for r in st["inputs"]]
        records = OPS[op](cfg, seed, group_inputs(op, loaded), jobs)
        results[name] = (EMITS[op], records)
        dest = out / name if op == "export" else out / f"{name}.json"
        written[name] = write_outputs(op, records, dest, {"stage": name, "op": op, "seed": seed, **cfg})
        log.info("stage %s (%s): %d records -> %s", name, op, len(records), dest)
    return written


# ------------------------------------------------------------------ argparse


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _lik_flags(p):
    p.add_argument("--estimator", choices=ESTIMATORS + ("gnn",))
    p.add_argument("--universe", choices=("tracing-network", "observed-contacts", "epidemic-network", "constant-d"))
    p.add_argument("--mode", choices=("exact-boundary", "literal-eq3"), help="probability denominator")
    p.add_argument("--d", type=int, help="degree for the constant-d universe")
    p.add_argument("--k", type=int, help="samples per candidate source")
    p.add_argument("--rule", choices=("auto", "uniform", "edge-uniform"), help="RSAvr sampling rule")
    p.add_argument("--model", action="append", default=[], help="GNN model artifact (gnn estimator)")


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="sourcetrace", description="Epidemic source estimation over contact-tracing networks.")
    top.add_argument("--version", action="version", version=__version__)
    top.add_argument("-v", "--verbose", action="store_true")
    sub = top.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, inputs=True):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--jobs", type=int, default=1, help="worker processes over independent items")
        p.add_argument("--out", help="output artifact path")
        p.add_argument("--config", help="JSON file of stage config (flags override it)")
        if inputs:
            p.add_argument("--in", dest="inputs", action="append", default=[],
                           help="input artifact, .cluster file or fixture:<name> (repeatable)")

    p = sub.add_parser("generate", help="emit contact graphs from a generator spec")
    common(p, inputs=False)
    p.add_argument("--spec", help="GeneratorSpec JSON file (alias of --config)")
    p.add_argument("--family")
    p.add_argument("--size", type=int)
    p.add_argument("--sizes", type=int, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--count", type=int)
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("spread", help="run SI spreading over graphs")
    common(p)
    p.add_argument("--stop-fraction", type=float)
    p.add_argument("--frontier-rule", choices=("node-uniform", "edge-uniform"))
    p.add_argument("--source", type=int)

    p = sub.add_parser("trace", help="forward contact tracing with a per-stage estimator")
    common(p)
    p.add_argument("--strategy", choices=("BFS", "DFS"))
    p.add_argument("--every", type=int)
    p.add_argument("--tie-break", choices=("lowest", "incumbent"))
    p.add_argument("--index-case", help="node id, 'random', 'last' or 'source'")
    _lik_flags(p)

    p = sub.add_parser("estimate", help="score every node of an epidemic network or graph")
    common(p)
    p.add_argument("--tree", action="store_true", default=None, help="score the transmission tree")
    p.add_argument("--cap", type=int, help="enumeration cap")
    p.add_argument("--top", type=int, default=5, help="ranked nodes to print")
    _lik_flags(p)

    p = sub.add_parser("train", help="two-phase GNN training from a dataset manifest")
    common(p, inputs=False)
    p.add_argument("--manifest", required=True, help="DatasetManifest JSON")
    p.add_argument("--aggregator", choices=("mean", "sum", "max", "lstm"))
    p.add_argument("--layers", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--epochs", type=int, nargs=2, metavar=("PRE", "FINE"))
    p.add_argument("--lr", type=float, nargs=2, metavar=("PRE", "FINE"))
    p.add_argument("--test-split")

    p = sub.add_parser("evaluate", help="metrics over trace runs or score sets (JSON + CSV)")
    common(p)
    p.add_argument("--metric", action="append", dest="metrics",
                   choices=("average_error", "first_detected_time", "topk", "bias"))
    p.add_argument("--ks", type=int, nargs="+")

    p = sub.add_parser("export", help="DOT or JSON graph export with estimate annotations")
    common(p)
    p.add_argument("--format", choices=("dot", "json"))

    p = sub.add_parser("run", help="execute a pipeline manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="output directory (overrides the manifest)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--check", action="store_true", help="validate only")
    return top


def _parse_value(s: str):
    try:
        return json.loads(s)
    except json.JSONDecodeError:
        return s


_FLAG_KEYS = {
    "generate": ("family", "size", "sizes", "count"),
    "spread": ("stop_fraction", "frontier_rule", "source"),
    "trace": ("strategy", "every", "tie_break", "estimator", "universe", "mode", "d", "k", "rule"),
    "estimate": ("estimator", "universe", "mode", "d", "k", "rule", "tree", "cap"),
    "evaluate": ("metrics", "ks"),
    "export": ("format",),
}


def _stage_config(args) -> dict:
    cfg: dict = {}
    src = getattr(args, "spec", None) or args.config
    if src:
        cfg.update(json.loads(resolve_path(src).read_text()))
    for key in _FLAG_KEYS.get(args.command, ()):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = list(val) if isinstance(val, (list, tuple)) else val
    if args.command == "generate" and args.param:
        params = dict(cfg.get("params", {}))
        for kv in args.param:
            k, _, v = kv.partition("=")
            params[k] = _parse_value(v)
        cfg["params"] = params
    if args.command == "trace" and args.index_case is not None:
        ic = args.index_case
        cfg["index_case"] = ic if ic in ("random", "last", "source") else int(ic)
    if args.command == "train":
        cfg["dataset"] = json.loads(resolve_path(args.manifest).read_text())
        g = dict(cfg.get("gnn", {}))
        for key in ("aggregator", "layers", "hidden"):
            if getattr(args, key) is not None:
                g[key] = getattr(args, key)
        cfg["gnn"] = g
        for i, phase in enumerate(("pretrain", "finetune")):
            ph = dict(cfg.get(phase, {}))
            if args.epochs:
                ph["epochs"] = args.epochs[i]
            if args.lr:
                ph["lr"] = args.lr[i]
            cfg[phase] = ph
        if args.test_split:
            cfg["test_split"] = args.test_split
    return cfg


def _summary(op: str, records: list, args) -> None:
    if op == "estimate":
        for i, s in enumerate(records):
            top = s.ranking()[: args.top]
            print(f"item {i}: estimate {[int(v) for v in s.argmax()]} top {top}")
    elif op == "evaluate":
        for r in records:
            print(f"{r.metric}: {r.value}")
    elif op == "trace":
        for i, r in enumerate(records):
            print(f"item {i}: {r.strategy} from {r.index_case}, final estimate {r.final}")


def _run_command(args) -> int:
    if args.command == "run":
        m = json.loads(resolve_path(args.manifest).read_text())
        if args.check:
            validate_manifest(m)
            print("manifest ok")
            return EXIT_OK
        written = run_manifest(m, Path(args.out) if args.out else None, args.jobs)
        for name, paths in written.items():
            print(f"{name}: {', '.join(map(str, paths))}")
        return EXIT_OK
    op = args.command
    cfg = resolve_config(op, _stage_config(args))
    refs = list(getattr(args, "inputs", [])) + list(getattr(args, "model", []) or [])
    loaded = [read_input(r) for r in refs]
    records = OPS[op](cfg, args.seed, group_inputs(op, loaded), args.jobs)
    default = f"{op}.json"
    if op == "export":
        default = f"export.{cfg['format']}" if len(records) == 1 else "export"
    paths = write_outputs(op, records, Path(args.out or default), {"op": op, "seed": args.seed, **cfg})
    _summary(op, records, args)
    print(f"wrote {', '.join(map(str, paths))}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run_command(args)
    except (ArithmeticError, EnumerationCapError, DegenerateNormalizationError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ArtifactError, ClusterParseError, GraphError, ManifestError, OSError,
            json.JSONDecodeError, ValueError, KeyError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
