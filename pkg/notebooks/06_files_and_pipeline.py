# %% [markdown]
# # Files, cluster records and pipelines
#
# Artifacts are canonical JSON with a version and checksum. Cluster records
# are hand-editable edge lists. The command line runs whole pipelines.

# %%
import json
import tempfile
from pathlib import Path

from sourcetrace.cli import main, run_manifest
from sourcetrace.dataio import load, load_fixture, format_cluster, save
from sourcetrace.likelihood import Observation, rsavr_scores

work = Path(tempfile.mkdtemp())

# %% [markdown]
# The bundled clusters are reconstructions at published scale, not real data.

# %%
rec = load_fixture("temple-19")
print("\n".join(format_cluster(rec).splitlines()[:8]))
epi = rec.epidemic()
s = rsavr_scores(Observation.of_epidemic(epi), k=50, seed=0)
print("top cases:", [rec.cases[v] for v in s.ranking()[:3]])

# %%
p = save(s, work / "scores.json", {"fixture": "temple-19"})
print(p.read_text()[:120], "...")
print(load(p, expect="scores").argmax())

# %% [markdown]
# A manifest chains stages; outputs are byte-identical across reruns.

# %%
manifest = {
    "seed": 1,
    "stages": [
        {"name": "graphs", "op": "generate", "config": {"family": "random-tree", "sizes": [50, 100], "count": 5}},
        {"name": "epi", "op": "spread", "inputs": ["graphs"], "config": {"stop_fraction": 0.3}},
        {"name": "trace", "op": "trace", "inputs": ["epi"], "config": {"strategy": "DFS"}},
        {"name": "eval", "op": "evaluate", "inputs": ["trace", "epi"]},
        {"name": "dot", "op": "export", "inputs": ["epi"]},
    ],
}
run_manifest(manifest, work / "a")
run_manifest(manifest, work / "b")
same = all((work / "a" / f).read_bytes() == (work / "b" / f).read_bytes() for f in ("graphs.json", "eval.csv"))
print("byte-identical:", same)
print((work / "a" / "eval.csv").read_text())

# %% [markdown]
# The same stages from the shell:

# %%
(work / "m.json").write_text(json.dumps(manifest))
print("exit", main(["run", "--manifest", str(work / "m.json"), "--out", str(work / "c"), "--check"]))
