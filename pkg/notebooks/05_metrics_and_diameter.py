# %% [markdown]
# # Metrics and the diameter study
#
# How quickly does tracing find the final estimate as networks get longer?

# %%
import numpy as np

from sourcetrace.epidemic import EpidemicNetwork, recent_attachment_tree, substream
from sourcetrace.graph import diameter
from sourcetrace.metrics import EvalReport, first_detected_time, topk_accuracy
from sourcetrace.tracing import make_estimator, run_trace

# %% [markdown]
# Trees where node i joins one of the ``window`` nodes before it: a small
# window gives long, path-like trees.

# %%
estimator = make_estimator("centrality")
rows = []
for window in (200, 20, 4, 2):
    times = {"BFS": [], "DFS": []}
    diams = []
    for j in range(6):
        t = recent_attachment_tree(200, window, substream(5, window, j))
        diams.append(diameter(t))
        epi = EpidemicNetwork.fully_infected(t, 0)
        ic = int(substream(5, j).integers(t.n))
        for s in times:
            run = run_trace(epi, ic, s, estimator)
            times[s].append(first_detected_time(run.estimates, run.final))
    rows.append((window, np.mean(diams), np.mean(times["BFS"]), np.mean(times["DFS"])))
    print(f"window {window:>3}: diameter {rows[-1][1]:5.1f}  BFS {rows[-1][2]:6.1f}  DFS {rows[-1][3]:6.1f}")

# %% [markdown]
# Reports carry their config and serialise to CSV.

# %%
report = EvalReport("first_detected_time", float(np.mean([r[2] for r in rows])), [r[2] for r in rows],
                    {"strategy": "BFS", "windows": [r[0] for r in rows]})
print(report.to_csv())
print("random ranker top-3 of 10:", topk_accuracy([np.random.default_rng(i).permutation(10) for i in range(2000)],
                                                  [0] * 2000, 3))
