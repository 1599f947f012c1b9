# %% [markdown]
# # Forward contact tracing
#
# Starting from an index case, tracing harvests the infected network one case
# at a time, breadth-first or depth-first, and re-estimates the source after
# every stage.

# %%
import numpy as np

from sourcetrace.epidemic import EpidemicNetwork, leaf_balanced_regular_tree
from sourcetrace.graph import build_graph
from sourcetrace.metrics import average_error, first_detected_time
from sourcetrace.tracing import classify_transitions, is_shortest_path_trajectory, make_estimator, run_trace

# %% [markdown]
# A ten-node tree with degree-3 internal nodes: center 5, internal 4, 9, 0.

# %%
edges = [(0, 1), (0, 2), (0, 3), (1, 4), (1, 5), (2, 6), (2, 7), (3, 8), (3, 9)]
labels = [5, 4, 9, 0, 8, 2, 1, 6, 7, 3]
g = build_graph([(labels[a], labels[b]) for a, b in edges])
epi = EpidemicNetwork.fully_infected(g, 5)
estimator = make_estimator("centrality")

for strategy in ("BFS", "DFS"):
    run = run_trace(epi, 8, strategy, estimator, tie_break="incumbent")
    print(strategy, "traced", run.traced)
    print("   estimates", run.estimates)
    print("   average error", average_error(run.estimates, run.final, g),
          "first detected", first_detected_time(run.estimates, run.final))

# %% [markdown]
# Transition counts: S1 keeps the estimate, S2 moves to a new node, S3 returns
# to a node estimated before.

# %%
run = run_trace(epi, 8, "DFS", estimator, tie_break="incumbent")
print(classify_transitions(run.estimates)[0])

# %% [markdown]
# On leaf-balanced regular trees a BFS trace moves the estimate along a
# shortest path toward the final center.

# %%
rng = np.random.default_rng(3)
ok = 0
for _ in range(20):
    t = leaf_balanced_regular_tree(3, 3, rng)
    e = EpidemicNetwork.fully_infected(t, 0)
    r = run_trace(e, int(rng.integers(t.n)), "BFS", estimator, tie_break="incumbent")
    ok += is_shortest_path_trajectory(r.estimates, e)
print(f"{ok}/20 shortest-path trajectories")
