# %% [markdown]
# # Contact graphs and SI spreading
#
# Generate a contact graph, grow an SI epidemic on it, and look at the
# infected subgraph and its transmission tree.

# %%
import numpy as np

from sourcetrace.epidemic import GeneratorSpec, SiConfig, generate, random_source, simulate_si
from sourcetrace.graph import bfs_tree, centroid, diameter

# %% [markdown]
# Every generator is deterministic in its seed; disconnected draws are retried.

# %%
spec = GeneratorSpec("barabasi-albert", 250, {"m": 2}, seed=7)
g = generate(spec)
print(g, "diameter", diameter(g), "max degree", g.degree.max())

# %% [markdown]
# Spread until 20% of the nodes are infected. Each step picks a boundary edge
# uniformly (``edge-uniform``), so well-connected susceptibles are hit sooner.

# %%
source = random_source(g, seed=7)
epi = simulate_si(g, source, SiConfig(stop_fraction=0.2, seed=7))
print("source", epi.source, "infected", epi.size)
print("first ten infections", epi.infected[:10])

# %% [markdown]
# The infected subgraph G_N can contain cycles; the transmission tree never does.

# %%
tree, nodes = epi.transmission_tree()
print("G_N edges", epi.induced.num_edges, "tree edges", tree.num_edges)
print("tree centroid (global ids)", [int(nodes[c]) for c in centroid(tree)])

# %%
t = bfs_tree(epi.induced, epi.local(epi.source))
depth = np.zeros(t.n, dtype=int)
for v in t.order[1:]:
    depth[v] = depth[t.parent[v]] + 1
print("hops from the source inside G_N:", np.bincount(depth))
