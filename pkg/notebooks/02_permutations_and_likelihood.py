# %% [markdown]
# # Permitted permutations and source likelihoods
#
# A permitted permutation from ``v`` is a feasible infection order: each node
# touches an earlier one. Scoring a candidate source means summing the
# probabilities of those orders.

# %%
import math

import numpy as np

from sourcetrace.graph import build_graph, centroid, star_graph
from sourcetrace.likelihood import (
    LikelihoodConfig,
    Observation,
    count_permutations_tree,
    enumerate_with_probabilities,
    exact_mle,
    rsavr_scores,
    bfsran_scores,
    score,
)

# %% [markdown]
# ## Counting on a tree
# |Omega(v)| = n! / prod of subtree sizes rooted at v, for every v in one pass.

# %%
tree = build_graph([(0, 1), (1, 2), (1, 3), (3, 4), (3, 5), (5, 6)])
counts = count_permutations_tree(tree, exact=True)
print("counts", counts.exact, "argmax", int(np.argmax(counts.log)), "centroid", centroid(tree))

# %% [markdown]
# ## Enumerating with probabilities
# With degrees measured in the support itself and exact boundary counts, the
# orders from any root form a probability distribution.

# %%
g = build_graph([(0, 1), (1, 2), (2, 0), (2, 3)])
cfg = LikelihoodConfig("tracing-network")
perms, logps = enumerate_with_probabilities(g, 3, cfg)
for p, lp in zip(perms, logps):
    print(p, round(math.exp(lp), 4))
print("sum", math.exp(np.logaddexp.reduce(logps)))

# %% [markdown]
# ## Observed contacts
# In tracing, each case also has contacts that were never infected. Those
# enlarge the boundary and lower the probability of orders that pass through
# well-connected nodes early.

# %%
star = Observation.of(star_graph(4), contact_degree=[6, 1, 1, 3, 3])
exact = exact_mle(star, LikelihoodConfig("observed-contacts"))
print("exact log-likelihoods", np.round(exact.scores, 3), "argmax", exact.argmax())

# %% [markdown]
# ## Estimators that scale
# RSAvr averages sampled orders; BFSRan uses one random BFS order; both
# multiply by the permutation count.

# %%
cfg = LikelihoodConfig("observed-contacts")
for s in (exact, rsavr_scores(star, k=200, cfg=cfg, seed=1), bfsran_scores(star, cfg, seed=1),
          score(star, "degmax", cfg)):
    print(f"{s.estimator:>7}", np.round(s.scores, 3), "ranking", s.ranking())
