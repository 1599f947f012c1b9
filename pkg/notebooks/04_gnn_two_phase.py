# %% [markdown]
# # Learning the likelihood with a graph network
#
# Pre-train on cheap sampled labels from irregular graphs, then fine-tune on
# exact labels from trees with degree-3 contacts.

# %%
import numpy as np

from sourcetrace.dataio import DatasetManifest, SplitSpec, build_dataset
from sourcetrace.gnn import GnnConfig, GnnModel, TrainConfig, forward, node_features, two_phase
from sourcetrace.metrics import bias_gnn

# %%
manifest = DatasetManifest({
    "pretrain": SplitSpec(30, (20, 40), "approx-eq11", "barabasi-albert", {"m": 2}, k=20),
    "finetune": SplitSpec(20, (30, 40), "regular-tree-centrality", "random-regular-tree", {"degree": 3}, d=3),
    "test": SplitSpec(10, (40, 40), "regular-tree-centrality", "random-regular-tree", {"degree": 3}, d=3),
}, seed=4)
data = build_dataset(manifest)
print({k: len(v) for k, v in data.items()})

# %% [markdown]
# Node features: degree ratio, infected proportion, boundary distance ratio.

# %%
print(np.round(node_features(data["test"][0].obs, "farthest-leaf")[:5], 3))

# %%
model = GnnModel.init(GnnConfig(aggregator="mean", layers=3, hidden=16, seed=4))
pre, fine, h1, h2 = two_phase(model, data["pretrain"], data["finetune"],
                              TrainConfig("pretrain", epochs=60, seed=4), TrainConfig("finetune", epochs=60, seed=4))
print("pretrain loss", round(h1.train_loss[0]), "->", round(h1.train_loss[-1]))
print("finetune loss", round(h2.train_loss[0]), "->", round(h2.train_loss[-1]))

# %%
for name, m in (("pre-trained", pre), ("fine-tuned", fine)):
    b = [np.mean(bias_gnn(forward(m, lg.inputs(m.config)), lg.labels)) for lg in data["test"]]
    print(f"{name:>12}: mean bias' {np.mean(b):.1f}%")
