import numpy as np
import pytest

from sourcetrace.epidemic import random_tree
from sourcetrace.graph import build_graph, path_graph, star_graph
from sourcetrace.likelihood import LikelihoodConfig, Observation, exact_mle
from sourcetrace.gnn import (
    GnnConfig,
    GnnModel,
    LabeledGraph,
    TrainConfig,
    TrainingDivergedError,
    annotate,
    boundary_distance_ratio,
    degree_ratio,
    forward,
    gnn_scores,
    gradients,
    infected_proportion,
    loss,
    node_features,
    predict_topk,
    prepare,
    train,
)

AGGREGATORS = ["mean", "sum", "max", "lstm"]


def five_node_star_with_contacts():
    """Infected star, center local id 2, leaves with 1, 2, 2, 3 uninfected contacts."""
    g = build_graph([(2, 0), (2, 1), (2, 3), (2, 4)])
    return Observation.of(g, contact_degree=[2, 3, 4, 3, 4])


def fixture_graph():
    g = build_graph([(0, 1), (1, 2), (1, 3), (3, 4), (0, 3)])
    return Observation.of(g, g.degree + np.array([1, 0, 2, 0, 1]))


def lively_model(agg, layers=3, hidden=5, seed=3):
    """Model with positive biases so most ReLUs are active."""
    m = GnnModel.init(GnnConfig(agg, layers=layers, hidden=hidden, seed=seed))
    rng = np.random.default_rng(1)
    for k in m.params:
        if k.startswith("b") or k.startswith("Lb"):
            m.params[k] = 0.2 + 0.1 * rng.standard_normal(m.params[k].shape)
    return m


# ------------------------------------------------------------------ features


def test_star_degree_ratio():
    assert np.allclose(degree_ratio(five_node_star_with_contacts()), [1 / 12, 1 / 8, 1 / 6, 1 / 8, 1 / 6])


def test_star_infected_proportion():
    assert np.allclose(infected_proportion(five_node_star_with_contacts()), [1 / 2, 1 / 3, 1, 1 / 3, 1 / 4])


def test_star_boundary_ratio_nearest_exit():
    got = boundary_distance_ratio(five_node_star_with_contacts(), "nearest-exit")
    assert np.allclose(got, [2 / 3, 2 / 3, 1, 2 / 3, 2 / 3])


def test_star_boundary_ratio_farthest_leaf():
    assert np.allclose(boundary_distance_ratio(star_graph(4)), [0.5, 1, 1, 1, 1])


def test_path_boundary_ratio():
    assert np.allclose(boundary_distance_ratio(path_graph(3)), [1, 0.5, 1])


def test_degree_ratio_edge_and_sum(rng):
    assert np.allclose(degree_ratio(path_graph(2)), [0.5, 0.5])
    for _ in range(10):
        t = random_tree(int(rng.integers(2, 30)), rng)
        assert degree_ratio(t).sum() == pytest.approx(1.0)


def test_infected_proportion_trivial():
    k4 = build_graph([(a, b) for a in range(4) for b in range(a + 1, 4)])
    assert np.allclose(infected_proportion(k4), 1)
    assert infected_proportion(path_graph(2))[0] == 1.0
    with pytest.raises(ValueError):
        infected_proportion(Observation.of(build_graph([(0, 1)], n=3)))


def test_feature_ranges(rng):
    for _ in range(20):
        t = random_tree(int(rng.integers(2, 40)), rng)
        obs = Observation.of(t, t.degree + rng.integers(0, 3, size=t.n))
        for mode in ("farthest-leaf", "nearest-exit"):
            x = node_features(obs, mode)
            assert x.shape == (t.n, 3)
            assert np.all((x > 0) & (x <= 1))
            assert x[:, 2].max() == 1.0


def test_single_node_features():
    x = node_features(Observation.of(build_graph([], n=1), [2]))
    assert x[0, 2] == 1.0


# ------------------------------------------------------------------- forward


def test_zero_parameters_give_head_bias():
    m = GnnModel.init(GnnConfig(layers=2, hidden=4))
    for k in m.params:
        m.params[k][:] = 0.0
    m.params["b_out"][:] = 1.75
    assert np.allclose(forward(m, fixture_graph()), 1.75)


@pytest.mark.parametrize("agg", AGGREGATORS)
def test_vertex_transitive_graph_gives_equal_predictions(agg):
    cycle = build_graph([(i, (i + 1) % 6) for i in range(6)])
    y = forward(lively_model(agg), Observation.of(cycle))
    assert np.allclose(y, y[0])


def _hand_forward(params, adj, x, layers):
    """Node-by-node evaluation with plain loops, mean aggregator."""
    h = [list(map(float, row)) for row in x]
    for l in range(layers):
        W, b = params[f"W{l}"], params[f"b{l}"]
        new = []
        for v in range(len(h)):
            nb = adj[v]
            agg = [sum(h[u][j] for u in nb) / len(nb) if nb else 0.0 for j in range(len(h[v]))]
            c = h[v] + agg
            new.append([max(0.0, sum(W[i][j] * c[j] for j in range(len(c))) + b[i]) for i in range(len(b))])
        h = new
    return [sum(params["w_out"][i] * h[v][i] for i in range(len(h[v]))) + params["b_out"][0] for v in range(len(h))]


def test_golden_forward_pinned_parameters():
    obs = fixture_graph()
    m = GnnModel.init(GnnConfig("mean", layers=2, hidden=3))
    pinned = {
        "W0": [[0.5, -0.2, 0.1, 0.3, 0.0, -0.4], [0.0, 0.6, -0.3, 0.2, 0.1, 0.5], [-0.1, 0.1, 0.4, -0.5, 0.3, 0.2]],
        "b0": [0.1, 0.0, 0.05],
        "W1": [[0.2, -0.1, 0.3, 0.1, 0.0, 0.2], [0.4, 0.1, -0.2, 0.0, 0.3, -0.1], [0.0, 0.5, 0.1, -0.3, 0.2, 0.1]],
        "b1": [0.0, 0.1, -0.05],
        "w_out": [1.0, -0.5, 0.25],
        "b_out": [0.3],
    }
    for k, v in pinned.items():
        m.params[k] = np.array(v, dtype=float)
    x = node_features(obs)
    want = _hand_forward(pinned, obs.graph.adj, x, 2)
    assert np.allclose(forward(m, obs), want, atol=1e-12)


@pytest.mark.parametrize("agg", ["mean", "sum", "max"])
def test_permutation_equivariance(agg, rng):
    t = random_tree(12, rng)
    perm = rng.permutation(12)
    relabelled = build_graph([(perm[a], perm[b]) for a, b in t.edges()], n=12)
    contacts = t.degree + rng.integers(0, 2, size=12)
    c2 = np.empty(12, dtype=np.int64)
    c2[perm] = contacts
    m = lively_model(agg)
    y1 = forward(m, Observation.of(t, contacts))
    y2 = forward(m, Observation.of(relabelled, c2))
    assert np.allclose(y2[perm], y1)


def test_feature_width_mismatch():
    m = GnnModel.init()
    with pytest.raises(ValueError):
        forward(m, fixture_graph(), feats=np.zeros((5, 4)))


# ------------------------------------------------------------ loss, gradients


def test_loss_examples(rng):
    assert loss([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert loss([3.0], [1.0]) == 4.0
    p, l = rng.standard_normal(7), rng.standard_normal(7)
    assert loss(p, l) == pytest.approx(sum((a - b) ** 2 for a, b in zip(p, l)))
    with pytest.raises(ValueError):
        loss([1.0], [1.0, 2.0])


def _extended_loss(model, obs, labels):
    """Loss evaluated in long double so the difference quotient is not swamped by rounding."""
    m = GnnModel(model.config, {k: v.astype(np.longdouble) for k, v in model.params.items()})
    gi = prepare(obs, model.config)
    gi.feats = gi.feats.astype(np.longdouble)
    return loss(forward(m, gi), labels.astype(np.longdouble))


@pytest.mark.parametrize("agg", AGGREGATORS)
def test_gradients_match_finite_differences(agg):
    m = lively_model(agg)
    obs = fixture_graph()
    labels = np.random.default_rng(2).standard_normal(5)
    _, grads = gradients(m, LabeledGraph(obs, labels, "exact-eq2"))
    h = 1e-5
    for k, v in m.params.items():
        for idx in np.ndindex(v.shape):
            old = v[idx]
            v[idx] = old + h
            lp = _extended_loss(m, obs, labels)
            v[idx] = old - h
            lm = _extended_loss(m, obs, labels)
            v[idx] = old
            fd = float((lp - lm) / (2 * h))
            an = grads[k][idx]
            scale = max(abs(fd), abs(an))
            if scale > 0:
                assert abs(fd - an) / scale < 1e-4, (k, idx, fd, an)


def test_zero_loss_zero_gradient():
    m = lively_model("mean")
    obs = fixture_graph()
    lg = LabeledGraph(obs, forward(m, obs), "exact-eq2")
    val, grads = gradients(m, lg)
    assert val == 0.0
    assert all(np.allclose(g, 0) for g in grads.values())


def test_head_gradient_is_least_squares_gradient():
    m = lively_model("sum", layers=1, hidden=4)
    obs = fixture_graph()
    labels = np.arange(5.0)
    from sourcetrace.gnn import _forward, prepare
    _, (_, hidden) = _forward(m, prepare(obs, m.config))
    resid = labels - hidden @ m.params["w_out"] - m.params["b_out"][0]
    _, grads = gradients(m, LabeledGraph(obs, labels, "exact-eq2"))
    assert np.allclose(grads["w_out"], -2 * hidden.T @ resid)
    assert np.allclose(grads["b_out"], -2 * resid.sum())


# ------------------------------------------------------------------ training


def test_overfit_single_graph():
    t = random_tree(15, np.random.default_rng(4))
    lg = annotate(Observation.of(t, t.degree + 1), "regular-tree-centrality", d=int(t.degree.max()) + 1)
    m = GnnModel.init(GnnConfig(hidden=16, seed=1))
    cfg = TrainConfig("finetune", epochs=600, lr=1e-2, seed=0)
    init_loss = loss(forward(m, lg.obs), lg.labels)
    trained, hist = train(m, [lg], cfg)
    assert hist.train_loss[-1] < 0.1 * init_loss


def test_zero_epochs_unchanged():
    m = GnnModel.init()
    lg = LabeledGraph(fixture_graph(), np.zeros(5), "approx-eq11")
    out, hist = train(m, [lg], TrainConfig(epochs=0))
    assert np.array_equal(out.flat(), m.flat())
    assert hist.train_loss == []


def test_training_deterministic():
    data = [LabeledGraph(fixture_graph(), np.arange(5.0) - 6, "approx-eq11"),
            LabeledGraph(Observation.of(path_graph(4)), np.array([-2.0, -1, -1, -2]), "approx-eq11")]
    cfg = TrainConfig(epochs=5, seed=9)
    a, ha = train(GnnModel.init(GnnConfig("lstm", seed=2)), data, cfg)
    b, hb = train(GnnModel.init(GnnConfig("lstm", seed=2)), data, cfg)
    assert np.array_equal(a.flat(), b.flat())
    assert ha.train_loss == hb.train_loss


def test_phase_provenance_checked():
    lg = LabeledGraph(fixture_graph(), np.zeros(5), "exact-eq2")
    with pytest.raises(ValueError):
        train(GnnModel.init(), [lg], TrainConfig("pretrain"))


def test_divergence_aborts():
    lg = LabeledGraph(fixture_graph(), np.full(5, 1e200), "exact-eq2")
    with pytest.raises(TrainingDivergedError, match="epoch 0"):
        train(GnnModel.init(), [lg], TrainConfig("finetune", epochs=2))


def test_lstm_shuffle_option_trains():
    lg = LabeledGraph(fixture_graph(), np.arange(5.0), "approx-eq11")
    m, hist = train(GnnModel.init(GnnConfig("lstm", lstm_shuffle=True)), [lg], TrainConfig(epochs=3))
    assert len(hist.train_loss) == 3


# ---------------------------------------------------------------- prediction


def test_topk_all_and_clamp():
    m = lively_model("mean")
    obs = fixture_graph()
    assert sorted(predict_topk(m, obs, 5)) == [0, 1, 2, 3, 4]
    assert predict_topk(m, obs, 50) == predict_topk(m, obs, 5)


def test_perfect_model_ranking_equals_exact_ranking():
    obs = fixture_graph()
    exact = exact_mle(obs, LikelihoodConfig("observed-contacts"))
    m = GnnModel.init(GnnConfig(layers=1, hidden=4))
    # linear read of a label-carrying feature column reproduces the labels
    feats = np.column_stack([exact.scores, np.zeros(5), np.zeros(5)])
    m.params["W0"][:] = 0.0
    m.params["W0"][0, 0] = 1.0
    m.params["b0"][:] = 100.0
    m.params["w_out"][:] = [1.0, 0, 0, 0]
    m.params["b_out"][:] = -100.0
    y = forward(m, obs, feats=feats)
    assert np.allclose(y, exact.scores)
    from sourcetrace.likelihood import SourceScores
    assert SourceScores(obs.nodes, y, "gnn").ranking() == exact.ranking()


def test_gnn_scores_and_annotations():
    t = random_tree(8, np.random.default_rng(0))
    obs = Observation.of(t, t.degree + 1)
    s = gnn_scores(GnnModel.init(), obs)
    assert s.estimator == "gnn" and s.scores.shape == (8,)
    a = annotate(obs, "approx-eq11", seed=1, k=10)
    e = annotate(obs, "exact-eq2")
    assert a.provenance == "approx-eq11" and e.provenance == "exact-eq2"
    assert np.all(np.abs(a.labels - e.labels) < 1.0)
    with pytest.raises(ValueError):
        annotate(obs, "regular-tree-centrality")
