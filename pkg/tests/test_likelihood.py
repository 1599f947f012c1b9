import itertools
import math

import numpy as np
import pytest
from scipy.special import logsumexp

from sourcetrace.epidemic import random_regular_tree, random_tree
from sourcetrace.graph import GraphError, build_graph, centroid, path_graph, star_graph
from sourcetrace.likelihood import (
    EnumerationCapError,
    FormulaDegenerateError,
    LikelihoodConfig,
    Observation,
    SourceScores,
    _step_denominator,
    approx_bfsran,
    approx_extremes,
    approx_rsavr,
    centrality_scores,
    count_permutations_tree,
    enumerate_permitted,
    enumerate_with_probabilities,
    exact_likelihood,
    exact_mle,
    literal_mismatch,
    log_count,
    permutation_logps,
    permutation_probability,
    rsavr_scores,
    sample_permutation,
    score,
)

from conftest import random_connected_graph

TRACING = LikelihoodConfig("tracing-network")


def _bruteforce_permitted(g, v):
    """Filter all n! orders: independent of the recursive walk."""
    out = []
    for rest in itertools.permutations([u for u in range(g.n) if u != v]):
        sigma = (v,) + rest
        if all(any(y in sigma[:i] for y in g.adj[x]) for i, x in enumerate(sigma) if i):
            out.append(sigma)
    return out


def _hand_probability(sigma, g, deg, literal=False):
    """Direct product formula with sets, written independently of the library loop."""
    p = 1.0
    phi_prev = 1
    for i in range(1, len(sigma)):
        prefix = set(sigma[:i])
        phi = sum(1 for y in g.adj[sigma[i]] if y in prefix)
        sd = sum(deg[u] for u in prefix)
        if literal:
            den = sd - 2 * (i + 1 - phi_prev - 1)
        else:
            internal = sum(1 for a, b in itertools.combinations(prefix, 2) if g.has_edge(a, b))
            den = sd - 2 * internal
        p *= phi / den
        phi_prev = phi
    return p


# ------------------------------------------------------------- probabilities


def test_path_center_tracing_universe():
    assert math.exp(permutation_probability((1, 0, 2), path_graph(3), TRACING)) == pytest.approx(0.5, abs=1e-12)


def test_path_center_constant_two():
    cfg = LikelihoodConfig("constant-d", d=2)
    assert math.exp(permutation_probability((1, 0, 2), path_graph(3), cfg)) == pytest.approx(0.25, abs=1e-12)


def test_single_node_probability_one():
    assert permutation_probability((0,), build_graph([], n=1), TRACING) == 0.0


def test_non_permitted_is_minus_inf():
    assert permutation_probability((0, 2, 1), path_graph(3), TRACING) == -math.inf


def test_not_a_permutation_rejected():
    with pytest.raises(ValueError):
        permutation_probability((0, 1), path_graph(3), TRACING)


def test_probability_matches_hand_formula(rng):
    for _ in range(30):
        g = random_connected_graph(int(rng.integers(2, 8)), 0.3, rng)
        contact = g.degree + rng.integers(0, 3, size=g.n)
        obs = Observation.of(g, contact)
        for mode in ("exact-boundary", "literal-eq3"):
            cfg = LikelihoodConfig("observed-contacts", mode)
            for sigma in enumerate_permitted(g, int(rng.integers(g.n)))[:20]:
                want = _hand_probability(sigma, g, contact.tolist(), literal=mode == "literal-eq3")
                assert math.exp(permutation_probability(sigma, obs, cfg)) == pytest.approx(want, rel=1e-12)


def test_literal_differs_on_complete_graph():
    g = build_graph([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
    sigma = (0, 1, 2, 3)
    a = permutation_probability(sigma, g, LikelihoodConfig("tracing-network", "literal-eq3"))
    b = permutation_probability(sigma, g, TRACING)
    # last step: literal 9 - 2*(4-2-1) = 7, true boundary 9 - 2*3 = 3
    assert math.exp(b - a) == pytest.approx(7 / 3)
    assert literal_mismatch(sigma, g, TRACING)
    assert not literal_mismatch((0, 1, 2), path_graph(3), TRACING)


def test_literal_degenerate_denominator():
    with pytest.raises(FormulaDegenerateError):
        _step_denominator("literal-eq3", 2, 0, 5, 1)


def test_constant_d_below_max_degree():
    with pytest.raises(ValueError):
        LikelihoodConfig("constant-d", d=2).degrees(star_graph(3))
    with pytest.raises(ValueError):
        LikelihoodConfig("constant-d")


def test_universe_smaller_than_support_rejected():
    obs = Observation.of(path_graph(3), contact_degree=[1, 1, 1])
    with pytest.raises(ValueError):
        LikelihoodConfig("observed-contacts").degrees(obs)


def test_config_roundtrip():
    cfg = LikelihoodConfig("constant-d", "literal-eq3", 4)
    assert LikelihoodConfig.from_dict(cfg.to_dict()) == cfg


# --------------------------------------------------------------- enumeration


def test_enumerate_path_center():
    assert enumerate_permitted(path_graph(3), 1) == [(1, 0, 2), (1, 2, 0)]


def test_enumerate_star_from_leaf():
    assert len(enumerate_permitted(star_graph(3), 1)) == 2


def test_enumerate_five_node_star():
    g = star_graph(4)
    assert len(enumerate_permitted(g, 0)) == 24
    for leaf in range(1, 5):
        assert len(enumerate_permitted(g, leaf)) == 6


def test_enumeration_matches_bruteforce(rng):
    for _ in range(25):
        g = random_connected_graph(int(rng.integers(1, 7)), 0.3, rng)
        v = int(rng.integers(g.n))
        got = enumerate_permitted(g, v)
        assert got == sorted(_bruteforce_permitted(g, v))
        assert len(set(got)) == len(got)


def test_enumeration_cap():
    with pytest.raises(EnumerationCapError, match="sampling"):
        enumerate_permitted(star_graph(7), 0, cap=100)


def test_enumeration_needs_connected():
    with pytest.raises(GraphError):
        enumerate_permitted(build_graph([(0, 1), (2, 3)]), 0)


# --------------------------------------------------------- exact likelihood


def test_exact_path_constant_two():
    s = exact_mle(path_graph(3), LikelihoodConfig("constant-d", d=2))
    assert np.allclose(np.exp(s.scores), [0.25, 0.5, 0.25])
    assert s.argmax() == [1] == centroid(path_graph(3))


def test_exact_single_node():
    assert exact_likelihood(build_graph([], n=1), 0, TRACING) == 0.0


def test_normalization_tracing_universe(rng):
    for _ in range(30):
        g = random_connected_graph(int(rng.integers(1, 9)), 0.25, rng)
        for v in range(g.n):
            assert abs(math.exp(exact_likelihood(g, v, TRACING)) - 1.0) < 1e-9


def test_tree_modes_agree(rng):
    for _ in range(30):
        t = random_tree(int(rng.integers(2, 9)), rng)
        v = int(rng.integers(t.n))
        a = permutation_logps(t, v, TRACING)
        b = permutation_logps(t, v, LikelihoodConfig("tracing-network", "literal-eq3"))
        assert np.max(np.abs(np.exp(a) - np.exp(b))) < 1e-12


def test_probabilities_listed_with_permutations():
    perms, logps = enumerate_with_probabilities(path_graph(3), 1, TRACING)
    assert perms == [(1, 0, 2), (1, 2, 0)]
    assert np.allclose(np.exp(logps), [0.5, 0.5])


# ---------------------------------------------------------------- counting


def test_counts_small_trees():
    assert count_permutations_tree(path_graph(3), 1, exact=True) == 2
    assert count_permutations_tree(path_graph(3), 0, exact=True) == 1
    assert count_permutations_tree(star_graph(3), 0, exact=True) == 6
    assert count_permutations_tree(star_graph(3), 2, exact=True) == 2


def test_counts_match_enumeration(rng):
    for _ in range(40):
        t = random_tree(int(rng.integers(1, 9)), rng)
        c = count_permutations_tree(t, exact=True)
        for v in range(t.n):
            assert c.exact[v] == len(enumerate_permitted(t, v))
            assert c.log[v] == pytest.approx(math.log(c.exact[v]), abs=1e-9)


def test_counts_match_closed_form(rng):
    # n! / prod of subtree sizes with v as root
    from sourcetrace.graph import bfs_tree, subtree_sizes
    t = random_tree(40, rng)
    c = count_permutations_tree(t, exact=True)
    for v in range(t.n):
        sizes = subtree_sizes(bfs_tree(t, v)).tolist()
        assert c.exact[v] == math.factorial(40) // math.prod(sizes)


def test_count_rejects_non_tree():
    with pytest.raises(GraphError):
        count_permutations_tree(build_graph([(0, 1), (1, 2), (2, 0)]))


def test_log_count_flags_non_tree():
    g = build_graph([(0, 1), (1, 2), (2, 0)])
    lc, approx = log_count(g, 0)
    assert approx and lc == pytest.approx(math.log(2))
    assert log_count(path_graph(3), 1) == (pytest.approx(math.log(2)), False)


def test_centroid_is_argmax_on_regular_trees(rng):
    for s in range(10):
        d = 3 + s % 2
        n = 1 + (d - 1) * int(rng.integers(2, 40))
        n += (2 - n) % (d - 1)
        t = random_regular_tree(n, d, rng)
        sc = centrality_scores(t, d)
        assert set(sc.argmax()) <= set(centroid(t))


def test_regular_tree_exact_equals_message_passing(rng):
    t = random_regular_tree(8, 3, rng)
    ex = exact_mle(t, LikelihoodConfig("constant-d", d=3))
    mp = centrality_scores(t, 3)
    assert np.allclose(ex.scores, mp.scores, atol=1e-9)


# ---------------------------------------------------------------- sampling


def test_sample_path_end_unique():
    r = np.random.default_rng(0)
    assert sample_permutation(path_graph(5), 0, r) == (0, 1, 2, 3, 4)


def test_sample_star_center_uniform():
    r = np.random.default_rng(1)
    g = star_graph(3)
    trials = 10_000
    counts = {}
    for _ in range(trials):
        s = sample_permutation(g, 0, r, "edge-uniform")
        counts[s] = counts.get(s, 0) + 1
    assert len(counts) == 6
    p = 1 / 6
    sd = math.sqrt(trials * p * (1 - p))
    assert all(abs(c - trials * p) < 4 * sd for c in counts.values())


def test_sample_seeded_repeatable(rng):
    g = random_connected_graph(20, 0.1, rng)
    a = sample_permutation(g, 3, np.random.default_rng(7), "node-uniform")
    b = sample_permutation(g, 3, np.random.default_rng(7), "node-uniform")
    assert a == b


@pytest.mark.parametrize("rule", ["edge-uniform", "node-uniform"])
def test_samples_are_permitted(rule, rng):
    for _ in range(20):
        g = random_connected_graph(int(rng.integers(2, 15)), 0.2, rng)
        v = int(rng.integers(g.n))
        s = sample_permutation(g, v, rng, rule)
        assert permutation_probability(s, g, TRACING) > -math.inf


def test_uniform_sampler_matches_uniform_over_omega():
    # two arms 0-1-2 and 0-3-4; target is uniform over the enumerated set
    t = build_graph([(0, 1), (1, 2), (0, 3), (3, 4)])
    omega = enumerate_permitted(t, 0)
    r = np.random.default_rng(5)
    trials = 12_000
    counts = dict.fromkeys(omega, 0)
    for _ in range(trials):
        counts[sample_permutation(t, 0, r, "uniform")] += 1
    p = 1 / len(omega)
    sd = math.sqrt(trials * p * (1 - p))
    assert all(abs(c - trials * p) < 4 * sd for c in counts.values())


def test_uniform_sampler_rejects_cycles():
    with pytest.raises(GraphError):
        sample_permutation(build_graph([(0, 1), (1, 2), (2, 0)]), 0, np.random.default_rng(0), "uniform")


# -------------------------------------------------------------- estimators


def test_rsavr_single_permutation_support():
    g = path_graph(5)
    cfg = LikelihoodConfig("constant-d", d=3)
    exact = exact_likelihood(g, 0, cfg)
    for k in (1, 5, 50):
        assert approx_rsavr(g, 0, k, cfg, np.random.default_rng(k)) == pytest.approx(exact, abs=1e-12)


def test_rsavr_full_enumeration_collapses_to_exact(rng):
    # replacing the k samples by all of Omega turns the estimator into the exact average form
    for _ in range(10):
        g = random_connected_graph(int(rng.integers(2, 7)), 0.3, rng)
        obs = Observation.of(g, g.degree + 1)
        cfg = LikelihoodConfig("observed-contacts")
        v = int(rng.integers(g.n))
        logps = permutation_logps(obs, v, cfg)
        avg = logsumexp(logps) - math.log(logps.size)
        assert avg + math.log(logps.size) == pytest.approx(exact_likelihood(obs, v, cfg), abs=1e-12)


def test_rsavr_error_shrinks_with_k(rng):
    quartiles = []
    cases = []
    for _ in range(15):
        t = random_tree(int(rng.integers(5, 9)), rng)
        obs = Observation.of(t, t.degree + rng.integers(0, 3, size=t.n))
        cases.append((obs, int(rng.integers(t.n))))
    cfg = LikelihoodConfig("observed-contacts")
    for k in (1, 10, 100, 1000):
        errs = [abs(approx_rsavr(obs, v, k, cfg, np.random.default_rng(k * 31 + i)) - exact_likelihood(obs, v, cfg))
                for i, (obs, v) in enumerate(cases)]
        quartiles.append(np.percentile(errs, [50, 75]))
    q = np.array(quartiles)
    assert np.all(np.diff(q[:, 1]) < 0)
    assert q[-1, 1] < 0.05


def test_rsavr_scores_snapshot():
    g = build_graph([(0, 1), (1, 2), (2, 0), (2, 3)])
    s = rsavr_scores(g, 10, LikelihoodConfig("observed-contacts"), seed=3)
    assert s.config["count"] == "approximate-count"
    assert s.config["sampling_rule"] == "edge-uniform"
    assert rsavr_scores(path_graph(4), 10).config["sampling_rule"] == "uniform"
    assert np.array_equal(s.scores, rsavr_scores(g, 10, LikelihoodConfig("observed-contacts"), seed=3).scores)


def test_bfsran_path_end_exact():
    cfg = LikelihoodConfig("constant-d", d=2)
    assert approx_bfsran(path_graph(4), 0, cfg) == pytest.approx(exact_likelihood(path_graph(4), 0, cfg))


def test_bfsran_star_center_is_one():
    assert approx_bfsran(star_graph(3), 0, TRACING) == pytest.approx(0.0, abs=1e-12)


def test_bfsran_seeded():
    g = star_graph(6)
    cfg = LikelihoodConfig("constant-d", d=7)
    assert approx_bfsran(g, 2, cfg, np.random.default_rng(3)) == approx_bfsran(g, 2, cfg, np.random.default_rng(3))


def test_extremes_single_permutation():
    cfg = LikelihoodConfig("constant-d", d=3)
    vals = {m: approx_extremes(path_graph(4), 0, cfg, m) for m in ("DegMax", "DegMin", "DegRan")}
    assert len({round(x, 12) for x in vals.values()}) == 1


def test_extremes_path_center_symmetric():
    cfg = LikelihoodConfig("constant-d", d=3)
    g = path_graph(3)
    assert approx_extremes(g, 1, cfg, "DegMax") == pytest.approx(approx_extremes(g, 1, cfg, "DegMin"))


def test_extreme_sandwich(rng):
    for _ in range(25):
        g = random_connected_graph(int(rng.integers(2, 9)), 0.25, rng)
        obs = Observation.of(g, g.degree + rng.integers(0, 3, size=g.n))
        cfg = LikelihoodConfig("observed-contacts")
        for v in range(g.n):
            lo = approx_extremes(obs, v, cfg, "DegMin")
            hi = approx_extremes(obs, v, cfg, "DegMax")
            logps = permutation_logps(obs, v, cfg)
            avg = logsumexp(logps) - math.log(logps.size) + log_count(obs, v)[0]
            assert lo - 1e-9 <= avg <= hi + 1e-9


def test_score_dispatch_unknown():
    with pytest.raises(ValueError):
        score(path_graph(3), "bogus")


def test_source_scores_ties_and_ranking():
    s = SourceScores(np.array([3, 5, 9]), np.array([1.0, 2.0, 2.0]), "x")
    assert s.argmax() == [5, 9]
    assert s.best() == 5
    assert s.best("incumbent", 9) == 9
    assert s.ranking() == [5, 9, 3]
    assert s.score_of(9) == 2.0


def test_count_level_pass_matches_node_loop(monkeypatch, rng):
    from sourcetrace import likelihood

    t = random_tree(3000, rng)
    fast = count_permutations_tree(t).log
    monkeypatch.setattr(likelihood, "_bfs_levels", lambda order, pred: None)
    slow = count_permutations_tree(t).log
    assert np.allclose(fast, slow, rtol=0, atol=1e-8)
