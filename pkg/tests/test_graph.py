import numpy as np
import pytest

from sourcetrace.epidemic import complete_nary_tree, random_tree
from sourcetrace.graph import (
    GraphError,
    bfs_tree,
    build_graph,
    centroid,
    dfs_tree,
    diameter,
    distance,
    path_graph,
    star_graph,
    subtree_sizes,
    tree_from_parents,
)

from conftest import floyd_warshall, random_connected_graph


def test_build_path():
    g = build_graph([(0, 1), (1, 2)])
    assert g.degree.tolist() == [1, 2, 1]
    assert g.adj == ((1,), (0, 2), (1,))


def test_build_dedups_reversed_pair():
    g = build_graph([(0, 1), (1, 0)])
    assert g.degree.tolist() == [1, 1]
    assert g.num_edges == 1


def test_build_rejects_self_loop():
    with pytest.raises(GraphError, match="self-loop"):
        build_graph([(0, 0)])


def test_adjacency_sorted_and_symmetric(rng):
    g = random_connected_graph(30, 0.1, rng)
    for v in range(g.n):
        assert list(g.adj[v]) == sorted(g.adj[v])
        for w in g.adj[v]:
            assert v in g.adj[w]
            assert w != v
    assert g.degree.sum() == 2 * g.num_edges


def test_bfs_star_center():
    t = bfs_tree(star_graph(4), 0)
    assert t.order.tolist() == [0, 1, 2, 3, 4]
    assert t.depth.tolist() == [0, 1, 1, 1, 1]


def test_bfs_path():
    assert bfs_tree(path_graph(3), 0).order.tolist() == [0, 1, 2]


def test_bfs_depth_matches_all_pairs(rng):
    for _ in range(100):
        n = int(rng.integers(2, 51))
        g = random_connected_graph(n, 0.05, rng)
        fw = floyd_warshall(g)
        root = int(rng.integers(n))
        t = bfs_tree(g, root)
        assert np.array_equal(t.depth, fw[root].astype(int))
        assert sorted(t.order.tolist()) == list(range(n))


def test_bfs_order_is_level_order_with_ascending_ties():
    g = build_graph([(0, 3), (0, 1), (3, 2), (1, 4)])
    assert bfs_tree(g, 0).order.tolist() == [0, 1, 3, 4, 2]


def test_bfs_unknown_root():
    with pytest.raises(GraphError):
        bfs_tree(path_graph(3), 7)


def test_dfs_path_from_middle():
    assert dfs_tree(path_graph(3), 1).order.tolist() == [1, 0, 2]


def test_dfs_star():
    assert dfs_tree(star_graph(3), 0).order.tolist() == [0, 1, 2, 3]


def _recursive_preorder(adj, root):
    out, seen = [], set()

    def go(u):
        seen.add(u)
        out.append(u)
        for w in sorted(adj[u]):
            if w not in seen:
                go(w)

    go(root)
    return out


def test_dfs_binary_tree_preorder():
    g = complete_nary_tree(15, 2)
    assert dfs_tree(g, 0).order.tolist() == _recursive_preorder(g.adj, 0)


def test_dfs_matches_recursive_on_random_graphs(rng):
    for _ in range(30):
        g = random_connected_graph(int(rng.integers(2, 40)), 0.1, rng)
        r = int(rng.integers(g.n))
        assert dfs_tree(g, r).order.tolist() == _recursive_preorder(g.adj, r)


def test_distance_basic():
    g = path_graph(3)
    assert distance(g, 0, 2) == 2
    assert distance(g, 1, 1) == 0


def test_distance_unreachable():
    g = build_graph([(0, 1), (2, 3)])
    assert distance(g, 0, 3) is None


def test_distance_matches_floyd_warshall(rng):
    for _ in range(10):
        g = random_connected_graph(int(rng.integers(2, 51)), 0.08, rng)
        fw = floyd_warshall(g)
        for u, v in rng.integers(0, g.n, size=(20, 2)):
            assert distance(g, int(u), int(v)) == fw[u, v] == distance(g, int(v), int(u))


def test_diameter():
    assert diameter(path_graph(7)) == 6
    assert diameter(star_graph(5)) == 2
    with pytest.raises(GraphError):
        diameter(build_graph([(0, 1), (2, 3)]))


def test_diameter_matches_oracle(rng):
    for _ in range(10):
        g = random_connected_graph(int(rng.integers(2, 51)), 0.05, rng)
        assert diameter(g) == int(floyd_warshall(g).max())


def test_subtree_sizes_path_and_star():
    assert subtree_sizes(bfs_tree(path_graph(5), 0)).tolist() == [5, 4, 3, 2, 1]
    assert subtree_sizes(bfs_tree(star_graph(4), 0)).tolist() == [5, 1, 1, 1, 1]


def _sizes_by_leaf_stripping(parent, n):
    size = [1] * n
    remaining = set(range(n))
    kids = {v: 0 for v in range(n)}
    for v, p in enumerate(parent):
        if p >= 0:
            kids[p] += 1
    while len(remaining) > 1:
        leaves = [v for v in remaining if kids[v] == 0 and parent[v] >= 0]
        for v in leaves:
            size[parent[v]] += size[v]
            kids[parent[v]] -= 1
            remaining.discard(v)
    return size


def test_subtree_sizes_vs_leaf_stripping(rng):
    for _ in range(50):
        n = int(rng.integers(1, 13))
        t = random_tree(n, rng)
        rt = bfs_tree(t, int(rng.integers(n)))
        assert subtree_sizes(rt).tolist() == _sizes_by_leaf_stripping(rt.parent.tolist(), n)


def test_centroid_paths():
    assert centroid(path_graph(5)) == [2]
    assert centroid(path_graph(4)) == [1, 2]


def _centroid_by_removal(t):
    n = t.n
    worst = []
    for v in range(n):
        keep = [u for u in range(n) if u != v]
        sub, _ = t.subgraph(keep)
        from sourcetrace.graph import connected_components
        worst.append(max((c.size for c in connected_components(sub)), default=0))
    best = min(worst)
    return [v for v in range(n) if worst[v] == best]


def test_centroid_vs_exhaustive(rng):
    for _ in range(60):
        n = int(rng.integers(1, 13))
        t = random_tree(n, rng)
        c = centroid(t)
        assert c == _centroid_by_removal(t)
        assert len(c) in (1, 2)
        if len(c) == 2:
            assert t.has_edge(*c)


def test_centroid_max_component_bound(rng):
    from sourcetrace.graph import connected_components
    for _ in range(40):
        n = int(rng.integers(2, 40))
        t = random_tree(n, rng)
        v = centroid(t)[0]
        sub, _ = t.subgraph([u for u in range(n) if u != v])
        assert max(c.size for c in connected_components(sub)) <= n // 2


def test_centroid_rejects_non_tree():
    with pytest.raises(GraphError):
        centroid(build_graph([(0, 1), (1, 2), (2, 0)]))


def test_tree_from_parents():
    t = tree_from_parents([-1, 0, 0, 1])
    assert t.adj == ((1, 2), (0, 3), (0,), (1,))


def test_subgraph_keeps_ascending_ids():
    g = path_graph(6)
    sub, nodes = g.subgraph([4, 2, 3])
    assert nodes.tolist() == [2, 3, 4]
    assert sub.adj == ((1,), (0, 2), (1,))
