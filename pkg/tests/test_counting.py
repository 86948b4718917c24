import numpy as np
import pytest
from hypothesis import given, strategies as st

from engnn.counting import MAX_NODES, PatternKind, count_pattern, count_pattern_naive, graph_count
from engnn.graphs import Graph, gen_erdos_renyi


def test_small_reference_graphs():
    tri = Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)])
    assert count_pattern(tri, "C3").tolist() == [1, 1, 1]
    hexagon = Graph.from_edges(6, [(i, (i + 1) % 6) for i in range(6)])
    assert count_pattern(hexagon, "C6").tolist() == [1] * 6
    assert count_pattern(hexagon, "C3").tolist() == [0] * 6
    k4 = Graph.from_edges(4, [(i, j) for i in range(4) for j in range(i + 1, 4)])
    assert count_pattern(k4, "Clique4").tolist() == [1] * 4
    assert count_pattern(k4, "ChordalCycle").tolist() == [0] * 4  # induced
    assert count_pattern(k4, "C4").tolist() == [3] * 4
    path = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)])
    assert count_pattern(path, "Path4").tolist() == [1] * 4


def test_triangle_trace_identity():
    for seed in range(50):
        g = gen_erdos_renyi(10, 0.5, seed)
        a = g.adjacency().astype(np.int64)
        per_node = count_pattern(g, "C3")
        assert per_node.sum() == np.trace(a @ a @ a) // 2
        assert graph_count(g, "C3") == np.trace(a @ a @ a) // 6


@pytest.mark.parametrize("kind", list(PatternKind))
def test_matches_naive_enumeration(kind):
    for seed in range(50):
        rng = np.random.default_rng([seed, 1])
        g = gen_erdos_renyi(int(rng.integers(5, 13)), 0.4, seed)
        assert np.array_equal(count_pattern(g, kind), count_pattern_naive(g, kind))


@pytest.mark.parametrize("kind", list(PatternKind))
def test_backends_agree(kind):
    g = gen_erdos_renyi(11, 0.45, 3)
    assert np.array_equal(count_pattern(g, kind, backend="python"), count_pattern(g, kind))


@given(n=st.integers(1, 10), seed=st.integers(0, 10 ** 6))
def test_counts_relabel_with_nodes(n, seed):
    from engnn.graphs import permute_graph
    g = gen_erdos_renyi(n, 0.5, seed)
    perm = np.random.default_rng(seed).permutation(n)
    h = permute_graph(g, perm)
    for kind in ("C3", "C4", "TailedTriangle"):
        assert np.array_equal(count_pattern(h, kind)[perm], count_pattern(g, kind))


def test_guard():
    with pytest.raises(ValueError):
        count_pattern(gen_erdos_renyi(MAX_NODES + 1, 0.01, 0), "C3")
