import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from engnn.graphs import (DatasetFormatError, Graph, GraphError, gen_csl, gen_erdos_renyi, gen_subgraph_task,
                          inverse_perm, permute_graph, quantile_buckets, read_jsonl, subset_cut_ratio,
                          subset_density, write_jsonl)


def test_erdos_renyi_extremes_and_bounds():
    assert gen_erdos_renyi(6, 0.0, 1).num_edges == 0
    assert gen_erdos_renyi(5, 1.0, 1).num_edges == 10
    g = gen_erdos_renyi(20, 0.3, 7)
    assert 30 <= g.num_edges <= 84
    assert g == gen_erdos_renyi(20, 0.3, 7)


@given(n=st.integers(1, 20), p=st.floats(0, 1), seed=st.integers(0, 10 ** 6))
def test_graph_invariants(n, p, seed):
    g = gen_erdos_renyi(n, p, seed)
    g.validate()
    a = g.adjacency()
    assert np.array_equal(a, a.T)
    assert not np.any(np.diag(a))
    for u in range(n):
        assert np.all(np.diff(g.neighbors(u)) > 0)


def test_invalid_graphs():
    with pytest.raises(GraphError):
        Graph.from_edges(3, [(0, 0)])
    with pytest.raises(GraphError):
        Graph.from_edges(3, [(0, 5)])
    with pytest.raises(GraphError):
        gen_csl(10, 2)  # gcd(10, 2) != 1
    with pytest.raises(GraphError):
        gen_csl(7, 2)  # n < 8


def test_csl_is_four_regular():
    for skip in (2, 3):
        g = gen_csl(11, skip)
        assert np.all(g.degrees == 4)


@given(n=st.integers(1, 15), seed=st.integers(0, 10 ** 6))
def test_permutation_roundtrip(n, seed):
    rng = np.random.default_rng(seed)
    g = gen_erdos_renyi(n, 0.4, seed)
    g.x = rng.standard_normal((n, 2))
    g.y = rng.standard_normal(n)
    g.subset = np.sort(rng.choice(n, size=max(1, n // 2), replace=False))
    assert permute_graph(g, np.arange(n)) == g
    perm = rng.permutation(n)
    h = permute_graph(g, perm)
    assert permute_graph(h, inverse_perm(perm)) == g
    # node i of g is node perm[i] of h
    assert np.array_equal(h.adjacency()[np.ix_(perm, perm)], g.adjacency())
    assert np.array_equal(h.x[perm], g.x)
    assert np.array_equal(h.y[perm], g.y)
    assert set(h.subset.tolist()) == set(perm[g.subset].tolist())


def test_permute_rejects_non_bijection():
    with pytest.raises(GraphError):
        permute_graph(gen_erdos_renyi(3, 0.5, 0), [0, 0, 1])


def test_jsonl_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    graphs = []
    for i in range(100):
        g = gen_erdos_renyi(int(rng.integers(1, 12)), 0.4, i)
        g.y = rng.standard_normal(g.n) if i % 2 else float(i)
        graphs.append(g)
    path = tmp_path / "d.jsonl"
    write_jsonl(path, graphs)
    back = read_jsonl(path)
    assert back == graphs
    for line in path.read_text().splitlines():
        rec = json.loads(line)
        assert all(u < v for u, v in rec["edges"])


def test_jsonl_errors_name_the_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"n": 2, "edges": [[0, 1]]}\n{"n": 2, "edges": [[0, 1]\n')
    with pytest.raises(DatasetFormatError, match=":2"):
        read_jsonl(path)
    path.write_text('{"n": 2, "edges": [[1, 0]]}\n')
    with pytest.raises(DatasetFormatError, match=":1"):
        read_jsonl(path)


def test_subset_statistics():
    g = Graph.from_edges(5, [(0, 1), (0, 2), (1, 2), (3, 4)])
    assert subset_density(g, [0, 1, 2]) == 1.0
    assert subset_cut_ratio(g, [3, 4]) == 0.0


@pytest.mark.parametrize("kind", ["density", "cutratio", "component"])
def test_subgraph_task_balanced(kind):
    data = gen_subgraph_task(kind, 60, 30, seed=3)
    labels = np.array([g.y for g in data])
    counts = np.bincount(labels, minlength=3)
    assert counts.max() - counts.min() <= 1
    assert all(g.subset is not None and len(g.subset) > 0 for g in data)


def test_subgraph_task_extremes():
    # clique subset in the top density bucket, isolated subset in the bottom cut-ratio bucket
    vals = np.array([0.1, 0.3, 0.5, 0.2, 1.0, 0.4])
    assert quantile_buckets(vals)[4] == 2
    assert quantile_buckets(np.array([0.0, 0.5, 0.7, 0.9, 0.2, 0.6]))[0] == 0


def test_generator_determinism(tmp_path):
    for name in ("a", "b"):
        write_jsonl(tmp_path / name, gen_subgraph_task("density", 40, 20, seed=9))
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
