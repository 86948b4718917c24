"""Per-node substructure counts for the nine counting-benchmark patterns.

A node's count is the number of pattern copies that contain it. Copies are
counted once per subgraph (edge set), i.e. injective embeddings divided by the
pattern's automorphism count. Occurrence type per pattern:

=================  =========  ===========
pattern            vertices   occurrence
=================  =========  ===========
C3 .. C6           3 .. 6     non-induced
TailedTriangle     4          non-induced
ChordalCycle       4          induced
Clique4            4          induced
Path4              4          non-induced (three edges)
TriangleRectangle  5          non-induced (the "house")
=================  =========  ===========

Graph-level count = per-node sum / number of pattern vertices.
"""

from __future__ import annotations

import itertools
from enum import Enum

import numpy as np

from . import kernels
from .graphs import Graph

MAX_NODES = 64


class PatternKind(str, Enum):
    C3 = "C3"
    C4 = "C4"
    C5 = "C5"
    C6 = "C6"
    TailedTriangle = "TailedTriangle"
    ChordalCycle = "ChordalCycle"
    Clique4 = "Clique4"
    Path4 = "Path4"
    TriangleRectangle = "TriangleRectangle"


def _cycle(k):
    return [(i, (i + 1) % k) for i in range(k)]


# (vertex count, edges, induced)
PATTERNS = {
    PatternKind.C3: (3, _cycle(3), False),
    PatternKind.C4: (4, _cycle(4), False),
    PatternKind.C5: (5, _cycle(5), False),
    PatternKind.C6: (6, _cycle(6), False),
    PatternKind.TailedTriangle: (4, [(0, 1), (1, 2), (2, 0), (0, 3)], False),
    PatternKind.ChordalCycle: (4, _cycle(4) + [(0, 2)], True),
    PatternKind.Clique4: (4, list(itertools.combinations(range(4), 2)), True),
    PatternKind.Path4: (4, [(0, 1), (1, 2), (2, 3)], False),
    PatternKind.TriangleRectangle: (5, [(0, 1), (0, 2), (1, 2), (2, 3), (3, 4), (4, 1)], False),
}


def pattern_size(kind) -> int:
    return PATTERNS[PatternKind(kind)][0]


def count_pattern(g: Graph, kind, backend=None) -> np.ndarray:
    kind = PatternKind(kind)
    if g.n > MAX_NODES:
        raise ValueError(f"exhaustive counting is limited to {MAX_NODES} nodes (got {g.n})")
    if kind in (PatternKind.C3, PatternKind.C4, PatternKind.C5, PatternKind.C6):
        return kernels.walk_counts(g.indptr, g.indices, pattern_size(kind), True, backend=backend)
    if kind is PatternKind.Path4:
        return kernels.walk_counts(g.indptr, g.indices, 4, False, backend=backend)
    a = g.adjacency().astype(np.int64)
    if kind is PatternKind.TailedTriangle:
        return _tailed_triangles(a)
    if kind is PatternKind.ChordalCycle:
        return _diamonds(a)
    if kind is PatternKind.Clique4:
        return _clique4(a)
    return _houses(a)


def graph_count(g: Graph, kind) -> int:
    per_node = count_pattern(g, kind)
    size = pattern_size(kind)
    total, rem = divmod(int(per_node.sum()), size)
    assert rem == 0
    return total


def _tailed_triangles(a):
    a2 = a @ a
    tri = (a2 * a).sum(axis=1) // 2
    deg = a.sum(axis=1)
    # as a triangle corner: every tail hanging off any of the three corners
    corner = tri * (deg - 6) + (a * a2) @ deg
    # as the tail end: triangles at a neighbour that do not contain this node
    tail = a @ tri - 2 * tri
    return corner + tail


def _diamonds(a):
    n = len(a)
    out = np.zeros(n, dtype=np.int64)
    for u, v in zip(*np.nonzero(np.triu(a))):
        cn = np.flatnonzero(a[u] & a[v])
        c = len(cn)
        if c < 2:
            continue
        sub = a[np.ix_(cn, cn)]
        open_pairs = c * (c - 1) // 2 - sub.sum() // 2
        out[u] += open_pairs
        out[v] += open_pairs
        out[cn] += (c - 1) - sub.sum(axis=1)
    return out


def _clique4(a):
    n = len(a)
    out = np.zeros(n, dtype=np.int64)
    for u, v in zip(*np.nonzero(np.triu(a))):
        cn = np.flatnonzero(a[u] & a[v])
        if len(cn) < 2:
            continue
        sub = a[np.ix_(cn, cn)]
        # a vertex sees each of its K4s from all six edges
        out[u] += sub.sum() // 2
        out[v] += sub.sum() // 2
        out[cn] += sub.sum(axis=1)
    assert np.all(out % 6 == 0)
    return out // 6


def _houses(a):
    """Triangle (apex, b, c) on top of the square b-c-d-e."""
    n = len(a)
    out = np.zeros(n, dtype=np.int64)
    for b, c in zip(*np.nonzero(a)):
        for apex in np.flatnonzero(a[b] & a[c]):
            dmask = a[c].astype(bool).copy()
            dmask[[apex, b]] = False
            emask = a[b].astype(bool).copy()
            emask[[apex, c]] = False
            d_idx = np.flatnonzero(dmask)
            e_idx = np.flatnonzero(emask)
            if not len(d_idx) or not len(e_idx):
                continue
            sub = a[np.ix_(d_idx, e_idx)]
            total = sub.sum()
            if total == 0:
                continue
            out[[apex, b, c]] += total
            out[d_idx] += sub.sum(axis=1)
            out[e_idx] += sub.sum(axis=0)
    # the (b, c) / (c, b) orientations describe the same copy
    return out // 2


# ------------------------------------------------------------ naive oracle

def _automorphisms(k, edges):
    pa = np.zeros((k, k), dtype=bool)
    for u, v in edges:
        pa[u, v] = pa[v, u] = True
    count = 0
    for perm in itertools.permutations(range(k)):
        p = np.asarray(perm)
        if np.array_equal(pa[np.ix_(p, p)], pa):
            count += 1
    return count


def count_pattern_naive(g: Graph, kind) -> np.ndarray:
    """Brute force over every vertex subset of the pattern size and every bijection."""
    kind = PatternKind(kind)
    k, edges, induced = PATTERNS[kind]
    a = g.adjacency().astype(bool)
    perms = np.asarray(list(itertools.permutations(range(k))))
    eu = np.asarray([e[0] for e in edges])
    ev = np.asarray([e[1] for e in edges])
    pat = np.zeros((k, k), dtype=bool)
    pat[eu, ev] = pat[ev, eu] = True
    aut = _automorphisms(k, edges)
    out = np.zeros(g.n, dtype=np.int64)
    for subset in itertools.combinations(range(g.n), k):
        s = np.asarray(subset)
        sub = a[np.ix_(s, s)]
        if sub.sum() // 2 < len(edges):
            continue
        if induced:
            # position i of the pattern maps to subset vertex perm[i]
            mapped = sub[perms[:, :, None], perms[:, None, :]]
            hits = int(np.all(mapped == pat, axis=(1, 2)).sum())
        else:
            hits = int(np.all(sub[perms[:, eu], perms[:, ev]], axis=1).sum())
        copies, rem = divmod(hits, aut)
        assert rem == 0
        out[s] += copies
    return out
