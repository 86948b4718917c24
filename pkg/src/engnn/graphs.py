"""Undirected simple graphs, synthetic generators and the JSONL dataset format."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class GraphError(ValueError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass(eq=False)
class Graph:
    """Undirected graph with CSR adjacency (sorted neighbour lists).

    ``x`` is an ``n x d0`` feature matrix (``d0`` may be 0), ``subset`` an
    optional sorted array of node ids and ``y`` an optional target: a scalar,
    a per-graph vector, or a per-node vector of length ``n``.
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    x: np.ndarray
    subset: np.ndarray | None = None
    y: object = None

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Sequence[int]], x=None, subset=None, y=None) -> "Graph":
        n = int(n)
        if n < 0:
            raise GraphError("node count must be non-negative")
        e = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        if len(e):
            if e.min() < 0 or e.max() >= n:
                raise GraphError("node id out of range")
            if np.any(e[:, 0] == e[:, 1]):
                raise GraphError("self-loops are not allowed")
        u = np.minimum(e[:, 0], e[:, 1])
        v = np.maximum(e[:, 0], e[:, 1])
        pairs = np.unique(np.stack([u, v], axis=1), axis=0) if len(e) else e
        src = np.concatenate([pairs[:, 0], pairs[:, 1]])
        dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        indptr = np.concatenate([[0], np.cumsum(np.bincount(src, minlength=n))]).astype(np.int64)
        if x is None:
            x = np.zeros((n, 0))
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != n:
            raise GraphError(f"feature matrix must be {n} x d, got {x.shape}")
        if subset is not None:
            subset = np.unique(np.asarray(subset, dtype=np.int64))
            if len(subset) and (subset.min() < 0 or subset.max() >= n):
                raise GraphError("subset id out of range")
        return cls(n, indptr, dst.astype(np.int64), x, subset, y)

    # -- structure --------------------------------------------------------
    def neighbors(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def num_edges(self) -> int:
        return len(self.indices) // 2

    def edges(self) -> np.ndarray:
        """Each undirected edge once, as rows (u, v) with u < v, sorted."""
        src = np.repeat(np.arange(self.n), self.degrees)
        keep = src < self.indices
        return np.stack([src[keep], self.indices[keep]], axis=1)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        src = np.repeat(np.arange(self.n), self.degrees)
        a[src, self.indices] = 1.0
        return a

    def features(self) -> np.ndarray:
        """Node features, with a constant column standing in for an empty matrix."""
        if self.x.shape[1] == 0:
            return np.ones((self.n, 1))
        return self.x

    def validate(self) -> None:
        if len(self.indptr) != self.n + 1 or self.indptr[0] != 0:
            raise GraphError("malformed indptr")
        for u in range(self.n):
            nb = self.neighbors(u)
            if np.any(nb < 0) or np.any(nb >= self.n):
                raise GraphError(f"node {u}: neighbour id out of range")
            if np.any(nb == u):
                raise GraphError(f"node {u}: self-loop")
            if np.any(np.diff(nb) <= 0):
                raise GraphError(f"node {u}: neighbour list not strictly sorted")
        a = self.adjacency()
        if not np.array_equal(a, a.T):
            raise GraphError("adjacency is not symmetric")

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.n == other.n
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and self.x.shape == other.x.shape
            and np.array_equal(self.x, other.x)
            and _opt_equal(self.subset, other.subset)
            and _opt_equal(self.y, other.y)
        )

    def __repr__(self):
        return f"Graph(n={self.n}, m={self.num_edges}, d0={self.x.shape[1]})"


def _opt_equal(a, b):
    if a is None or b is None:
        return a is None and b is None
    return np.array_equal(np.asarray(a), np.asarray(b))


def permute_graph(g: Graph, perm) -> Graph:
    """Relabel node ``i`` as ``perm[i]``; features, subset and per-node targets follow."""
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (g.n,) or not np.array_equal(np.sort(perm), np.arange(g.n)):
        raise GraphError("perm must be a bijection on range(n)")
    e = g.edges()
    x = np.empty_like(g.x)
    x[perm] = g.x
    subset = None if g.subset is None else perm[g.subset]
    y = g.y
    if y is not None and np.ndim(y) == 1 and len(y) == g.n:
        yy = np.empty(g.n, dtype=np.asarray(y).dtype)
        yy[perm] = np.asarray(y)
        y = yy
    return Graph.from_edges(g.n, perm[e] if len(e) else e, x, subset, y)


def inverse_perm(perm) -> np.ndarray:
    perm = np.asarray(perm)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    return inv


# ---------------------------------------------------------------- generators

def gen_erdos_renyi(n: int, p: float, seed: int) -> Graph:
    if n < 1 or not 0.0 <= p <= 1.0:
        raise GraphError("need n >= 1 and p in [0, 1]")
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, 1)
    keep = rng.random(len(iu)) < p
    return Graph.from_edges(n, np.stack([iu[keep], ju[keep]], axis=1))


def gen_csl(n: int, skip: int) -> Graph:
    """Circulant skip-link graph: i ~ i+-1 and i+-skip (mod n)."""
    if n < 8 or not 2 <= skip < n / 2 or math.gcd(n, skip) != 1:
        raise GraphError("CSL needs n >= 8, 2 <= skip < n/2 and gcd(n, skip) == 1")
    i = np.arange(n)
    edges = np.concatenate([
        np.stack([i, (i + 1) % n], axis=1),
        np.stack([i, (i + skip) % n], axis=1),
    ])
    return Graph.from_edges(n, edges)


SUBGRAPH_KINDS = ("density", "cutratio", "component")


def subset_density(g: Graph, subset) -> float:
    s = np.asarray(subset)
    k = len(s)
    if k < 2:
        return 0.0
    a = g.adjacency()
    return a[np.ix_(s, s)].sum() / (k * (k - 1))


def subset_cut_ratio(g: Graph, subset) -> float:
    s = np.asarray(subset)
    rest = np.setdiff1d(np.arange(g.n), s)
    if len(s) == 0 or len(rest) == 0:
        return 0.0
    a = g.adjacency()
    return a[np.ix_(s, rest)].sum() / (len(s) * len(rest))


def subset_components(g: Graph, subset) -> int:
    s = [int(v) for v in subset]
    inside = set(s)
    seen = set()
    comps = 0
    for v in s:
        if v in seen:
            continue
        comps += 1
        stack = [v]
        seen.add(v)
        while stack:
            u = stack.pop()
            for w in g.neighbors(u):
                w = int(w)
                if w in inside and w not in seen:
                    seen.add(w)
                    stack.append(w)
    return comps


def quantile_buckets(values, k: int = 3) -> np.ndarray:
    """Rank-based buckets; class sizes differ by at most one (ties broken by index)."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    labels = np.empty(len(values), dtype=np.int64)
    labels[order] = (np.arange(len(values)) * k) // max(len(values), 1)
    return labels


def _grow_subset(g: Graph, rng, size: int, allowed=None):
    allowed = np.ones(g.n, dtype=bool) if allowed is None else allowed
    starts = np.flatnonzero(allowed)
    if len(starts) == 0:
        return None
    chosen = [int(rng.choice(starts))]
    in_set = {chosen[0]}
    while len(chosen) < size:
        frontier = sorted({int(w) for u in chosen for w in g.neighbors(u) if allowed[w] and int(w) not in in_set})
        if not frontier:
            return None
        w = int(rng.choice(frontier))
        chosen.append(w)
        in_set.add(w)
    return sorted(chosen)


def _base_graph(n: int, rng) -> Graph:
    # planted partition: dense blocks with sparse links, so subset statistics vary
    blocks = max(2, n // 10)
    block_of = rng.integers(0, blocks, size=n)
    iu, ju = np.triu_indices(n, 1)
    p = np.where(block_of[iu] == block_of[ju], 0.35, 0.03)
    keep = rng.random(len(iu)) < p
    return Graph.from_edges(n, np.stack([iu[keep], ju[keep]], axis=1))


def gen_subgraph_task(kind: str, n: int, num_subgraphs: int, seed: int,
                      min_size: int = 3, max_size: int = 8, max_retries: int = 200) -> list[Graph]:
    """One base graph with many labelled node subsets, one record per subset.

    density / cutratio labels are 3 rank buckets of the statistic; component
    labels are (number of connected pieces - 1), generated in equal numbers.
    """
    if kind not in SUBGRAPH_KINDS:
        raise GraphError(f"unknown subgraph task {kind!r}")
    if n <= 0 or num_subgraphs <= 0:
        raise GraphError("n and num_subgraphs must be positive")
    rng = np.random.default_rng(seed)
    base = _base_graph(n, rng)
    subsets = []
    labels = []
    for idx in range(num_subgraphs):
        for _ in range(max_retries):
            if kind == "component":
                target = idx % 3
                s = _component_subset(base, rng, target + 1, min_size, max_size)
            else:
                s = _grow_subset(base, rng, int(rng.integers(min_size, max_size + 1)))
            if s is not None:
                break
        else:
            raise GraphError(f"could not sample subset {idx} after {max_retries} retries")
        subsets.append(s)
        if kind == "component":
            labels.append(target)
    if kind == "density":
        labels = quantile_buckets([subset_density(base, s) for s in subsets]).tolist()
    elif kind == "cutratio":
        labels = quantile_buckets([subset_cut_ratio(base, s) for s in subsets]).tolist()
    return [Graph.from_edges(base.n, base.edges(), base.x, s, int(lab)) for s, lab in zip(subsets, labels)]


def _component_subset(g: Graph, rng, pieces: int, min_size: int, max_size: int):
    allowed = np.ones(g.n, dtype=bool)
    out = []
    per_piece = max(1, int(rng.integers(min_size, max_size + 1)) // pieces)
    for _ in range(pieces):
        piece = _grow_subset(g, rng, per_piece, allowed)
        if piece is None:
            return None
        out.extend(piece)
        # block the piece and its boundary so pieces stay disconnected
        for u in piece:
            allowed[u] = False
            allowed[g.neighbors(u)] = False
    if subset_components(g, out) != pieces:
        return None
    return sorted(out)


# --------------------------------------------------------------------- JSONL

def graph_to_record(g: Graph) -> dict:
    rec = {"n": int(g.n), "edges": g.edges().tolist()}
    if g.x.shape[1] > 0:
        rec["x"] = g.x.tolist()
    if g.subset is not None:
        rec["subset"] = g.subset.tolist()
    if g.y is not None:
        y = np.asarray(g.y)
        rec["y"] = y.tolist() if y.ndim else y.item()
    return rec


def record_to_graph(rec: dict) -> Graph:
    unknown = set(rec) - {"n", "edges", "x", "subset", "y"}
    if unknown:
        raise GraphError(f"unknown fields {sorted(unknown)}")
    n = rec["n"]
    if not isinstance(n, int):
        raise GraphError("n must be an integer")
    edges = rec.get("edges", [])
    for e in edges:
        if len(e) != 2 or not e[0] < e[1]:
            raise GraphError(f"edge {e} must be a pair [u, v] with u < v")
    if len({tuple(e) for e in edges}) != len(edges):
        raise GraphError("duplicate edge")
    x = rec.get("x")
    if x is not None:
        x = np.asarray(x, dtype=np.float64).reshape(n, -1)
    y = rec.get("y")
    if isinstance(y, list):
        y = np.asarray(y, dtype=np.float64)
    g = Graph.from_edges(n, edges, x, rec.get("subset"), y)
    g.validate()
    return g


def write_jsonl(path, graphs: Iterable[Graph]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for g in graphs:
            fh.write(json.dumps(graph_to_record(g), separators=(",", ":")))
            fh.write("\n")


def read_jsonl(path) -> list[Graph]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"{Path(path).name}:{lineno}: malformed JSON ({exc.msg})") from exc
            try:
                out.append(record_to_graph(rec))
            except (GraphError, KeyError, TypeError, ValueError) as exc:
                raise DatasetFormatError(f"{Path(path).name}:{lineno}: record {len(out)} invalid: {exc}") from exc
    return out
