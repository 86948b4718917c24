"""1-WL colour refinement and a spectral non-isomorphism certificate."""

from __future__ import annotations

import hashlib
from collections import Counter

import numpy as np

from .graphs import Graph


def _digest(obj) -> str:
    return hashlib.sha1(repr(obj).encode()).hexdigest()[:16]


def initial_colors(g: Graph) -> list[str]:
    if g.x.shape[1] > 0:
        return [_digest(("x", tuple(row))) for row in g.x.tolist()]
    return [_digest(("deg", int(d))) for d in g.degrees]


def wl_colors(g: Graph, rounds: int | None = None) -> Counter:
    """Colour histogram after ``rounds`` refinements (until stable when None).

    Colours are content hashes, so histograms are comparable across graphs.
    """
    if rounds is not None and rounds < 0:
        raise ValueError("rounds must be >= 0")
    colors = initial_colors(g)
    limit = g.n if rounds is None else rounds
    for _ in range(limit):
        new = [
            _digest((colors[u], tuple(sorted(colors[v] for v in g.neighbors(u)))))
            for u in range(g.n)
        ]
        stable = len(set(new)) == len(set(colors))
        colors = new
        if rounds is None and stable:
            break
    return Counter(colors)


def wl_equivalent(g: Graph, h: Graph, rounds: int | None = None) -> bool:
    if g.n != h.n:
        return False
    if rounds is None:
        rounds = g.n
    return wl_colors(g, rounds) == wl_colors(h, rounds)


def spectrum(g: Graph) -> np.ndarray:
    return np.sort(np.linalg.eigvalsh(g.adjacency()))


def spectrally_distinct(g: Graph, h: Graph, tol: float = 1e-8) -> bool:
    """True certifies non-isomorphism (isomorphic graphs are cospectral)."""
    if g.n != h.n:
        return True
    return bool(np.max(np.abs(spectrum(g) - spectrum(h))) > tol)
