"""Node noise sampling, the channel-permutation pseudo-metric, and cover estimates."""

from __future__ import annotations

import csv
import itertools
import math
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

DISTRIBUTIONS = ("uniform01", "standard_normal")


class NoiseError(RuntimeError):
    pass


def _draw(rng, shape, dist):
    if dist == "uniform01":
        return rng.random(shape)
    if dist == "standard_normal":
        return rng.standard_normal(shape)
    raise ValueError(f"unknown noise distribution {dist!r}")


def noise_is_distinct(z: np.ndarray) -> bool:
    """Rows pairwise distinct and channel value-multisets pairwise distinct."""
    n, c = z.shape
    if n > 1 and len(np.unique(z, axis=0)) < n:
        return False
    if c > 1 and np.unique(np.sort(z, axis=0), axis=1).shape[1] < c:
        return False
    return True


def sample_noise_rng(rng, n: int, C: int, dist: str = "uniform01", max_tries: int = 100) -> np.ndarray:
    if n < 1 or C < 1:
        raise ValueError("need n >= 1 and C >= 1")
    for _ in range(max_tries):
        z = _draw(rng, (n, C), dist)
        if noise_is_distinct(z):
            return z
    raise NoiseError(f"no distinct noise after {max_tries} draws")


def sample_noise(n: int, C: int, seed, dist: str = "uniform01") -> np.ndarray:
    """An ``n x C`` noise matrix with distinct rows and distinct channel multisets."""
    return sample_noise_rng(np.random.default_rng(seed), n, C, dist)


# -------------------------------------------------------------------- metrics

def frobenius_distance(z1, z2) -> float:
    z1, z2 = np.asarray(z1), np.asarray(z2)
    if z1.shape != z2.shape:
        raise ValueError(f"shape mismatch {z1.shape} vs {z2.shape}")
    return float(np.sqrt(((z1 - z2) ** 2).sum()))


def channel_perm_distance(z1, z2) -> float:
    """min over column permutations s of ||z1 - z2[:, s]||_F, by optimal assignment."""
    z1, z2 = np.asarray(z1, dtype=np.float64), np.asarray(z2, dtype=np.float64)
    if z1.shape != z2.shape:
        raise ValueError(f"shape mismatch {z1.shape} vs {z2.shape}")
    # cost[i, j] = ||z1[:, i] - z2[:, j]||^2
    cost = (z1 ** 2).sum(0)[:, None] + (z2 ** 2).sum(0)[None, :] - 2.0 * z1.T @ z2
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(max(((z1[:, rows] - z2[:, cols]) ** 2).sum(), 0.0)))


def channel_perm_distance_brute(z1, z2) -> float:
    z1, z2 = np.asarray(z1), np.asarray(z2)
    if z1.shape != z2.shape:
        raise ValueError(f"shape mismatch {z1.shape} vs {z2.shape}")
    return min(frobenius_distance(z1, z2[:, list(p)]) for p in itertools.permutations(range(z1.shape[1])))


# Batched one-to-many distances used by the cover routines. Point sets are
# stacked as (N, n, C) arrays.

def _frob_to_many(point, others):
    return np.sqrt(((others - point) ** 2).sum(axis=(1, 2)))


def _perm_to_many(point, others):
    c = point.shape[1]
    if c <= 6:
        best = None
        for p in itertools.permutations(range(c)):
            d = ((others[:, :, list(p)] - point) ** 2).sum(axis=(1, 2))
            best = d if best is None else np.minimum(best, d)
        return np.sqrt(best)
    return np.array([channel_perm_distance(point, o) for o in others])


METRICS: dict[str, Callable] = {
    "frobenius": _frob_to_many,
    "channel_perm": _perm_to_many,
}


def _resolve(metric):
    if callable(metric):
        return lambda p, others: np.array([metric(p, o) for o in others])
    return METRICS[metric]


def greedy_cover(points: Sequence[np.ndarray], metric="channel_perm", r: float = 0.0,
                 order=None, return_centers: bool = False):
    """Size of a greedy r-net: scan points in order, open a centre at each uncovered one.

    The result is an upper bound on the covering number of the point set.
    """
    if r < 0:
        raise ValueError("radius must be non-negative")
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) == 0:
        raise ValueError("need at least one point")
    dist = _resolve(metric)
    order = np.arange(len(pts)) if order is None else np.asarray(order)
    covered = np.zeros(len(pts), dtype=bool)
    centers = []
    for i in order:
        if covered[i]:
            continue
        centers.append(int(i))
        covered |= dist(pts[i], pts) <= r
    return (len(centers), centers) if return_centers else len(centers)


def exact_cover(points: Sequence[np.ndarray], metric="channel_perm", r: float = 0.0) -> int:
    """Smallest number of centres (chosen among the points) covering all within r."""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) > 15:
        raise ValueError("exhaustive cover search is limited to 15 points")
    dist = _resolve(metric)
    within = np.stack([dist(p, pts) <= r for p in pts])
    for size in range(1, len(pts) + 1):
        for combo in itertools.combinations(range(len(pts)), size):
            if within[list(combo)].any(axis=0).all():
                return size
    return len(pts)


def mid_radius(points) -> float:
    """Geometric middle between the median nearest-neighbour distance and half the diameter."""
    flat = np.asarray(points, dtype=np.float64).reshape(len(points), -1)
    sq = (flat ** 2).sum(1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * flat @ flat.T, 0.0)
    np.fill_diagonal(d2, np.inf)
    nn = np.median(np.sqrt(d2.min(axis=1)))
    np.fill_diagonal(d2, 0.0)
    return float(np.sqrt(nn * np.sqrt(d2.max()) / 2))


def covering_ratio_experiment(n: int, C: int, samples: int, radii, seed, dist: str = "uniform01",
                              orders: int = 1) -> list[dict]:
    """Cover sizes of one uniform noise sample under the raw and channel-permutation metrics.

    Each radius is covered greedily under ``orders`` scan orders (the sample
    order first, then random shuffles shared by both metrics) and the smallest
    cover is kept. Any Frobenius r-cover is also a channel-permutation r-cover,
    so the raw cover bounds n_perm from above. ``radii`` may contain "mid"
    (see :func:`mid_radius`).
    """
    if C > 4:
        raise ValueError("orbit enumeration is restricted to C <= 4")
    if samples < 100:
        raise ValueError("need at least 100 samples")
    rng = np.random.default_rng(seed)
    pts = _draw(rng, (samples, n, C), dist)
    scan = [np.arange(samples)] + [rng.permutation(samples) for _ in range(orders - 1)]
    rows = []
    for r in radii:
        r = mid_radius(pts) if r == "mid" else float(r)
        n_raw = min(greedy_cover(pts, "frobenius", r, order=o) for o in scan)
        n_perm_greedy = min(greedy_cover(pts, "channel_perm", r, order=o) for o in scan)
        n_perm = min(n_perm_greedy, n_raw)
        rows.append({"radius": r, "n_raw": n_raw, "n_perm": n_perm, "ratio": n_perm / n_raw,
                     "n_perm_greedy": n_perm_greedy})
    return rows


def write_covering_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["radius", "n_raw", "n_perm", "ratio"])
        for row in rows:
            w.writerow([repr(row["radius"]), row["n_raw"], row["n_perm"], repr(row["ratio"])])


def orbit_size(C: int) -> int:
    return math.factorial(C)
