import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from engnn.noise import (NoiseError, channel_perm_distance, channel_perm_distance_brute, covering_ratio_experiment,
                         exact_cover, frobenius_distance, greedy_cover, noise_is_distinct, sample_noise,
                         sample_noise_rng, write_covering_csv)

mats = st.integers(0, 10 ** 6).flatmap(
    lambda s: st.tuples(st.just(s), st.integers(1, 6), st.integers(1, 5)))


def test_sample_noise_contract():
    z = sample_noise(5, 3, seed=0)
    assert z.shape == (5, 3)
    assert np.array_equal(z, sample_noise(5, 3, seed=0))
    assert sample_noise(4, 2, 1, "standard_normal").min() < 0


def test_no_channel_collisions():
    rng = np.random.default_rng(0)
    assert all(noise_is_distinct(sample_noise_rng(rng, 8, 4)) for _ in range(1000))


def test_distinctness_check():
    z = np.random.default_rng(1).random((3, 8))  # more channels than nodes
    assert noise_is_distinct(z)
    dup = z.copy()
    dup[:, 5] = z[::-1, 2]  # same value multiset as channel 2
    assert not noise_is_distinct(dup)
    dup = z.copy()
    dup[2] = dup[0]
    assert not noise_is_distinct(dup)


def test_resample_guard():
    class Stuck:
        def random(self, shape):
            return np.zeros(shape)
    with pytest.raises(NoiseError):
        sample_noise_rng(Stuck(), 3, 2)
    with pytest.raises(ValueError):
        sample_noise(0, 2, 0)


def test_distance_examples(rng):
    z = rng.random((6, 4))
    assert channel_perm_distance(z, z[:, [2, 0, 3, 1]]) == pytest.approx(0.0, abs=1e-12)
    assert channel_perm_distance(z, z) == 0.0
    with pytest.raises(ValueError):
        channel_perm_distance(z, z[:, :3])


@given(mats)
def test_assignment_equals_brute_force(params):
    seed, n, c = params
    rng = np.random.default_rng(seed)
    a, b = rng.random((n, c)), rng.random((n, c))
    assert channel_perm_distance(a, b) == pytest.approx(channel_perm_distance_brute(a, b), abs=1e-9)


@given(mats)
def test_pseudo_metric_axioms(params):
    seed, n, c = params
    rng = np.random.default_rng(seed)
    a, b, d = rng.random((n, c)), rng.random((n, c)), rng.random((n, c))
    assert abs(channel_perm_distance(a, b) - channel_perm_distance(b, a)) < 1e-12
    assert channel_perm_distance(a, d) <= channel_perm_distance(a, b) + channel_perm_distance(b, d) + 1e-9
    assert channel_perm_distance(a, b) <= frobenius_distance(a, b) + 1e-12
    p = rng.permutation(n)
    assert channel_perm_distance(a[p], b[p]) == pytest.approx(channel_perm_distance(a, b), abs=1e-12)


def test_greedy_cover_examples(rng):
    pts = rng.random((40, 3, 2))
    diam = max(frobenius_distance(p, q) for p, q in itertools.combinations(pts, 2))
    assert greedy_cover(pts, "frobenius", diam) == 1
    assert greedy_cover(pts, "frobenius", 0.0) == 40
    radii = np.linspace(0, diam, 12)
    sizes = [greedy_cover(pts, "channel_perm", r) for r in radii]
    assert all(x >= y for x, y in zip(sizes, sizes[1:]))
    for r in radii:
        assert greedy_cover(pts, "channel_perm", r) <= greedy_cover(pts, "frobenius", r)


def test_exact_cover_is_a_lower_bound(rng):
    pts = rng.random((12, 2, 2))
    for r in (0.2, 0.4, 0.7):
        for metric in ("frobenius", "channel_perm"):
            assert exact_cover(pts, metric, r) <= greedy_cover(pts, metric, r)
        assert exact_cover(pts, "channel_perm", r) <= exact_cover(pts, "frobenius", r)
    with pytest.raises(ValueError):
        exact_cover(rng.random((16, 2, 2)), "frobenius", 0.1)


def test_callable_metric_matches_builtin(rng):
    pts = rng.random((30, 2, 3))
    assert greedy_cover(pts, channel_perm_distance, 0.5) == greedy_cover(pts, "channel_perm", 0.5)


def test_covering_experiment_inequality_and_trivial_group(tmp_path):
    radii = [0.05, 0.1, 0.2, 0.4, 0.8, 1.2, "mid"]
    for C in (1, 2, 3):
        for seed in range(3):
            rows = covering_ratio_experiment(2, C, 300, radii, seed)
            assert all(r["n_perm"] <= r["n_raw"] for r in rows)
            if C == 1:
                assert all(r["ratio"] == 1.0 for r in rows)
    write_covering_csv(tmp_path / "c.csv", rows)
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "radius,n_raw,n_perm,ratio"
    with pytest.raises(ValueError):
        covering_ratio_experiment(2, 5, 300, [0.1], 0)
    with pytest.raises(ValueError):
        covering_ratio_experiment(2, 2, 50, [0.1], 0)


def test_ratio_shrinks_with_channels():
    ratios = []
    for C in (1, 2, 3):
        rows = covering_ratio_experiment(2, C, 600, ["mid"], 0, orders=4)
        ratios.append(rows[0]["ratio"])
    assert ratios[0] == 1.0
    assert ratios[0] >= ratios[1] >= ratios[2]
    assert ratios[2] < ratios[1] and ratios[2] >= 1 / math.factorial(3) - 0.1
