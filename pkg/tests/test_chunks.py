import math
from math import comb

import numpy as np
import pytest

from superscale.chunks import (
    DegenerateSystemError,
    EfficiencyProfile,
    chunk_latency,
    eta_many_to_one,
    eta_one_to_one_bound,
    harmonic_mean,
    ratio_matrix,
    z,
)


def test_z_examples():
    assert z(1, 1, 2) == 0.5
    for K in range(1, 65):
        for k in range(K):
            assert z(k, 0, K) == 0.0
        for j in range(1, K):
            assert z(0, j, K) == 1.0


def test_z_matches_exact_binomials():
    for K in (5, 17, 40):
        for k in range(K):
            for j in range(K):
                exact = 1.0 - comb(k, j) / comb(K, j)
                assert z(k, j, K) == pytest.approx(exact, abs=1e-13)


def test_z_no_overflow_for_large_K():
    assert 0.0 <= z(9_000, 5_000, 10_000) <= 1.0


def test_ratio_matrix_matches_z():
    K = 30
    M = ratio_matrix(K).toarray()
    for k in range(K):
        for j in range(K):
            assert 1.0 - M[k, j] == pytest.approx(z(k, j, K), abs=1e-13)


def test_many_to_one_K2_hand_solution():
    p = eta_many_to_one(2)
    assert p.eta_by_class == pytest.approx([1.0, 0.5], abs=1e-12)
    assert p.eta_harmonic == pytest.approx(2 / 3, abs=1e-12)


def test_many_to_one_K1_is_degenerate():
    with pytest.raises(DegenerateSystemError):
        eta_many_to_one(1)


def residual(p: EfficiencyProfile) -> float:
    K = p.K
    eta = np.asarray(p.eta_by_class)
    zz = 1.0 - ratio_matrix(K, cutoff=0.0).toarray()
    return float(np.max(np.abs(eta - zz @ (1.0 / eta) / K)))


@pytest.mark.parametrize("K", [2, 3, 5, 8, 16, 32, 64, 128, 256, 512, 1024])
def test_many_to_one_residual_and_range(K):
    p = eta_many_to_one(K)
    assert residual(p) < 1e-10
    assert np.all(p.eta_by_class > 0)
    # the harmonic mean is an efficiency; single classes may exceed one slightly
    assert p.eta_harmonic <= 1.0 + 1e-12


def test_many_to_one_monotone_and_tends_to_one():
    Ks = [2**i for i in range(1, 11)]
    etas = [eta_many_to_one(K).eta_harmonic for K in Ks]
    assert np.all(np.diff(etas) > 0)
    assert 0.95 < eta_many_to_one(10_000).eta_harmonic <= 1.0


def test_many_to_one_start_independence():
    for K in (4, 50, 300):
        a = eta_many_to_one(K)
        b = eta_many_to_one(K, start=np.full(K, 0.1))
        np.testing.assert_allclose(a.eta_by_class, b.eta_by_class, atol=1e-10)


def test_many_to_one_profile_flattens():
    # most classes approach one; only the last few stay far away
    near = [np.mean(np.abs(eta_many_to_one(K).eta_by_class - 1) < 0.05) for K in (16, 128, 1024)]
    assert near[0] < near[1] < near[2]
    assert near[2] > 0.95


def test_one_to_one_bound_examples():
    K, n = 20, 7.0
    p = eta_one_to_one_bound(K, n)
    assert p.is_lower_bound
    assert p.eta_by_class[-1] == pytest.approx(1 / n)
    assert eta_one_to_one_bound(K, 0.5).eta_by_class[-1] == 1.0
    big = eta_one_to_one_bound(K, 1e9)
    assert np.all(big.eta_by_class < 1e-7)
    n = 3.0
    K = 301
    # K - k = 100 n for k = 1
    assert eta_one_to_one_bound(K, n).eta_by_class[1] == pytest.approx(1.0, rel=0.01)


def test_one_to_one_bound_formula():
    K, n = 12, 5.5
    p = eta_one_to_one_bound(K, n)
    for k in range(K):
        m = K - k
        assert p.eta_by_class[k] == pytest.approx(min(m / n * (1 - (1 - 1 / m) ** n), 1.0), rel=1e-13)
    assert np.all(p.eta_by_class <= 1.0)


def test_bound_below_many_to_one():
    for K in (10, 50, 200):
        assert eta_one_to_one_bound(K, 40.0).eta_harmonic < eta_many_to_one(K).eta_harmonic


def test_chunk_latency():
    assert chunk_latency(2.0, EfficiencyProfile(np.ones(4), 1.0)) == 2.0
    assert chunk_latency(1.0, eta_many_to_one(2)) == pytest.approx(1.5, rel=1e-11)
    assert chunk_latency(1.0, EfficiencyProfile(np.zeros(3), 0.0)) == math.inf
    b = eta_one_to_one_bound(50, 40.0)
    assert chunk_latency(1.0, b) >= chunk_latency(1.0, eta_many_to_one(50))


def test_harmonic_mean():
    assert harmonic_mean([1.0, 0.5]) == pytest.approx(2 / 3)
    assert harmonic_mean([1.0, 0.0]) == 0.0
