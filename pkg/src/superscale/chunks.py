"""Chunk efficiency fixed points (many-to-one) and the one-to-one lower bound."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse

__all__ = [
    "DegenerateSystemError",
    "EfficiencyProfile",
    "z",
    "ratio_matrix",
    "many_to_one_map",
    "eta_many_to_one",
    "eta_one_to_one_bound",
    "chunk_latency",
    "harmonic_mean",
]


class DegenerateSystemError(ValueError):
    """The chunk system has no positive solution (e.g. K = 1 without seeders)."""


@dataclass(frozen=True)
class EfficiencyProfile:
    eta_by_class: np.ndarray
    eta_harmonic: float
    is_lower_bound: bool = False
    iterations: int = 0

    @property
    def K(self) -> int:
        return len(self.eta_by_class)


def harmonic_mean(eta) -> float:
    eta = np.asarray(eta, dtype=float)
    if np.any(eta <= 0):
        return 0.0
    return len(eta) / float(np.sum(1.0 / eta))


def z(k: int, j: int, K: int) -> float:
    """Probability that a class-``j`` neighbor holds a chunk a class-``k`` peer lacks.

    ``1 - C(k, j) / C(K, j)``, with the binomial ratio taken as a running
    product so that large ``K`` never overflows.
    """
    if not (0 <= k <= K and 0 <= j <= K):
        raise ValueError(f"classes must lie in [0, K]; got k={k}, j={j}, K={K}")
    if j > k:
        return 1.0
    ratio = 1.0
    for i in range(j):
        ratio *= (k - i) / (K - i)
        if ratio == 0.0:
            break
    return 1.0 - ratio


def ratio_matrix(K: int, cutoff: float = 1e-300, block: int = 256) -> sparse.csr_matrix:
    """Sparse ``K x K`` matrix of ``C(k, j) / C(K, j)``.

    Entries below ``cutoff`` are dropped; for a row ``k = K - m`` the ratio
    decays roughly like ``exp(-j m / K)``, so the kept pattern has about
    ``K log K`` entries.
    """
    i = np.arange(K, dtype=float)
    rows, cols, vals = [], [], []
    for start in range(0, K, block):
        k = np.arange(start, min(start + block, K), dtype=float)[:, None]
        # factor for step i: (k - i) / (K - i), clipped at 0 once i >= k
        fac = np.clip(k - i[None, :], 0.0, None) / (K - i[None, :])
        with np.errstate(under="ignore"):
            prod = np.cumprod(fac, axis=1)
        # ratio(k, 0) = 1, ratio(k, j) = prod[:, j-1]
        r = np.empty_like(prod)
        r[:, 0] = 1.0
        r[:, 1:] = prod[:, :-1]
        rr, cc = np.nonzero(r > cutoff)
        rows.append(rr + start)
        cols.append(cc)
        vals.append(r[rr, cc])
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(K, K)
    )


def many_to_one_map(eta: np.ndarray, ratio: sparse.csr_matrix) -> np.ndarray:
    """``T(eta)_k = (1/K) sum_j z(k, j) / eta_j``."""
    inv = 1.0 / eta
    K = len(eta)
    return (inv.sum() - ratio @ inv) / K


def eta_many_to_one(K: int, damping: float = 0.5, tol: float = 1e-12, max_iter: int = 100_000, start=None) -> EfficiencyProfile:
    """Per-class efficiencies under many-to-one scheduling.

    Damped fixed-point iteration ``eta <- (1-d) eta + d T(eta)`` from
    ``eta = 1`` (or ``start``), stopped when no class moves by more than
    ``tol``.
    """
    K = int(K)
    if K < 1:
        raise ValueError("K must be >= 1")
    if K == 1:
        raise DegenerateSystemError("K = 1: class 0 can never download; seeders are needed to bootstrap")
    R = ratio_matrix(K)
    eta = np.ones(K) if start is None else np.array(start, dtype=float)
    if eta.shape != (K,) or np.any(eta <= 0):
        raise ValueError("start must be a positive vector of length K")
    for it in range(1, max_iter + 1):
        new = (1.0 - damping) * eta + damping * many_to_one_map(eta, R)
        delta = np.max(np.abs(new - eta))
        eta = new
        if delta < tol:
            break
    else:
        raise RuntimeError(f"many-to-one fixed point did not converge in {max_iter} iterations")
    if np.any(eta <= 0):
        raise DegenerateSystemError("fixed point has a nonpositive class efficiency")
    eta.setflags(write=False)
    return EfficiencyProfile(eta, harmonic_mean(eta), False, it)


def eta_one_to_one_bound(K: int, n_f: float) -> EfficiencyProfile:
    """Lower bound on the one-to-one efficiencies, ``N_c`` replaced by ``N_f``.

    ``eta_k >= ((K-k)/N_f) (1 - (1 - 1/(K-k))^N_f)``, capped at 1.
    """
    if K < 2:
        raise ValueError("K must be >= 2")
    if not n_f > 0:
        raise ValueError("n_f must be positive")
    m = K - np.arange(K, dtype=float)
    with np.errstate(divide="ignore"):
        got = -np.expm1(n_f * np.log1p(-1.0 / m))
    eta = np.minimum(m / n_f * got, 1.0)
    eta.setflags(write=False)
    return EfficiencyProfile(eta, harmonic_mean(eta), True, 0)


def chunk_latency(w_f: float, profile: EfficiencyProfile) -> float:
    """Latency ``W_f / eta``; ``inf`` when the efficiency is zero."""
    if profile.eta_harmonic <= 0:
        return math.inf
    return w_f / profile.eta_harmonic
