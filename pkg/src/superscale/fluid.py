"""Closed-form predictions: toy model, fluid limit, heuristic M and extensions."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

from scipy import integrate

from .model import (
    Constant,
    DivergenceError,
    Generic,
    KNearest,
    Range,
    RateFunction,
    SystemParams,
    TcpLike,
    strength,
)

__all__ = [
    "FluidSolution",
    "ExtensionParams",
    "HeuristicM",
    "ToyModel",
    "LatencyPrediction",
    "ServersLatency",
    "Abandonment",
    "AccessCheck",
    "DegreeLimited",
    "toy_model",
    "fluid_solution",
    "heuristic_m",
    "heuristic_m_residual",
    "heuristic_m_constant_rate",
    "latency_prediction",
    "servers_latency",
    "abandonment",
    "seeder_latency",
    "access_check",
    "degree_limited",
    "overlay_gamma",
    "bisect_increasing",
    "SERVER_HARDCORE_CHI",
]

#: chi at and above which the servers-dominated formula is used.
SERVER_HARDCORE_CHI = 10.0


@dataclass(frozen=True)
class FluidSolution:
    beta_f: float
    mu_f: float
    w_f: float
    n_f: float
    gamma: float


@dataclass(frozen=True)
class ExtensionParams:
    """Optional knobs layered on top of the basic model.

    ``server_rate_density`` is U_C (bits s^-1 m^-2), ``abandonment_rate`` is
    a (s^-1), ``seed_time`` is T_S (s), ``degree`` is L and ``upload_cap`` is
    U (bits/s).  Zero or ``None`` disables a knob.
    """

    server_rate_density: float = 0.0
    abandonment_rate: float = 0.0
    seed_time: float = 0.0
    degree: Optional[int] = None
    upload_cap: Optional[float] = None

    def __post_init__(self):
        for name in ("server_rate_density", "abandonment_rate", "seed_time"):
            v = getattr(self, name)
            if v < 0 or math.isnan(v):
                raise ValueError(f"{name} must be nonnegative, got {v!r}")
        if self.degree is not None and (int(self.degree) != self.degree or self.degree < 1):
            raise ValueError(f"degree must be a positive integer, got {self.degree!r}")
        if self.upload_cap is not None and not self.upload_cap > 0:
            raise ValueError(f"upload_cap must be positive, got {self.upload_cap!r}")


@dataclass(frozen=True)
class HeuristicM:
    n_f: float
    m_hat: float


@dataclass(frozen=True)
class ToyModel:
    N_exact: float
    W_exact: float
    N_approx: float
    W_approx: float
    W_access: float


def toy_model(lambda_total: float, F: float, U: float) -> ToyModel:
    """Complete-graph toy model with per-link bandwidth ``U``.

    ``W_access`` is the access-bottleneck reference ``F / U``, which does not
    depend on the arrival rate.
    """
    for v in (lambda_total, F, U):
        if not v > 0:
            raise ValueError("toy model parameters must be positive")
    x = lambda_total * F / U
    n = math.sqrt(x + 0.25) + 0.5
    return ToyModel(
        N_exact=n,
        W_exact=n / lambda_total,
        N_approx=math.sqrt(x),
        W_approx=math.sqrt(F / (lambda_total * U)),
        W_access=F / U,
    )


def fluid_solution(params: SystemParams, gamma: Optional[float] = None) -> FluidSolution:
    """Fluid-limit density, rate and latency.

    ``gamma`` overrides the strength computed from ``params.rate`` and
    ``params.range``.
    """
    if gamma is None:
        if params.range is None:
            raise ValueError("fluid_solution needs a range; use degree_limited for a degree policy")
        gamma = strength(params.rate, params.range)
    lf = params.lam * params.file_size
    beta_f = math.sqrt(lf / gamma)
    mu_f = math.sqrt(lf * gamma)
    w_f = math.sqrt(params.file_size / (params.lam * gamma))
    R = params.range if params.range is not None else math.nan
    return FluidSolution(beta_f=beta_f, mu_f=mu_f, w_f=w_f, n_f=math.pi * R * R * beta_f, gamma=gamma)


# ---------------------------------------------------------------------------
# Heuristic M
# ---------------------------------------------------------------------------


def _one_minus_log1p_ratio(x: float) -> float:
    """``1 - ln(1 + x) / x`` without cancellation for small ``x``."""
    if x < 1e-3:
        # alternating series sum_{k>=1} (-1)^(k+1) x^k / (k+1)
        total, term = 0.0, 1.0
        for k in range(1, 12):
            term *= x
            total += (term if k % 2 else -term) / (k + 1)
        return total
    return 1.0 - math.log1p(x) / x


def heuristic_m_residual(m: float, n_f: float) -> float:
    """``M^2 (1 - (M / 2N) ln(1 + 2N / M)) - 1``."""
    return m * m * _one_minus_log1p_ratio(2.0 * n_f / m) - 1.0


def bisect_increasing(g: Callable[[float], float], lo: float, hi: float, xtol: float = 1e-12, rtol: float = 1e-15, grow: float = 2.0, max_iter: int = 2000) -> float:
    """Root of a nondecreasing ``g`` with ``g(lo) <= 0``.

    ``hi`` is grown geometrically until ``g(hi) >= 0``; then plain bisection
    until the bracket is narrower than ``xtol + rtol * |x|``.
    """
    glo = g(lo)
    if glo > 0:
        raise ValueError("g(lo) must be <= 0")
    if glo == 0:
        return lo
    ghi = g(hi)
    n = 0
    while ghi < 0:
        lo, hi = hi, lo + (hi - lo) * grow
        ghi = g(hi)
        n += 1
        if n > 4000 or math.isinf(hi):
            raise RuntimeError("failed to bracket the root")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if hi - lo <= xtol + rtol * abs(mid):
            break
        if g(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def heuristic_m(n_f: float) -> float:
    """Heuristic latency multiplier ``M_hat(N_f)``, the root in ``[1, inf)``."""
    if not n_f > 0:
        raise ValueError(f"n_f must be positive, got {n_f!r}")
    g = lambda m: heuristic_m_residual(m, n_f)
    hi = 1.0 + 10.0 * 2.0 / n_f
    m = bisect_increasing(g, 1.0, hi, xtol=0.0, rtol=1e-15)
    return m


def heuristic_m_constant_rate(n_f: float) -> float:
    """Closed-form ``M_hat`` for a constant rate function."""
    if not n_f > 0:
        raise ValueError(f"n_f must be positive, got {n_f!r}")
    h = 1.0 / (2.0 * n_f)
    return math.sqrt(1.0 + h * h) + h


@dataclass(frozen=True)
class LatencyPrediction:
    w_f: float
    beta_f: float
    n_f: float
    m_hat: Optional[float]
    w_o: Optional[float]
    beta_o: Optional[float]
    note: str = ""


def latency_prediction(params: SystemParams) -> LatencyPrediction:
    """Fluid latency corrected by the heuristic multiplier when one exists.

    Only ``C/r`` and constant rates with a finite range have an ``M_hat``;
    other cases return the fluid values with ``m_hat=None`` and a note.
    """
    fs = fluid_solution(params)
    finite = params.range is not None and not math.isinf(params.range)
    if finite and isinstance(params.rate, TcpLike):
        m = heuristic_m(fs.n_f)
    elif finite and isinstance(params.rate, Constant):
        m = heuristic_m_constant_rate(fs.n_f)
    else:
        return LatencyPrediction(fs.w_f, fs.beta_f, fs.n_f, None, None, None, note="M unavailable")
    return LatencyPrediction(fs.w_f, fs.beta_f, fs.n_f, m, m * fs.w_f, m * fs.beta_f)


# ---------------------------------------------------------------------------
# Extensions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ServersLatency:
    chi: float
    w: Optional[float]
    regime: str
    w_fluid: Optional[float] = None
    w_servers: Optional[float] = None


def servers_latency(params: SystemParams, U_C: float, hardcore_chi: float = SERVER_HARDCORE_CHI) -> ServersLatency:
    """Latency with permanent servers of bit-rate density ``U_C``.

    Below ``chi = 1`` the P2P fluid formula ``W_f sqrt(1 - chi)`` applies; at
    ``chi >= hardcore_chi`` servers do the work and ``W = F / (pi R^2 U_C)``.
    In between only the two single-resource values are returned, with
    ``regime="ambiguous"`` and ``w=None``.
    """
    if U_C < 0:
        raise ValueError("U_C must be nonnegative")
    fs = fluid_solution(params)
    chi = U_C / (params.lam * params.file_size)
    R = params.range
    w_srv = params.file_size / (math.pi * R * R * U_C) if U_C > 0 else math.inf
    if chi < 1.0:
        w = fs.w_f * math.sqrt(1.0 - chi)
        return ServersLatency(chi, w, "p2p", w_fluid=w, w_servers=w_srv)
    if chi >= hardcore_chi:
        return ServersLatency(chi, w_srv, "servers", w_fluid=None, w_servers=w_srv)
    return ServersLatency(chi, None, "ambiguous", w_fluid=fs.w_f, w_servers=w_srv)


@dataclass(frozen=True)
class Abandonment:
    mu_f: float
    abandonment_ratio: float


def abandonment(params: SystemParams, a: float, gamma: Optional[float] = None) -> Abandonment:
    """Fluid rate and fraction of leechers that give up, at abandonment rate ``a``."""
    if a < 0:
        raise ValueError("abandonment rate must be nonnegative")
    if gamma is None:
        gamma = strength(params.rate, params.range)
    F = params.file_size
    half = 0.5 * a * F
    mu = math.sqrt(params.lam * F * gamma + half * half) - half
    return Abandonment(mu_f=mu, abandonment_ratio=a * F / (mu + a * F))


def seeder_latency(w_f: float, T_S: float) -> float:
    """Leecher latency when finished peers seed for ``T_S`` seconds."""
    if T_S < 0:
        raise ValueError("T_S must be nonnegative")
    half = 0.5 * T_S
    if half > 1e8 * w_f:
        return w_f * w_f / T_S
    return math.sqrt(w_f * w_f + half * half) - half


@dataclass(frozen=True)
class AccessCheck:
    feasible: bool
    mu_f: float
    required_U: float
    dimensioned_R: Optional[float]


def access_check(params: SystemParams, U: float) -> AccessCheck:
    """Is an upload capacity ``U`` enough to sustain the fluid rate?

    For ``C/r`` also returns the range ``U^2 / (2 pi lam F C)`` that uses all
    of ``U``; other rate functions get ``dimensioned_R=None``.
    """
    if not U > 0:
        raise ValueError("U must be positive")
    fs = fluid_solution(params)
    dim_R = None
    if isinstance(params.rate, TcpLike):
        dim_R = U * U / (params.lam * params.file_size * 2.0 * math.pi * params.rate.C)
    return AccessCheck(feasible=fs.mu_f <= U, mu_f=fs.mu_f, required_U=fs.mu_f, dimensioned_R=dim_R)


@dataclass(frozen=True)
class DegreeLimited:
    beta: float
    w: float
    R: float
    gamma: float


def degree_limited(params: SystemParams, L: int, rtol: float = 1e-13) -> DegreeLimited:
    """Fluid density and latency when every peer links to its ``L`` nearest peers.

    Solves ``beta^2 gamma(beta) = lam F`` where ``gamma(beta)`` is the strength
    at the equivalent range ``sqrt(L / (pi beta))``.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    lf = params.lam * params.file_size
    f = params.rate
    pol = KNearest(int(L))

    def g(logb: float) -> float:
        b = math.exp(logb)
        return math.log(b * b * strength(f, pol.reach(b))) - math.log(lf)

    # start from the C/r-like scaling guess and bracket in log-space
    lo = -1.0
    while g(lo) > 0:
        lo -= 8.0
    logb = bisect_increasing(g, lo, lo + 1.0, xtol=rtol, rtol=0.0, grow=2.0)
    beta = math.exp(logb)
    R = pol.reach(beta)
    return DegreeLimited(beta=beta, w=beta / params.lam, R=R, gamma=strength(f, R))


def overlay_gamma(f: RateFunction, policy, beta: float) -> float:
    """Strength under a general overlay, ``2 pi int r f(r) p(r, beta) dr``."""
    if isinstance(policy, (Range, KNearest)):
        policy = policy.as_generic()
    if not isinstance(policy, Generic):
        raise TypeError(f"unsupported policy {policy!r}")
    upper = policy.reach(beta) if policy.reach is not None else math.inf
    upper = f.support(upper)

    def integrand(r):
        if r <= 0:
            return 0.0
        return r * f.eval(r) * policy.p(r, beta)

    kw = dict(epsabs=0.0, epsrel=1e-13, limit=1000)
    val, err = integrate.quad(integrand, 0.0, upper, **kw)
    if not math.isfinite(val) or (math.isinf(upper) and err > 1e-6 * max(abs(val), 1e-300)):
        raise DivergenceError("overlay strength integral does not converge")
    return 2.0 * math.pi * val
