"""System parameters, torus geometry, rate functions and neighbor policies.

Units follow the usual convention of the model: meters for positions and
ranges, bits for data, seconds for time.  A rate function maps a distance
to a per-link transfer rate (bits/s); its *strength* is the rate summed
over the disc of radius ``R`` around a peer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np
from scipy import integrate

__all__ = [
    "DivergenceError",
    "TcpLike",
    "Constant",
    "TcpCapped",
    "TcpOffset",
    "TcpOverhead",
    "WirelessSnr",
    "RateFunction",
    "rate_from_name",
    "RATE_NAMES",
    "Range",
    "KNearest",
    "Generic",
    "NeighborPolicy",
    "SystemParams",
    "DimensionlessState",
    "torus_distance",
    "torus_delta",
    "eval_rate",
    "strength",
    "first_moment",
    "second_moment",
    "typical_range",
    "quad_moment",
    "dimensionless",
    "rescale_units",
    "EPS_FRACTION",
]

#: Minimum effective distance, as a fraction of the range, used where
#: the rate function is singular at r = 0.
EPS_FRACTION = 1e-6


class DivergenceError(ValueError):
    """Raised when a moment integral of a rate function is infinite."""


# ---------------------------------------------------------------------------
# Rate functions
# ---------------------------------------------------------------------------


class _Rate:
    """Shared behaviour of the rate-function variants."""

    name: str = ""
    kind: int = -1
    singular: bool = False

    def __call__(self, r):
        return self.eval(r)

    def eval(self, r):  # pragma: no cover - overridden
        raise NotImplementedError

    def support(self, R: float) -> float:
        """Largest distance at which the rate can be positive, capped by ``R``."""
        return R

    def normalized(self, R: float) -> "RateFunction":
        return self  # type: ignore[return-value]

    def kernel_params(self) -> tuple[int, float, float, float]:
        """(kind code, p1, p2, p3) understood by the simulation core."""
        raise NotImplementedError

    # moment integrals int_0^R r^k f(r) dr in closed form; ``None`` if unknown
    def _m1(self, R: float) -> Optional[float]:
        return None

    def _m2(self, R: float) -> Optional[float]:
        return None

    def scaled(self, meter: float, bit: float, second: float) -> "RateFunction":
        raise NotImplementedError


@dataclass(frozen=True)
class TcpLike(_Rate):
    """``f(r) = C / r``; C in bits s^-1 m."""

    C: float
    name = "tcp"
    kind = 0
    singular = True

    def __post_init__(self):
        _positive(C=self.C)

    def eval(self, r):
        return self.C / np.asarray(r, dtype=float) if np.ndim(r) else self.C / r

    def kernel_params(self):
        return self.kind, self.C, 0.0, 0.0

    def _m1(self, R):
        if math.isinf(R):
            raise DivergenceError("strength of C/r diverges for an infinite range")
        return self.C * R

    def _m2(self, R):
        if math.isinf(R):
            raise DivergenceError("traffic load intensity is infinite for C/r with R = inf")
        return self.C * R * R / 2.0

    def scaled(self, meter, bit, second):
        return TcpLike(self.C * bit * meter / second)


@dataclass(frozen=True)
class Constant(_Rate):
    """``f(r) = U``; every link gets the same bit rate."""

    U: float
    name = "constant"
    kind = 1

    def __post_init__(self):
        _positive(U=self.U)

    def eval(self, r):
        if np.ndim(r):
            return np.full(np.shape(r), self.U, dtype=float)
        return self.U

    def kernel_params(self):
        return self.kind, self.U, 0.0, 0.0

    def _m1(self, R):
        if math.isinf(R):
            raise DivergenceError("strength of a constant rate diverges for R = inf")
        return self.U * R * R / 2.0

    def _m2(self, R):
        if math.isinf(R):
            raise DivergenceError("traffic load intensity is infinite for a constant rate")
        return self.U * R**3 / 3.0

    def scaled(self, meter, bit, second):
        return Constant(self.U * bit / second)


@dataclass(frozen=True)
class TcpCapped(_Rate):
    """``f(r) = min(C / r, U)``: TCP with a per-flow limit."""

    C: float
    U: float
    name = "tcp-capped"
    kind = 2

    def __post_init__(self):
        _positive(C=self.C, U=self.U)

    def eval(self, r):
        if np.ndim(r):
            r = np.asarray(r, dtype=float)
            with np.errstate(divide="ignore"):
                return np.minimum(self.C / r, self.U)
        return self.U if r <= 0 else min(self.C / r, self.U)

    def normalized(self, R):
        # the cap binds on the whole disc: this is the constant-rate row
        if self.C >= self.U * R:
            return Constant(self.U)
        return self

    def kernel_params(self):
        return self.kind, self.C, self.U, 0.0

    def _knee(self, R):
        return min(self.C / self.U, R)

    def _m1(self, R):
        if math.isinf(R):
            raise DivergenceError("strength of min(C/r, U) diverges for R = inf")
        a = self._knee(R)
        return self.U * a * a / 2.0 + self.C * (R - a)

    def _m2(self, R):
        if math.isinf(R):
            raise DivergenceError("traffic load intensity is infinite for min(C/r, U)")
        a = self._knee(R)
        return self.U * a**3 / 3.0 + self.C * (R * R - a * a) / 2.0

    def scaled(self, meter, bit, second):
        return TcpCapped(self.C * bit * meter / second, self.U * bit / second)


@dataclass(frozen=True)
class TcpOffset(_Rate):
    """``f(r) = C / (r + q)``; q models the access-network delay (m)."""

    C: float
    q: float
    name = "tcp-offset"
    kind = 3

    def __post_init__(self):
        _positive(C=self.C, q=self.q)

    def eval(self, r):
        return self.C / (np.asarray(r, dtype=float) + self.q) if np.ndim(r) else self.C / (r + self.q)

    def kernel_params(self):
        return self.kind, self.C, self.q, 0.0

    def _m1(self, R):
        if math.isinf(R):
            raise DivergenceError("strength of C/(r+q) diverges for R = inf")
        q = self.q
        return self.C * (R - q * math.log1p(R / q))

    def _m2(self, R):
        if math.isinf(R):
            raise DivergenceError("traffic load intensity is infinite for C/(r+q)")
        q = self.q
        return self.C * (R * R / 2.0 - q * R + q * q * math.log1p(R / q))

    def scaled(self, meter, bit, second):
        return TcpOffset(self.C * bit * meter / second, self.q * meter)


@dataclass(frozen=True)
class TcpOverhead(_Rate):
    """``f(r) = max(C / r - o, 0)``; zero beyond ``C / o``."""

    C: float
    o: float
    name = "tcp-overhead"
    kind = 4
    singular = True

    def __post_init__(self):
        _positive(C=self.C, o=self.o)

    def eval(self, r):
        if np.ndim(r):
            r = np.asarray(r, dtype=float)
            with np.errstate(divide="ignore"):
                return np.maximum(self.C / r - self.o, 0.0)
        return max(self.C / r - self.o, 0.0)

    def support(self, R):
        return min(R, self.C / self.o)

    def kernel_params(self):
        return self.kind, self.C, self.o, 0.0

    def _m1(self, R):
        R = self.support(R)
        return R * (self.C - self.o * R / 2.0)

    def _m2(self, R):
        R = self.support(R)
        return self.C * R * R / 2.0 - self.o * R**3 / 3.0

    def scaled(self, meter, bit, second):
        return TcpOverhead(self.C * bit * meter / second, self.o * bit / second)


@dataclass(frozen=True)
class WirelessSnr(_Rate):
    """``f(r) = (B/2) ln(1 + C / r^alpha)``, Shannon capacity of an AWGN link.

    ``C`` carries units of m^alpha so that ``C / r^alpha`` is an SNR; ``B``
    (bits/s, default 1) only matters when rescaling units.
    """

    C: float
    alpha: float
    B: float = 1.0
    name = "wireless"
    kind = 5
    singular = True

    def __post_init__(self):
        _positive(C=self.C, alpha=self.alpha, B=self.B)

    def eval(self, r):
        if np.ndim(r):
            r = np.asarray(r, dtype=float)
            with np.errstate(divide="ignore"):
                return 0.5 * self.B * np.log1p(self.C * r ** (-self.alpha))
        return 0.5 * self.B * math.log1p(self.C * r ** (-self.alpha))

    def kernel_params(self):
        return self.kind, self.C, self.alpha, self.B

    def _m1(self, R):
        a, C = self.alpha, self.C
        if math.isinf(R):
            if a <= 2:
                raise DivergenceError(f"strength of the SNR rate diverges for alpha={a} <= 2")
            # 2 pi m1 = pi^2 C^(2/a) / (2 sin(2 pi / a))
            return self.B * math.pi * C ** (2.0 / a) / (4.0 * math.sin(2.0 * math.pi / a))
        if a == 4:
            R2 = R * R
            sc = math.sqrt(C)
            return 0.25 * self.B * (R2 * math.log1p(C / (R2 * R2)) + 2.0 * sc * math.atan(R2 / sc))
        return None

    def _m2(self, R):
        if math.isinf(R) and self.alpha <= 3:
            raise DivergenceError(
                f"traffic load intensity is infinite for the SNR rate with alpha={self.alpha} <= 3"
            )
        return None

    def scaled(self, meter, bit, second):
        return WirelessSnr(self.C * meter**self.alpha, self.alpha, self.B * bit / second)


RateFunction = Union[TcpLike, Constant, TcpCapped, TcpOffset, TcpOverhead, WirelessSnr]

RATE_NAMES = {
    # label: (class, required parameters, optional parameters)
    "tcp": (TcpLike, ("C",), ()),
    "constant": (Constant, ("U",), ()),
    "tcp-capped": (TcpCapped, ("C", "U"), ()),
    "tcp-offset": (TcpOffset, ("C", "q"), ()),
    "tcp-overhead": (TcpOverhead, ("C", "o"), ()),
    "wireless": (WirelessSnr, ("C", "alpha"), ("B",)),
}


def rate_from_name(name: str, **params: float) -> RateFunction:
    """Build a rate function from its config label, e.g. ``rate_from_name("tcp", C=1)``."""
    try:
        cls, required, optional = RATE_NAMES[name]
    except KeyError:
        raise ValueError(f"unknown rate function {name!r}; expected one of {sorted(RATE_NAMES)}") from None
    missing = [f for f in required if f not in params]
    extra = [k for k in params if k not in required + optional]
    if missing or extra:
        raise ValueError(
            f"rate {name!r} takes parameters {required + optional}; missing={missing} unexpected={extra}"
        )
    return cls(**{k: float(v) for k, v in params.items()})


def _positive(**kw):
    for k, v in kw.items():
        if not (v > 0) or math.isnan(v):
            raise ValueError(f"{k} must be strictly positive, got {v!r}")


# ---------------------------------------------------------------------------
# Neighbor policies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Range:
    """Connect to every peer within distance ``R``."""

    R: float

    def __post_init__(self):
        _positive(R=self.R)

    def p(self, r, beta=None):
        return (np.asarray(r) <= self.R).astype(float)

    def reach(self, beta=None) -> float:
        return self.R

    def as_generic(self) -> "Generic":
        R = self.R
        return Generic(lambda r, beta: 1.0 if r <= R else 0.0, reach=lambda beta: R)


@dataclass(frozen=True)
class KNearest:
    """Connect to the ``L`` nearest peers."""

    L: int

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 1:
            raise ValueError(f"L must be a positive integer, got {self.L!r}")

    def reach(self, beta: float) -> float:
        # the equivalent range: pi R^2 beta = L
        return math.sqrt(self.L / (math.pi * beta))

    def as_generic(self) -> "Generic":
        L = self.L
        return Generic(
            lambda r, beta: 1.0 if r <= math.sqrt(L / (math.pi * beta)) else 0.0,
            reach=lambda beta: math.sqrt(L / (math.pi * beta)),
        )


@dataclass(frozen=True)
class Generic:
    """Connection probability ``p(r, beta)`` in [0, 1].

    ``reach(beta)`` bounds the support of ``p`` (infinite when omitted); it
    only helps the quadrature and does not change the model.
    """

    p: Callable[[float, float], float]
    reach: Optional[Callable[[float], float]] = None


NeighborPolicy = Union[Range, KNearest, Generic]


# ---------------------------------------------------------------------------
# System parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SystemParams:
    """The basic model parameters.

    ``lam`` is the arrival intensity (m^-2 s^-1), ``file_size`` the mean
    size F (bits), ``range`` the peering range R (m; ``None`` under a degree
    policy).  ``torus_side`` defaults to ``10 * range``.  The rate function
    is normalized against ``range`` at construction.
    """

    lam: float
    file_size: float
    rate: RateFunction
    range: Optional[float] = 1.0
    torus_side: Optional[float] = None
    file_size_dist: str = "exponential"

    def __post_init__(self):
        _positive(lam=self.lam, file_size=self.file_size)
        if self.file_size_dist not in ("exponential", "constant"):
            raise ValueError(f"file_size_dist must be 'exponential' or 'constant', got {self.file_size_dist!r}")
        if self.range is not None:
            _positive(range=self.range)
            object.__setattr__(self, "rate", self.rate.normalized(self.range))
            if self.torus_side is None:
                object.__setattr__(self, "torus_side", 10.0 * self.range)
            elif not math.isinf(self.range) and self.torus_side < 10.0 * self.range * (1 - 1e-12):
                raise ValueError(
                    f"torus_side={self.torus_side} must be at least 10 * range = {10 * self.range}"
                )
        if self.torus_side is not None:
            _positive(torus_side=self.torus_side)

    @property
    def F(self) -> float:
        return self.file_size

    @property
    def R(self) -> Optional[float]:
        return self.range

    @property
    def eps_r(self) -> float:
        return EPS_FRACTION * (self.range if self.range and not math.isinf(self.range) else 1.0)

    def with_(self, **changes) -> "SystemParams":
        return replace(self, **changes)

    def is_basic(self) -> bool:
        return isinstance(self.rate, TcpLike) and self.range is not None and not math.isinf(self.range)


@dataclass(frozen=True)
class DimensionlessState:
    rho: Optional[float]
    n_f: float


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def torus_delta(a, b, side: float):
    """Minimal-image displacement ``b - a`` on a square torus (vectorized)."""
    d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    return d - side * np.round(d / side)


def torus_distance(a, b, side: float):
    """Euclidean distance between ``a`` and ``b`` on the torus ``[0, side)^2``."""
    d = np.abs(np.asarray(b, dtype=float) - np.asarray(a, dtype=float))
    d = np.minimum(d, side - d)
    out = np.sqrt(np.sum(d * d, axis=-1))
    return float(out) if np.ndim(out) == 0 else out


def eval_rate(f: RateFunction, r, eps: float = 0.0):
    """Evaluate ``f`` at distance ``r``; distances below ``eps`` are clamped."""
    if eps > 0:
        r = np.maximum(r, eps) if np.ndim(r) else max(r, eps)
    elif f.singular and np.any(np.asarray(r) <= 0):
        raise ValueError("rate function is singular at r = 0; pass eps > 0")
    return f.eval(r)


def quad_moment(f: RateFunction, R: float, order: int, weight: Optional[Callable[[float], float]] = None) -> float:
    """``int_0^R r^order f(r) w(r) dr`` by adaptive Gauss-Kronrod quadrature.

    The integration interval is split at the points where ``f`` has a kink
    and, for infinite ``R``, at a scale set by the rate parameters.
    """
    R = f.support(R)
    if weight is None:
        g = lambda r: r**order * f.eval(r) if r > 0 else _limit_at_zero(f, order)
    else:
        g = lambda r: (r**order * f.eval(r) * weight(r)) if r > 0 else 0.0
    kw = dict(epsabs=0.0, epsrel=1e-13, limit=1000)
    breaks = [0.0]
    if isinstance(f, TcpCapped):
        breaks.append(f.C / f.U)
    if isinstance(f, WirelessSnr):
        breaks.append(f.C ** (1.0 / f.alpha))
    if isinstance(f, TcpOffset):
        breaks.append(f.q)
    if math.isinf(R):
        scale = max(breaks[1:] or [1.0])
        pieces = sorted(set(b for b in breaks if b < scale)) + [scale]
        total = 0.0
        for lo, hi in zip(pieces[:-1], pieces[1:]):
            total += integrate.quad(g, lo, hi, **kw)[0]
        val, err = integrate.quad(g, scale, math.inf, **kw)
        if not math.isfinite(val) or (err > 1e-6 * abs(val) and abs(val) > 0):
            raise DivergenceError("moment integral does not converge")
        return total + val
    pieces = sorted(set(b for b in breaks if b < R)) + [R]
    total = 0.0
    for lo, hi in zip(pieces[:-1], pieces[1:]):
        total += integrate.quad(g, lo, hi, **kw)[0]
    return total


def _limit_at_zero(f, order):
    if order >= 1 and isinstance(f, (TcpLike, TcpOverhead)):
        return f.C if order == 1 else 0.0
    if isinstance(f, WirelessSnr):
        return 0.0
    return 0.0 if order >= 1 else float(f.eval(0.0))


def first_moment(f: RateFunction, R: float) -> float:
    """``int_0^R r f(r) dr``, closed form when one is known."""
    m = f._m1(R)
    if m is None:
        m = quad_moment(f, R, 1)
    return m


def second_moment(f: RateFunction, R: float) -> float:
    """``int_0^R r^2 f(r) dr``, closed form when one is known."""
    m = f._m2(R)
    if m is None:
        m = quad_moment(f, R, 2)
    return m


def strength(f: RateFunction, R: float) -> float:
    """Strength ``gamma = 2 pi int_0^R r f(r) dr`` (bits s^-1 m^2).

    Raises :class:`DivergenceError` when the integral is infinite, e.g. for
    ``C/r`` with ``R = inf``.
    """
    if not R > 0:
        raise ValueError(f"R must be positive, got {R!r}")
    return 2.0 * math.pi * first_moment(f, R)


def typical_range(f: RateFunction, R: float = math.inf) -> float:
    """Rate-weighted mean link length ``int r^2 f / int r f`` over ``(0, R)``."""
    return second_moment(f, R) / first_moment(f, R)


def dimensionless(params: SystemParams) -> DimensionlessState:
    """Reduce the basic model to its single dimensionless parameter.

    For ``C/r`` with a finite range, ``rho = lam F R^3 / C`` and the fluid
    neighbor count is ``sqrt(pi/2) sqrt(rho)``.  Other rate functions only get
    ``n_f = pi R^2 beta_f`` (R replaced by the typical range when infinite).
    """
    if params.is_basic():
        rho = params.lam * params.file_size * params.range**3 / params.rate.C
        return DimensionlessState(rho=rho, n_f=math.sqrt(math.pi / 2.0) * math.sqrt(rho))
    if params.range is None:
        raise ValueError("dimensionless state needs a range")
    R = params.range
    gamma = strength(params.rate, R)
    beta_f = math.sqrt(params.lam * params.file_size / gamma)
    if math.isinf(R):
        R = typical_range(params.rate, R)
    return DimensionlessState(rho=None, n_f=math.pi * R * R * beta_f)


def rescale_units(params: SystemParams, meter_factor: float, bit_factor: float, second_factor: float) -> SystemParams:
    """Express ``params`` in new units.

    One old meter becomes ``meter_factor`` new meters (likewise for bits and
    seconds), so a length ``x`` becomes ``x * meter_factor`` and an intensity
    in m^-2 s^-1 is divided by ``meter_factor**2 * second_factor``.
    """
    _positive(meter_factor=meter_factor, bit_factor=bit_factor, second_factor=second_factor)
    m, b, s = meter_factor, bit_factor, second_factor
    return replace(
        params,
        lam=params.lam / (m * m * s),
        file_size=params.file_size * b,
        rate=params.rate.scaled(m, b, s),
        range=None if params.range is None else params.range * m,
        torus_side=None if params.torus_side is None else params.torus_side * m,
    )
