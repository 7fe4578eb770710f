"""Rate, sieve-schedule and entropy calculators, plus a tail-decay checker.

All constants that the underlying results only assert to exist are explicit
arguments defaulting to 1.  Every function is pure.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .gen_density import SieveSpec


@dataclass(frozen=True)
class SmoothnessParams:
    """Smoothness ``beta``, dimension ``d`` and tail constants ``tau0..tau3``."""

    beta: float
    d: int
    tau0: float = 0.0
    tau1: float = 1.0
    tau2: float = 1.0
    tau3: float = 1.0

    def __post_init__(self):
        if not self.beta > 0:
            raise DomainError("beta must be positive")
        if int(self.d) != self.d or self.d < 1:
            raise DomainError("d must be a positive integer")
        if self.tau0 < 0 or not (self.tau1 > 0 and self.tau2 > 0 and self.tau3 > 0):
            raise DomainError("need tau0 >= 0 and tau1, tau2, tau3 > 0")


@dataclass(frozen=True)
class CompositeParams:
    """Composite generator ``h_q o ... o h_0``: depth ``q``, widths ``v``, active inputs ``t``, smoothness ``betas``."""

    q: int
    v: tuple
    t: tuple
    betas: tuple
    tau6: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "v", tuple(int(x) for x in self.v))
        object.__setattr__(self, "t", tuple(int(x) for x in self.t))
        object.__setattr__(self, "betas", tuple(float(x) for x in self.betas))
        if self.q < 0:
            raise DomainError("q must be nonnegative")
        if len(self.v) != self.q + 2 or len(self.t) != self.q + 1 or len(self.betas) != self.q + 1:
            raise DomainError("need len(v) = q + 2 and len(t) = len(betas) = q + 1")
        if any(x < 1 for x in self.v + self.t) or any(b <= 0 for b in self.betas):
            raise DomainError("widths, active dimensions and smoothness must be positive")
        if any(ti > vi for ti, vi in zip(self.t, self.v)):
            raise DomainError("t_i cannot exceed the input width v_i")

    @property
    def i_star(self) -> int:
        """Index maximizing ``t_i / beta_i``; ties go to the smallest index."""
        ratios = [ti / bi for ti, bi in zip(self.t, self.betas)]
        return ratios.index(max(ratios))

    @property
    def t_star(self) -> int:
        return self.t[self.i_star]

    @property
    def beta_star(self) -> float:
        return self.betas[self.i_star]


def _check_n(n):
    if not n >= 3:
        raise DomainError("n must be at least 3")


def rate_exponents_theorem1(params: SmoothnessParams):
    """``(a, b)`` with ``eps_n = C n^-a (log n)^b``."""
    beta, d, tau3 = params.beta, params.d, params.tau3
    return beta / (2 * beta + d), (2 * tau3 * d + 2 * tau3 + 2 * d + 1) / 2.0


def rate_theorem1(n, params: SmoothnessParams, C: float = 1.0) -> float:
    """``C n^(-beta / (2 beta + d)) (log n)^((2 tau3 d + 2 tau3 + 2 d + 1) / 2)``, for any ``n > 1``."""
    if not n > 1:
        raise DomainError("n must exceed 1")
    a, b = rate_exponents_theorem1(params)
    return C * math.exp(-a * math.log(n) + b * math.log(math.log(n)))


def decreasing_from(params: SmoothnessParams) -> float:
    """The ``n`` beyond which the rate of :func:`rate_theorem1` decreases: ``exp(b / a)``."""
    a, b = rate_exponents_theorem1(params)
    return math.exp(b / a)


def rate_theorem2(n, beta: float, d: int, C: float = 1.0) -> float:
    """``C n^(-beta / (2 beta + d)) log n`` for ``beta <= 2``."""
    _check_n(n)
    if not 0 < beta <= 2:
        raise DomainError("this rate requires 0 < beta <= 2")
    return C * n ** (-beta / (2 * beta + d)) * math.log(n)


def rate_exponent_theorem3(beta: float, comp: CompositeParams) -> float:
    bt = min(beta, 2.0)
    bs, ts = comp.beta_star, comp.t_star
    return bt * bs / (2 * bt * bs + ts * (bt + 1))


def rate_theorem3(n, beta: float, comp: CompositeParams, C: float = 1.0) -> float:
    """``C n^(-b~ b* / (2 b~ b* + t* (b~ + 1))) log n`` with ``b~ = min(beta, 2)``."""
    _check_n(n)
    if not beta > 0:
        raise DomainError("beta must be positive")
    if any(b <= 1 for b in comp.betas):
        raise DomainError("every component smoothness must exceed 1")
    return C * n ** (-rate_exponent_theorem3(beta, comp)) * math.log(n)


@dataclass(frozen=True)
class Theorem1Schedule:
    n: float
    F: float
    d1: int
    M: float
    sigma_min: float
    sigma_max: float
    epsilon: float
    eta: float

    def sieve(self) -> SieveSpec:
        return SieveSpec(self.F, self.M, self.d1, self.sigma_min, self.sigma_max)


def schedule_theorem1(n, params: SmoothnessParams, C: float = 1.0, C2: float | None = None) -> Theorem1Schedule:
    """Sieve sizes for sample size ``n``; ``C2`` (default ``C``) scales the rate."""
    _check_n(n)
    beta, d, tau3 = params.beta, params.d, params.tau3
    log_n = math.log(n)
    eps = rate_theorem1(n, params, C if C2 is None else C2)
    return Theorem1Schedule(
        n=n,
        F=C * log_n**tau3,
        d1=max(1, math.floor(C * n ** (d / (2 * beta + d)) * log_n ** (tau3 * d + d))),
        M=C * n ** ((2 * beta + 2 * d + 3) / (2 * beta + d)),
        sigma_min=n ** (-1.0 / (2 * beta + d)),
        sigma_max=1.0,
        epsilon=eps,
        eta=eps**2 / 48.0,
    )


def covering_bound_shallow(delta, d: int, d1: int, M: float) -> float:
    """``d1 (d + 2) log(8 M^2 d1 / delta)``, or 0 when the log is not positive."""
    if not delta > 0:
        raise DomainError("delta must be positive")
    arg = 8.0 * M * M * d1 / delta
    if arg <= 1.0:
        return 0.0
    return d1 * (d + 2) * math.log(arg)


def bracket_bound(
    delta,
    d: int,
    F: float,
    sigma_min: float,
    sigma_max: float,
    covering_of_G,
    C5: float = 1.0,
    C6: float = 1.0,
    C7: float = 1.0,
) -> float:
    """Two-term bound on the log bracketing number of ``{p_(g, sigma)}`` at Hellinger radius ``delta``.

    ``covering_of_G(r)`` must return the log covering number of the generator
    class at sup-norm radius ``r``.  A warning is issued when ``delta > C7``,
    where the bound is not claimed to hold.
    """
    if not delta > 0:
        raise DomainError("delta must be positive")
    if not (0 < sigma_min <= 1 / math.sqrt(2) and sigma_max >= 1 and F >= 1):
        raise DomainError("need 0 < sigma_min <= 1/sqrt(2), sigma_max >= 1 and F >= 1")
    if delta > C7:
        warnings.warn(f"delta={delta!r} exceeds C7={C7!r}; the bound is outside its range", stacklevel=2)
    spread = math.log(sigma_max / sigma_min) ** d + F ** (2 * d)
    radius = C5 * delta**4 * sigma_min ** (d + 2) / (F * sigma_max ** (2 * d) * spread)
    second = math.log(C6 * sigma_max ** (2 * d + 1) * spread / (delta**4 * sigma_min ** (d + 1)))
    return covering_of_G(radius) + second


def bracket_ratio_theorem1(n, params: SmoothnessParams, C: float = 1.0, **consts) -> float:
    """``bracket_bound(eps_n) / (n eps_n^2)`` along the sieve schedule."""
    sch = schedule_theorem1(n, params, C)
    F = max(sch.F, 1.0)
    cover = lambda r: covering_bound_shallow(r, params.d, sch.d1, sch.M)  # noqa: E731
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        b = bracket_bound(sch.epsilon, params.d, F, sch.sigma_min, sch.sigma_max, cover, **consts)
    return b / (n * sch.epsilon**2)


def mixture_support_bound(sigma: float, d: int, tau3: float, D_const: float = 1.0) -> int:
    """``ceil(D sigma^-d log(1/sigma)^(tau3 d + d))`` atoms."""
    if not 0 < sigma < 1:
        raise DomainError("sigma must lie in (0, 1)")
    return math.ceil(D_const * sigma ** (-d) * math.log(1.0 / sigma) ** (tau3 * d + d))


@dataclass(frozen=True)
class TailCheck:
    holds: bool
    max_ratio: float
    worst_point: np.ndarray


def tail2_check(density, params: SmoothnessParams, points, rtol: float = 1e-12) -> TailCheck:
    """Check ``p(x) <= tau1 exp(-tau2 ||x||_2^tau3)`` at every point.

    ``points`` is an ``(N, d)`` array or anything with a ``nodes()`` method.
    ``rtol`` absorbs rounding when the density equals the envelope exactly.
    """
    pts = points.nodes() if hasattr(points, "nodes") else np.asarray(points, dtype=float)
    pts = pts.reshape(-1, params.d)
    vals = np.asarray(density(pts), dtype=float).reshape(-1)
    radius = np.linalg.norm(pts, axis=1)
    log_env = math.log(params.tau1) - params.tau2 * radius**params.tau3
    with np.errstate(divide="ignore"):
        log_ratio = np.log(vals) - log_env
    i = int(np.argmax(log_ratio))
    worst = float(np.exp(log_ratio[i]))
    return TailCheck(worst <= 1.0 + rtol, worst, pts[i].copy())
