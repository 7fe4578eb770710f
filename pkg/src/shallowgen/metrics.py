"""Hellinger and Kullback-Leibler distances between densities on ``R^d``.

Deterministic versions integrate on a tensor grid with composite Simpson
weights; the Monte-Carlo version is meant for sanity checks in higher
dimension.  Densities are plain callables mapping an ``(N, d)`` array to ``N``
nonnegative values.

Squared Hellinger distances use the normalization
``d_H^2 = (1/2) int (sqrt p - sqrt q)^2 = 1 - int sqrt(p q)``, which takes
values in [0, 1].  This is the scale on which the Gaussian closed form
``1 - BC`` and the bound ``d_H^2 <= ||f - g||_2^2 / (8 sigma^2)`` hold; the
unnormalized integral is exactly twice as large.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, DomainError, NumericError

DEFAULT_NODE_BUDGET = 5_000_000


def simpson_weights(a: float, b: float, n: int) -> np.ndarray:
    """Composite Simpson weights for ``n`` (odd) equispaced nodes on ``[a, b]``."""
    if n < 3 or n % 2 == 0:
        raise ValueError("Simpson's rule needs an odd number of nodes, at least 3")
    h = (b - a) / (n - 1)
    w = np.full(n, 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return w * (h / 3.0)


@dataclass(frozen=True)
class QuadratureGrid:
    """Tensor grid of ``points`` nodes per axis on the box ``[lower, upper]``."""

    lower: tuple
    upper: tuple
    points: tuple
    budget: int = DEFAULT_NODE_BUDGET

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        pts = np.atleast_1d(self.points).astype(int)
        if pts.size == 1:
            pts = np.repeat(pts, len(lo))
        pts = tuple(int(v) for v in pts)
        if len(lo) != len(hi) or len(pts) != len(lo):
            raise ValueError("lower, upper and points must have one entry per axis")
        if not all(math.isfinite(a) and math.isfinite(b) and a < b for a, b in zip(lo, hi)):
            raise ValueError("bounds must be finite with lower < upper")
        if any(n < 3 or n % 2 == 0 for n in pts):
            raise ValueError("points per axis must be odd and at least 3")
        if math.prod(pts) > self.budget:
            raise ValueError(f"grid has {math.prod(pts)} nodes, budget is {self.budget}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def size(self) -> int:
        return math.prod(self.points)

    def axes(self):
        return [np.linspace(a, b, n) for a, b, n in zip(self.lower, self.upper, self.points)]

    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    def weights(self) -> np.ndarray:
        w = np.ones(1)
        for a, b, n in zip(self.lower, self.upper, self.points):
            w = np.multiply.outer(w, simpson_weights(a, b, n)).ravel()
        return w

    def integrate(self, values) -> float:
        values = np.asarray(values, dtype=float)
        return float(self.weights() @ values)


def default_points(d: int) -> int:
    if d <= 2:
        return 401
    if d == 3:
        return 101
    raise DomainError("quadrature is limited to d <= 3")


def grid_around(lower, upper, pad: float, points: int | None = None) -> QuadratureGrid:
    """Grid on the box ``[lower - pad, upper + pad]``."""
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    n = default_points(lower.size) if points is None else points
    return QuadratureGrid(tuple(lower - pad), tuple(upper + pad), n)


def default_grid(boxes, sigma_max: float, points: int | None = None) -> QuadratureGrid:
    """Union of the effective supports ``(lower, upper)`` in ``boxes``, padded by ``8 sigma_max``."""
    lows = np.array([np.atleast_1d(lo) for lo, _ in boxes], dtype=float)
    highs = np.array([np.atleast_1d(hi) for _, hi in boxes], dtype=float)
    return grid_around(lows.min(axis=0), highs.max(axis=0), 8.0 * sigma_max, points)


def _evaluate(density, nodes):
    vals = np.asarray(density(nodes), dtype=float).reshape(-1)
    if vals.size != nodes.shape[0]:
        raise ValueError("density returned the wrong number of values")
    bad = ~np.isfinite(vals)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise NumericError(f"density is {vals[i]} at node {nodes[i].tolist()}")
    return vals


def squared_hellinger_quadrature(p, q, grid: QuadratureGrid) -> float:
    """``(1/2) int (sqrt p - sqrt q)^2`` on the grid, clamped to ``[0, 1]``."""
    nodes = grid.nodes()
    fp = np.maximum(_evaluate(p, nodes), 0.0)
    fq = np.maximum(_evaluate(q, nodes), 0.0)
    gap = (np.sqrt(fp) - np.sqrt(fq)) ** 2
    return float(min(max(0.5 * (grid.weights() @ gap), 0.0), 1.0))


def hellinger_quadrature(p, q, grid: QuadratureGrid) -> float:
    """Hellinger distance ``((1/2) int (sqrt p - sqrt q)^2)^{1/2}``."""
    return math.sqrt(squared_hellinger_quadrature(p, q, grid))


def _check_spd(S, name):
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape[0] != S.shape[1] or not np.allclose(S, S.T, rtol=1e-12, atol=0.0):
        raise DomainError(f"{name} must be a symmetric matrix")
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise DomainError(f"{name} is not positive definite") from None
    return S


def squared_gaussian_hellinger(mu1, Sigma1, mu2, Sigma2) -> float:
    """Closed-form squared Hellinger distance between two Gaussians."""
    S1 = _check_spd(Sigma1, "Sigma1")
    S2 = _check_spd(Sigma2, "Sigma2")
    if S1.shape != S2.shape:
        raise DomainError("covariances have different shapes")
    delta = np.atleast_1d(np.asarray(mu1, dtype=float) - np.asarray(mu2, dtype=float))
    Sbar = 0.5 * (S1 + S2)
    _, ld1 = np.linalg.slogdet(S1)
    _, ld2 = np.linalg.slogdet(S2)
    _, ldbar = np.linalg.slogdet(Sbar)
    quad = float(delta @ np.linalg.solve(Sbar, delta))
    log_affinity = 0.25 * ld1 + 0.25 * ld2 - 0.5 * ldbar - quad / 8.0
    return float(min(max(-math.expm1(log_affinity), 0.0), 1.0))


def gaussian_hellinger(mu1, Sigma1, mu2, Sigma2) -> float:
    return math.sqrt(squared_gaussian_hellinger(mu1, Sigma1, mu2, Sigma2))


def kl_quadrature(p, q, grid: QuadratureGrid) -> float:
    """``int p log(p / q)`` on the grid, with ``0 log(0 / q) = 0``."""
    nodes = grid.nodes()
    fp = _evaluate(p, nodes)
    fq = _evaluate(q, nodes)
    pos = fp > 0
    bad = pos & (fq <= 0)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise DivergenceError(f"q vanishes where p > 0, at node {nodes[i].tolist()}")
    terms = np.zeros_like(fp)
    terms[pos] = fp[pos] * (np.log(fp[pos]) - np.log(fq[pos]))
    return float(grid.weights() @ terms)


@dataclass(frozen=True)
class HellingerEstimate:
    distance: float
    squared: float
    std_error: float


def hellinger_mc(p, q, sampler, n: int) -> HellingerEstimate:
    """Monte-Carlo estimate of ``d_H^2 = 1 - E_p sqrt(q / p)`` from ``n`` draws of ``sampler(n)``.

    ``std_error`` is the standard error of the squared distance.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    x = np.asarray(sampler(n), dtype=float)
    x = x.reshape(n, -1)
    fp = _evaluate(p, x)
    fq = _evaluate(q, x)
    ratio = np.sqrt(fq / fp)
    sq = 1.0 - float(np.mean(ratio))
    se = float(np.std(ratio, ddof=1)) / math.sqrt(n)
    sq_clamped = min(max(sq, 0.0), 1.0)
    return HellingerEstimate(math.sqrt(sq_clamped), sq, se)


def convolution_rate_check(sigma_values, d: int = 1):
    """Least-squares slope of ``log d_H(N(0, I), N(0, (1 + s^2) I))`` against ``log s``.

    Returns ``(slope, distances)``.
    """
    sig = np.asarray(sigma_values, dtype=float).reshape(-1)
    if sig.size < 3:
        raise ValueError("need at least 3 sigma values")
    if np.any(sig <= 0):
        raise DomainError("sigma values must be positive")
    eye = np.eye(d)
    zero = np.zeros(d)
    dist = np.array([gaussian_hellinger(zero, eye, zero, (1.0 + s * s) * eye) for s in sig])
    slope = np.polyfit(np.log(sig), np.log(dist), 1)[0]
    return float(slope), dist
