"""The implicit density ``p_{g,sigma}(x) = int_0^1 phi_sigma(x - g(z)) dz``.

For a piecewise-linear generator the latent integral splits into one Gaussian
integral per linear piece.  On a piece ``g(z) = c + v z`` the squared distance
``||x - c - v z||^2`` is a quadratic in ``z``; completing the square turns the
piece's contribution into a difference of normal CDFs, which is evaluated in
log space so that far-away points underflow gracefully instead of producing NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, logsumexp

from .errors import DomainError
from .measures import gaussian_log_kernel
from .networks import (
    ShallowGenerator,
    StepGenerator,
    breakpoints,
    in_network_class,
    to_piecewise_linear,
)

# Pieces whose standardized width is below this use Gauss-Legendre instead of a
# CDF difference, which would cancel catastrophically.
_NARROW_PIECE = 1e-3
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class GenerativeDensity:
    """The pair ``(g, sigma)`` standing for the density of ``g(Z) + sigma * eps``."""

    generator: ShallowGenerator | StepGenerator
    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise DomainError("sigma must be positive and finite")

    @property
    def d(self) -> int:
        return self.generator.d

    def log_density(self, x):
        return exact_log_density(self, x)

    def __call__(self, x):
        return exact_density(self, x)

    def range_box(self):
        """Coordinate-wise min and max of ``g`` over [0, 1]."""
        form = to_piecewise_linear(self.generator)
        ends = np.concatenate(
            [
                form.intercepts + form.slopes * form.boundaries[:-1, None],
                form.intercepts + form.slopes * form.boundaries[1:, None],
            ]
        )
        return ends.min(axis=0), ends.max(axis=0)


@dataclass(frozen=True)
class SieveSpec:
    """Model class: width-``d1`` shallow generators with ``||g||_inf <= F``, parameters ``<= M``."""

    F: float
    M: float
    d1: int
    sigma_min: float
    sigma_max: float

    def __post_init__(self):
        if not (self.F > 0 and self.M > 0 and self.d1 >= 1):
            raise ValueError("F, M must be positive and d1 >= 1")
        if not 0 < self.sigma_min <= self.sigma_max:
            raise ValueError("need 0 < sigma_min <= sigma_max")

    def contains(self, p: GenerativeDensity) -> bool:
        g = p.generator
        if not isinstance(g, ShallowGenerator):
            return False
        return (
            self.sigma_min <= p.sigma <= self.sigma_max
            and in_network_class(g, self.F, self.M, self.d1)
        )


def log_ndtr_diff(a, b):
    """``log(Phi(b) - Phi(a))`` for ``a < b``, accurate in both tails."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    flip = a > 0
    lo = np.where(flip, -b, a)
    hi = np.where(flip, -a, b)
    l_hi = log_ndtr(hi)
    l_lo = log_ndtr(lo)
    with np.errstate(divide="ignore"):
        return l_hi + np.log(-np.expm1(l_lo - l_hi))


def _piece_log_integrals(form, sigma, x):
    """``log int_{z0}^{z1} phi_sigma(x - c - v z) dz`` for every point and piece, shape (n, K)."""
    n, d = x.shape
    K = len(form)
    out = np.empty((n, K))
    z0s, z1s = form.boundaries[:-1], form.boundaries[1:]
    for k in range(K):
        c, v = form.intercepts[k], form.slopes[k]
        z0, z1 = z0s[k], z1s[k]
        length = z1 - z0
        s = float(v @ v)
        r = x - c
        width = math.sqrt(s) * length / sigma
        if s == 0.0:
            out[:, k] = math.log(length) + gaussian_log_kernel(np.einsum("nd,nd->n", r, r), sigma, d)
        elif width < _NARROW_PIECE:
            t = z0 + 0.5 * length * (_GL_NODES + 1.0)
            log_w = np.log(0.5 * length * _GL_WEIGHTS)
            e = r[:, None, :] - t[None, :, None] * v
            sq = np.einsum("ntd,ntd->nt", e, e)
            out[:, k] = logsumexp(log_w + gaussian_log_kernel(sq, sigma, d), axis=1)
        else:
            root = math.sqrt(s)
            z_star = (r @ v) / s
            perp = r - z_star[:, None] * v
            perp2 = np.einsum("nd,nd->n", perp, perp)
            lo = (z0 - z_star) * root / sigma
            hi = (z1 - z_star) * root / sigma
            out[:, k] = (
                -0.5 * (d - 1) * math.log(2 * math.pi * sigma**2)
                - 0.5 * perp2 / sigma**2
                - 0.5 * math.log(s)
                + log_ndtr_diff(lo, hi)
            )
    return out


def _points(x, d):
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1 and (d > 1 or x.ndim == 0)
    if single:
        x = x.reshape(1, d)
    elif x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.shape[1] != d:
        raise DomainError(f"points have dimension {x.shape[1]}, expected {d}")
    return x, single


def exact_log_density(p: GenerativeDensity, x):
    """Closed-form ``log p_{g,sigma}(x)`` for a shallow or step generator."""
    form = to_piecewise_linear(p.generator)
    pts, single = _points(x, form.dim)
    out = np.empty(pts.shape[0])
    step = max(1, _CHUNK_ELEMENTS // (len(form) * 16 * form.dim))
    for s in range(0, pts.shape[0], step):
        out[s : s + step] = logsumexp(_piece_log_integrals(form, p.sigma, pts[s : s + step]), axis=1)
    return out[0] if single else out


def exact_density(p: GenerativeDensity, x):
    return np.exp(exact_log_density(p, x))


def mc_log_density(p: GenerativeDensity, x, m: int, rng: np.random.Generator):
    """``log((1/m) sum_j phi_sigma(x - g(Z_j)))`` with ``Z_j ~ U[0, 1]`` shared across points."""
    if m < 1:
        raise ValueError("m must be at least 1")
    pts, single = _points(x, p.d)
    gz = p.generator.forward(rng.uniform(size=m))
    out = np.empty(pts.shape[0])
    step = max(1, _CHUNK_ELEMENTS // (m * p.d))
    for s in range(0, pts.shape[0], step):
        diff = pts[s : s + step, None, :] - gz[None, :, :]
        sq = np.einsum("nmd,nmd->nm", diff, diff)
        out[s : s + step] = logsumexp(gaussian_log_kernel(sq, p.sigma, p.d), axis=1) - math.log(m)
    return out[0] if single else out


def _active_pieces(generator: ShallowGenerator):
    """Piece boundaries, active-unit mask, intercepts and slopes of a shallow generator."""
    bnd = np.concatenate([[0.0], breakpoints(generator), [1.0]])
    mids = 0.5 * (bnd[:-1] + bnd[1:])
    active = (mids[:, None] * generator.w_in - generator.b) > 0
    slopes = (active * generator.w_in) @ generator.w_out.T
    intercepts = generator.bias - (active * generator.b) @ generator.w_out.T
    return bnd, active, intercepts, slopes


def mc_objective_and_grad(generator: ShallowGenerator, sigma: float, data, z):
    """Value and exact gradient of ``sum_i log((1/m) sum_j phi_sigma(x_i - g(z_j)))``.

    The latents ``z`` are held fixed.  The gradient is a flat vector ordered like
    ``generator.parameters()`` followed by the derivative in ``sigma``.  A unit
    counts as active on a linear piece when it is positive at the piece's
    midpoint, so a latent sitting exactly on a kink (a null event) takes the
    right-hand piece.

    Since ``g`` is affine on each piece, the back-propagation through the hidden
    layer only needs the per-piece sums ``sum_j dL/dg(z_j)`` and
    ``sum_j z_j dL/dg(z_j)``; the cost is linear in ``m`` and does not grow
    with the width.
    """
    data = np.asarray(data, dtype=float).reshape(-1, generator.d)
    z = np.asarray(z, dtype=float).reshape(-1)
    n, d = data.shape
    m = z.size
    if n == 0:
        return 0.0, np.zeros(generator.parameters().size + 1)
    bnd, active, intercepts, slopes = _active_pieces(generator)
    K = active.shape[0]
    seg = np.clip(np.searchsorted(bnd, z, side="right") - 1, 0, K - 1)
    gz = intercepts[seg] + slopes[seg] * z[:, None]
    # ||x - g||^2 as one matrix product; broadcasting (n, 1) + (1, m) is slower.
    gg = np.einsum("md,md->m", gz, gz)
    left = np.column_stack([data, np.einsum("nd,nd->n", data, data), np.ones(n)])
    right = np.empty((d + 2, m))
    right[:d] = -2.0 * gz.T
    right[d] = 1.0
    right[d + 1] = gg
    # one (n, m) buffer holds ||x - g||^2, then the log-kernel, then its exponential
    buf = left @ right
    np.maximum(buf, 0.0, out=buf)
    buf *= -0.5 / sigma**2
    top = buf.max(axis=1)
    buf -= top[:, None]
    np.exp(buf, out=buf)
    total = buf.sum(axis=1)
    lse = top + np.log(total)
    value = math.fsum(lse) - n * (math.log(m) + 0.5 * d * math.log(2 * math.pi * sigma**2))
    # responsibilities are buf / total; the normalization is folded into the products below
    inv = 1.0 / total
    mass = inv @ buf
    rx = (data * inv[:, None]).T @ buf
    d_gz = (rx.T - mass[:, None] * gz) / sigma**2
    # sum_ij r_ij ||x_i - g_j||^2 expanded so the (n, m) array is not revisited
    rg = buf @ gz * inv[:, None]
    rq = buf @ gg * inv
    expected_sq = float(np.sum(left[:, d]) - 2.0 * np.vdot(data, rg) + np.sum(rq))
    s0 = np.empty((K, d))
    s1 = np.empty((K, d))
    for c in range(d):
        s0[:, c] = np.bincount(seg, weights=d_gz[:, c], minlength=K)
        s1[:, c] = np.bincount(seg, weights=z * d_gz[:, c], minlength=K)
    a0 = active.T @ s0
    a1 = active.T @ s1
    w_in, b, w_out = generator.w_in, generator.b, generator.w_out
    g_wout = (w_in[:, None] * a1 - b[:, None] * a0).T
    g_win = np.einsum("ci,ic->i", w_out, a1)
    g_b = -np.einsum("ci,ic->i", w_out, a0)
    g_sigma = expected_sq / sigma**3 - n * d / sigma
    grad = np.concatenate([g_win, g_b, g_wout.ravel(), [g_sigma]])
    return float(value), grad


def grad_mc_objective(p: GenerativeDensity, data, m: int, rng: np.random.Generator, z=None):
    """Monte-Carlo log-likelihood of ``data`` and its gradient in (generator parameters, sigma).

    Draws ``m`` latents from ``rng`` unless ``z`` is supplied; the same draws serve
    the value and the gradient.  Returns ``(value, gradient)``.
    """
    if not isinstance(p.generator, ShallowGenerator):
        raise TypeError("gradients are defined for shallow generators only")
    if z is None:
        if m < 1:
            raise ValueError("m must be at least 1")
        z = rng.uniform(size=m)
    return mc_objective_and_grad(p.generator, p.sigma, data, z)


def sample_density(p: GenerativeDensity, rng: np.random.Generator, n: int):
    """Draw ``g(Z) + sigma * eps`` with ``Z ~ U[0, 1]`` and ``eps ~ N(0, I_d)``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    z = rng.uniform(size=n)
    eps = rng.standard_normal((n, p.d))
    return p.generator.forward(z) + p.sigma * eps


def log_likelihood(p: GenerativeDensity, data) -> float:
    data = np.asarray(data, dtype=float)
    if data.size == 0:
        raise ValueError("data must be nonempty")
    return float(math.fsum(exact_log_density(p, data.reshape(-1, p.d))))


def is_sieve_mle(candidate: GenerativeDensity, competitors, data, eta: float) -> bool:
    """Whether ``candidate``'s average log-likelihood is within ``eta`` of the best competitor."""
    data = np.asarray(data, dtype=float).reshape(-1, candidate.d)
    n = data.shape[0]
    own = log_likelihood(candidate, data) / n
    best = max(log_likelihood(q, data) / n for q in competitors)
    return own >= best - eta
