"""Property suites run by ``shallowgen verify``.

Each suite draws its own random instances from a seed, checks one family of
inequalities or identities against an independent computation, and returns a
:class:`SuiteReport` with one row per checked property.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .constructor import (
    l2_step_gap,
    merge_displacement_bound,
    relu_from_step,
    theorem1_generator,
)
from .gen_density import GenerativeDensity, mc_objective_and_grad
from .measures import DiscreteMeasure, merge_small_atoms, mixture_density
from .metrics import (
    QuadratureGrid,
    convolution_rate_check,
    default_grid,
    grid_around,
    hellinger_quadrature,
    squared_gaussian_hellinger,
    squared_hellinger_quadrature,
)
from .networks import ShallowGenerator, StepGenerator, breakpoints, l2_distance_sq, sup_distance
from .theory import (
    CompositeParams,
    SmoothnessParams,
    bracket_ratio_theorem1,
    covering_bound_shallow,
    rate_theorem2,
    rate_theorem3,
    tail2_check,
)
from .training import GaussianEncoder, aevb_objective

LEMMA_A2_SLACK = 1e-6
GAUSSIAN_TOL = 1e-6
L2_IDENTITY_TOL = 1e-12
MC_GRAD_RTOL = 1e-5
AEVB_GRAD_RTOL = 1e-4
RATE_SLOPE = (2.0, 0.05)
THEORY_TOL = 1e-12
CONVOLUTION_SIGMAS = np.geomspace(0.05, 0.2, 8)
BRACKET_NS = (1e3, 1e4, 1e5, 1e6)


@dataclass(frozen=True)
class PropertyResult:
    """A measured quantity, the bound it must respect, and whether it does."""

    name: str
    measured: float
    bound: float
    holds: bool

    @property
    def margin(self) -> float:
        return self.bound - self.measured


@dataclass
class SuiteReport:
    suite: str
    results: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.results) and all(r.holds for r in self.results)

    @property
    def pass_count(self) -> int:
        return sum(r.holds for r in self.results)

    def add(self, name, measured, bound, holds=None):
        measured, bound = float(measured), float(bound)
        if holds is None:
            holds = measured <= bound
        self.results.append(PropertyResult(name, measured, bound, bool(holds)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["suite", "property", "measured", "bound", "margin", "holds"])
        for r in self.results:
            writer.writerow([self.suite, r.name, repr(r.measured), repr(r.bound), repr(r.margin), int(r.holds)])
        return buf.getvalue()


def random_shallow(rng, d, d1, scale=2.0) -> ShallowGenerator:
    """Generator with kinks spread over [0, 1] and outputs of order ``scale``."""
    w_in = rng.choice([-1.0, 1.0], d1) * rng.uniform(0.5, 3.0, d1)
    kinks = rng.uniform(0.0, 1.0, d1)
    return ShallowGenerator(w_in, w_in * kinks, rng.normal(0.0, scale / math.sqrt(d1), (d, d1)))


def random_step(rng, d, n_steps, scale=2.0) -> StepGenerator:
    lengths = rng.dirichlet(np.full(n_steps, 2.0)) * 0.8 + 0.2 / n_steps
    cuts = np.concatenate([[0.0], np.cumsum(lengths)])
    cuts[-1] = 1.0
    return StepGenerator(cuts, rng.normal(0.0, scale, (n_steps, d)))


def random_spd(rng, d, lo=0.3, hi=3.0):
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    S = (q * rng.uniform(lo, hi, d)) @ q.T
    return 0.5 * (S + S.T)


def pipeline_fixture(seed: int = 0, atoms: int = 150, d: int = 1) -> DiscreteMeasure:
    """Uniform atoms in ``[-1.4, 1.4]^d`` with Dirichlet(0.3) weights."""
    rng = np.random.default_rng(seed)
    return DiscreteMeasure(rng.uniform(-1.4, 1.4, (atoms, d)), rng.dirichlet(np.full(atoms, 0.3)))


def _pair_grid(p, q, sigma):
    points = 2001 if p.d == 1 else 401
    return default_grid([p.range_box(), q.range_box()], sigma, points)


def suite_lemma_a2(count: int = 100, seed: int = 0) -> SuiteReport:
    """``d_H^2(p_f, p_g) <= ||f - g||_2^2 / (8 sigma^2)`` on random pairs."""
    rng = np.random.default_rng(seed)
    rep = SuiteReport("lemma-a2")
    for k in range(count):
        d = int(rng.integers(1, 3))
        sigma = float(rng.uniform(0.2, 2.0))
        f = random_shallow(rng, d, int(rng.integers(1, 7)))
        if k % 2:
            g = random_shallow(rng, d, int(rng.integers(1, 7)))
        else:
            eps = rng.normal(0.0, 0.2, f.parameters().size)
            g = ShallowGenerator.from_parameters(f.parameters() + eps, d, f.d1)
        p, q = GenerativeDensity(f, sigma), GenerativeDensity(g, sigma)
        measured = squared_hellinger_quadrature(p, q, _pair_grid(p, q, sigma))
        bound = l2_distance_sq(f, g) / (8.0 * sigma**2)
        rep.add(f"pair{k}:d={d}:sigma={sigma:.3f}", measured, bound + LEMMA_A2_SLACK)
    return rep


def suite_corollary_a1(count: int = 20, seed: int = 0) -> SuiteReport:
    """Moving light atoms onto the heaviest one costs at most the displacement bound in ``d_H``."""
    rng = np.random.default_rng(seed)
    rep = SuiteReport("corollary-a1")
    for k in range(count):
        d = int(rng.integers(1, 3))
        n_atoms = int(rng.integers(5, 30))
        sigma = float(rng.uniform(0.3, 1.0))
        m = DiscreteMeasure(rng.uniform(-2.0, 2.0, (n_atoms, d)), rng.dirichlet(np.full(n_atoms, 0.5)))
        omega = float(np.quantile(m.weights, rng.uniform(0.2, 0.8)))
        merged = merge_small_atoms(m, omega)
        grid = grid_around(m.atoms.min(axis=0), m.atoms.max(axis=0), 8.0 * sigma, 2001 if d == 1 else 401)
        measured = hellinger_quadrature(
            lambda x: mixture_density(m, sigma, x), lambda x: mixture_density(merged, sigma, x), grid
        )
        bound = merge_displacement_bound(m, omega, sigma)
        rep.add(f"measure{k}:d={d}:moved={len(m) - len(merged)}", measured, bound + LEMMA_A2_SLACK)
    return rep


def suite_gaussian_hellinger(count: int = 50, seed: int = 0) -> SuiteReport:
    """Closed-form Gaussian ``d_H^2`` against quadrature."""
    rng = np.random.default_rng(seed)
    rep = SuiteReport("gaussian-hellinger")
    for k in range(count):
        d = int(rng.integers(1, 3))
        mu1, mu2 = rng.uniform(-1.0, 1.0, d), rng.uniform(-1.0, 1.0, d)
        S1, S2 = random_spd(rng, d), random_spd(rng, d)
        closed = squared_gaussian_hellinger(mu1, S1, mu2, S2)
        pad = 10.0 * math.sqrt(max(np.linalg.eigvalsh(S1).max(), np.linalg.eigvalsh(S2).max()))
        grid = grid_around(np.minimum(mu1, mu2), np.maximum(mu1, mu2), pad, 2001 if d == 1 else 401)
        quad = squared_hellinger_quadrature(_gauss(mu1, S1), _gauss(mu2, S2), grid)
        rep.add(f"pair{k}:d={d}", abs(closed - quad), GAUSSIAN_TOL)
    return rep


def _gauss(mu, S):
    from scipy.stats import multivariate_normal

    dist = multivariate_normal(mean=mu, cov=S)
    return lambda x: np.atleast_1d(dist.pdf(x))


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(3)


def piecewise_l2_sq(s: StepGenerator, g: ShallowGenerator) -> float:
    """``int_0^1 ||s - g||^2`` by 3-point Gauss-Legendre on every piece where both are affine."""
    bnd = np.union1d(np.union1d(s.cut_points, breakpoints(g)), [0.0, 1.0])
    lo, hi = bnd[:-1], bnd[1:]
    half = 0.5 * (hi - lo)
    z = (0.5 * (hi + lo))[:, None] + half[:, None] * _GL_NODES
    diff = s.forward(z.ravel()) - g.forward(z.ravel())
    sq = np.sum(diff**2, axis=1).reshape(z.shape)
    return math.fsum((half[:, None] * _GL_WEIGHTS * sq).ravel())


def suite_l2_identity(count: int = 20, seed: int = 0) -> SuiteReport:
    """``l2_step_gap`` against a numerical integral of the squared gap."""
    rng = np.random.default_rng(seed)
    rep = SuiteReport("l2-identity")
    for k in range(count):
        d = int(rng.integers(1, 3))
        s = random_step(rng, d, int(rng.integers(2, 9)))
        kappa = float(rng.uniform(0.02, 0.45)) * float(s.lengths.min())
        g = relu_from_step(s, kappa)
        gap = abs(l2_step_gap(s, kappa) - piecewise_l2_sq(s, g))
        rep.add(f"step{k}:d={d}:N={len(s)}", gap, L2_IDENTITY_TOL)
    return rep


def latents_off_kinks(rng, g: ShallowGenerator, m: int, gap: float = 1e-3):
    """``m`` uniform latents none of which lies within ``gap`` of a kink of ``g``."""
    kinks = breakpoints(g)
    z = rng.uniform(size=m)
    while kinks.size:
        near = np.min(np.abs(z[:, None] - kinks[None, :]), axis=1) < gap
        if not near.any():
            break
        z[near] = rng.uniform(size=int(near.sum()))
    return z


def _central_difference(f, theta, h=1e-6):
    out = np.empty(theta.size)
    for i in range(theta.size):
        e = np.zeros(theta.size)
        e[i] = h * max(1.0, abs(theta[i]))
        out[i] = (f(theta + e) - f(theta - e)) / (2 * e[i])
    return out


def _relative_error(approx, exact):
    return float(np.linalg.norm(approx - exact) / max(np.linalg.norm(exact), 1e-300))


def suite_gradients(count: int = 20, seed: int = 0) -> SuiteReport:
    """Analytic gradients of both training objectives against central differences."""
    rng = np.random.default_rng(seed)
    rep = SuiteReport("gradients")
    for k in range(count):
        d, d1 = int(rng.integers(1, 3)), int(rng.integers(2, 9))
        g = random_shallow(rng, d, d1)
        sigma = float(rng.uniform(0.4, 1.5))
        data = rng.normal(0.0, 1.5, (8, d))
        z = latents_off_kinks(rng, g, 300)
        _, grad = mc_objective_and_grad(g, sigma, data, z)
        theta = np.concatenate([g.parameters(), [sigma]])

        def f(t):
            return mc_objective_and_grad(ShallowGenerator.from_parameters(t[:-1], d, d1), t[-1], data, z)[0]

        err = _relative_error(_central_difference(f, theta), grad)
        rep.add(f"mc{k}:d={d}:d1={d1}", err, MC_GRAD_RTOL)
    for k in range(count):
        d, d1, width = int(rng.integers(1, 3)), int(rng.integers(2, 9)), int(rng.integers(2, 7))
        g = random_shallow(rng, d, d1)
        sigma = float(rng.uniform(0.4, 1.5))
        enc = GaussianEncoder.init(d, width, rng)
        x = rng.normal(0.0, 1.5, (6, d))
        eps = rng.standard_normal(6)
        p = GenerativeDensity(g, sigma)
        _, grad = aevb_objective(p, enc, x, rng, eps)
        n_gen = g.parameters().size
        theta = np.concatenate([g.parameters(), [sigma], enc.parameters()])

        def f(t):
            q = GenerativeDensity(ShallowGenerator.from_parameters(t[:n_gen], d, d1), t[n_gen])
            return aevb_objective(q, GaussianEncoder.from_parameters(t[n_gen + 1 :], d, width), x, rng, eps)[0]

        err = _relative_error(_central_difference(f, theta), grad)
        rep.add(f"aevb{k}:d={d}:d1={d1}", err, AEVB_GRAD_RTOL)
    return rep


def suite_convolution_rate(sigmas=CONVOLUTION_SIGMAS) -> SuiteReport:
    """Slope of ``log d_H(N(0, 1), N(0, 1 + s^2))`` in ``log s``, closed form and quadrature."""
    rep = SuiteReport("convolution-rate")
    target, tol = RATE_SLOPE
    slope, _ = convolution_rate_check(sigmas, d=1)
    rep.add("slope:closed-form", abs(slope - target), tol)
    grid = QuadratureGrid((-14.0,), (14.0,), 4001)
    base = _gauss(np.zeros(1), np.eye(1))
    dist = [hellinger_quadrature(base, _gauss(np.zeros(1), (1 + s * s) * np.eye(1)), grid) for s in sigmas]
    slope_q = float(np.polyfit(np.log(sigmas), np.log(dist), 1)[0])
    rep.add("slope:quadrature", abs(slope_q - target), tol)
    return rep


def greedy_packing(nets, delta):
    """Greedy set of nets at pairwise sup-distance greater than ``delta``."""
    chosen = []
    for g in nets:
        if all(sup_distance(g, h) > delta for h in chosen):
            chosen.append(g)
    return chosen


def suite_entropy(seed: int = 0, nets: int = 200) -> SuiteReport:
    """Covering bound against a packing oracle, bracket growth, and the rate reduction."""
    rng = np.random.default_rng(seed)
    rep = SuiteReport("entropy")
    d, d1, M = 1, 2, 1.0
    pool = [
        ShallowGenerator(rng.uniform(-M, M, d1), rng.uniform(-M, M, d1), rng.uniform(-M, M, (d, d1)))
        for _ in range(nets)
    ]
    for delta in (0.5, 0.25, 0.1, 0.05):
        # A delta-packing is at most as large as any (delta / 2)-cover.
        packed = len(greedy_packing(pool, delta))
        rep.add(f"packing:delta={delta}", math.log(packed), covering_bound_shallow(delta / 2, d, d1, M))
    params = SmoothnessParams(beta=1.0, d=2, tau3=2.0)
    ratios = [bracket_ratio_theorem1(n, params) for n in BRACKET_NS]
    for n, r in zip(BRACKET_NS[1:], ratios[1:]):
        rep.add(f"bracket-ratio:n={n:.0e}", r, ratios[0])
    for beta in (0.5, 1.0, 1.5, 2.0):
        for dd in (1, 2, 3):
            comp = CompositeParams(q=0, v=(dd, dd), t=(dd,), betas=(beta + 1.0,))
            for n in (1e3, 1e5):
                t2, t3 = rate_theorem2(n, beta, dd), rate_theorem3(n, beta, comp)
                rep.add(f"reduction:beta={beta}:d={dd}:n={n:.0e}", abs(t3 - t2) / t2, THEORY_TOL)
    return rep


def suite_tails() -> SuiteReport:
    """The normal and product-Laplace envelopes on a grid, plus a deliberately broken envelope."""
    from scipy.stats import laplace, norm

    rep = SuiteReport("tails")
    for d in (1, 2):
        grid = QuadratureGrid((-8.0,) * d, (8.0,) * d, 401 if d == 1 else 161)
        normal = lambda x: np.prod(norm.pdf(x), axis=1)  # noqa: E731
        lap = lambda x: np.prod(laplace.pdf(x), axis=1)  # noqa: E731
        res = tail2_check(normal, SmoothnessParams(1.0, d, tau1=(2 * math.pi) ** (-d / 2), tau2=0.5, tau3=2.0), grid)
        rep.add(f"normal:d={d}", res.max_ratio, 1.0, res.holds)
        res = tail2_check(lap, SmoothnessParams(1.0, d, tau1=2.0**-d, tau2=1.0, tau3=1.0), grid)
        rep.add(f"laplace:d={d}", res.max_ratio, 1.0, res.holds)
        bad = SmoothnessParams(1.0, d, tau1=0.5 * (2 * math.pi) ** (-d / 2), tau2=0.5, tau3=2.0)
        res = tail2_check(normal, bad, grid)
        rep.add(f"halved-normal-detected:d={d}", abs(res.max_ratio - 2.0), 1e-9, not res.holds)
    return rep


def suite_pipeline(seed: int = 0, sigma: float = 0.3) -> SuiteReport:
    """Per-stage Hellinger increments of the constructive pipeline against their bounds."""
    rep = SuiteReport("pipeline")
    _, diag = theorem1_generator(pipeline_fixture(seed), sigma, beta=1.0, d=1, tau3=2.0)
    for r in diag.stages:
        rep.add(f"{r.stage}:atoms={r.atoms}", r.measured, r.bound, r.holds)
    return rep


SUITES = {
    "lemma-a2": suite_lemma_a2,
    "corollary-a1": suite_corollary_a1,
    "gaussian-hellinger": suite_gaussian_hellinger,
    "l2-identity": suite_l2_identity,
    "gradients": suite_gradients,
    "convolution-rate": suite_convolution_rate,
    "entropy": suite_entropy,
    "tails": suite_tails,
    "pipeline": suite_pipeline,
}


def run_suite(name: str, seed: int = 0) -> SuiteReport:
    if name not in SUITES:
        raise KeyError(name)
    fn = SUITES[name]
    if name in ("convolution-rate", "tails"):
        return fn()
    return fn(seed=seed)
