import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal, norm

from shallowgen.errors import DivergenceError, DomainError, NumericError
from shallowgen.measures import DiscreteMeasure, mixture_density, sample
from shallowgen.metrics import (
    QuadratureGrid,
    convolution_rate_check,
    gaussian_hellinger,
    grid_around,
    hellinger_mc,
    hellinger_quadrature,
    kl_quadrature,
    simpson_weights,
    squared_gaussian_hellinger,
    squared_hellinger_quadrature,
)
from shallowgen.verify import random_spd


def normal_pdf(mu, sd):
    return lambda x: norm.pdf(np.asarray(x)[:, 0], mu, sd)


def random_mixture(rng, k, d):
    return DiscreteMeasure(rng.uniform(-1.5, 1.5, (k, d)), rng.dirichlet(np.ones(k)))


class TestGrid:
    def test_simpson_exact_on_cubics(self):
        w = simpson_weights(-1.0, 2.0, 7)
        x = np.linspace(-1.0, 2.0, 7)
        assert w @ (x**3 - x) == pytest.approx(2.25, rel=1e-14)

    def test_rejects_even_points(self):
        with pytest.raises(ValueError):
            QuadratureGrid((0.0,), (1.0,), 400)

    def test_budget(self):
        with pytest.raises(ValueError):
            QuadratureGrid((0.0,) * 3, (1.0,) * 3, 201, budget=1000)

    def test_product_weights(self):
        grid = QuadratureGrid((0.0, -1.0), (1.0, 1.0), 5)
        assert grid.integrate(np.ones(grid.size)) == pytest.approx(2.0, rel=1e-14)


class TestHellingerQuadrature:
    def test_identical_is_zero(self):
        p = normal_pdf(0.0, 1.0)
        assert hellinger_quadrature(p, p, grid_around([0.0], [0.0], 10.0)) <= 1e-12

    def test_normal_vs_wide_normal(self):
        grid = grid_around([0.0], [0.0], 20.0, 4001)
        d = hellinger_quadrature(normal_pdf(0, 1), normal_pdf(0, 2), grid)
        closed = gaussian_hellinger([0.0], [[1.0]], [0.0], [[4.0]])
        assert closed**2 == pytest.approx(0.1055728, abs=1e-7)
        assert d == pytest.approx(closed, abs=1e-8)

    def test_refinement_order(self):
        # the error falls at least 16-fold per halving until it reaches the rounding floor
        closed = squared_gaussian_hellinger([0.0], [[1.0]], [0.3], [[2.0]])
        errors = []
        for n in (21, 41, 81, 161):
            grid = grid_around([0.0], [0.3], 12.0, n)
            errors.append(abs(squared_hellinger_quadrature(normal_pdf(0, 1), normal_pdf(0.3, math.sqrt(2)), grid) - closed))
        for a, b in zip(errors, errors[1:]):
            assert b <= a / 16 or b <= 1e-14

    def test_symmetric(self):
        rng = np.random.default_rng(0)
        m1, m2 = random_mixture(rng, 3, 2), random_mixture(rng, 4, 2)
        p = lambda x: mixture_density(m1, 0.5, x)
        q = lambda x: mixture_density(m2, 0.5, x)
        grid = grid_around([-1.5, -1.5], [1.5, 1.5], 4.0, 201)
        assert hellinger_quadrature(p, q, grid) == hellinger_quadrature(q, p, grid)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(1)
        ms = [random_mixture(rng, 3, 1) for _ in range(3)]
        f = [lambda x, m=m: mixture_density(m, 0.4, x) for m in ms]
        grid = grid_around([-1.5], [1.5], 4.0, 2001)
        d01, d12, d02 = (hellinger_quadrature(f[i], f[j], grid) for i, j in ((0, 1), (1, 2), (0, 2)))
        assert d02 <= d01 + d12 + 1e-12

    def test_disjoint_is_clamped_to_one(self):
        grid = grid_around([-50.0], [50.0], 10.0, 4001)
        assert squared_hellinger_quadrature(normal_pdf(-50, 1), normal_pdf(50, 1), grid) == pytest.approx(1.0, abs=1e-9)

    def test_nan_density_rejected(self):
        grid = grid_around([0.0], [0.0], 1.0, 11)
        with pytest.raises(NumericError):
            hellinger_quadrature(lambda x: np.full(len(x), np.nan), normal_pdf(0, 1), grid)


class TestGaussianHellinger:
    def test_identical(self):
        S = random_spd(np.random.default_rng(2), 2)
        assert gaussian_hellinger([1.0, 2.0], S, [1.0, 2.0], S) == 0.0

    def test_shifted_mean(self):
        val = squared_gaussian_hellinger([2.0, 0.0], np.eye(2), [0.0, 0.0], np.eye(2))
        assert val == pytest.approx(1 - math.exp(-0.5), rel=1e-14)
        assert val == pytest.approx(0.3934693, abs=1e-7)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 2))
    def test_bounded_and_symmetric(self, seed, d):
        rng = np.random.default_rng(seed)
        mu1, mu2 = rng.normal(0, 3, d), rng.normal(0, 3, d)
        S1, S2 = random_spd(rng, d), random_spd(rng, d)
        h = gaussian_hellinger(mu1, S1, mu2, S2)
        assert 0.0 <= h <= math.sqrt(2)
        assert h == pytest.approx(gaussian_hellinger(mu2, S2, mu1, S1), rel=1e-12, abs=1e-15)

    def test_matches_quadrature_in_2d(self):
        rng = np.random.default_rng(3)
        mu1, mu2 = rng.normal(size=2), rng.normal(size=2)
        S1, S2 = random_spd(rng, 2), random_spd(rng, 2)
        grid = grid_around(np.minimum(mu1, mu2), np.maximum(mu1, mu2), 12.0, 401)
        quad = squared_hellinger_quadrature(
            multivariate_normal(mu1, S1).pdf, multivariate_normal(mu2, S2).pdf, grid
        )
        assert quad == pytest.approx(squared_gaussian_hellinger(mu1, S1, mu2, S2), abs=1e-6)

    def test_rejects_indefinite(self):
        with pytest.raises(DomainError):
            gaussian_hellinger([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]], [0.0, 0.0], np.eye(2))


class TestKl:
    def test_identical(self):
        grid = grid_around([0.0], [0.0], 10.0, 2001)
        assert abs(kl_quadrature(normal_pdf(0, 1), normal_pdf(0, 1), grid)) <= 1e-12

    def test_unit_shift(self):
        grid = grid_around([0.0], [1.0], 15.0, 4001)
        assert kl_quadrature(normal_pdf(0, 1), normal_pdf(1, 1), grid) == pytest.approx(0.5, abs=1e-8)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_dominates_squared_hellinger(self, seed):
        rng = np.random.default_rng(seed)
        m1, m2 = random_mixture(rng, 3, 1), random_mixture(rng, 3, 1)
        p = lambda x: mixture_density(m1, 0.6, x)
        q = lambda x: mixture_density(m2, 0.6, x)
        grid = grid_around([-1.5], [1.5], 6.0, 2001)
        assert kl_quadrature(p, q, grid) >= squared_hellinger_quadrature(p, q, grid) - 1e-12

    def test_vanishing_q(self):
        grid = grid_around([0.0], [0.0], 1.0, 11)
        with pytest.raises(DivergenceError):
            kl_quadrature(normal_pdf(0, 1), lambda x: np.zeros(len(x)), grid)


class TestHellingerMc:
    def test_identical(self):
        p = normal_pdf(0, 1)
        est = hellinger_mc(p, p, lambda n: np.random.default_rng(0).normal(size=(n, 1)), 1000)
        assert abs(est.squared) <= 3 * est.std_error + 1e-15

    def test_agrees_with_quadrature(self):
        rng = np.random.default_rng(4)
        m1, m2 = random_mixture(rng, 3, 2), random_mixture(rng, 3, 2)
        p = lambda x: mixture_density(m1, 0.7, x)
        q = lambda x: mixture_density(m2, 0.7, x)
        draw = np.random.default_rng(5)
        est = hellinger_mc(p, q, lambda n: sample(m1, 0.7, draw, n), 100_000)
        quad = squared_hellinger_quadrature(p, q, grid_around([-1.5, -1.5], [1.5, 1.5], 6.0, 401))
        assert abs(est.squared - quad) <= 4 * est.std_error

    def test_seeded(self):
        m = random_mixture(np.random.default_rng(6), 2, 1)
        p = lambda x: mixture_density(m, 0.5, x)
        q = normal_pdf(0, 1)
        a = hellinger_mc(p, q, lambda n: sample(m, 0.5, np.random.default_rng(7), n), 500)
        b = hellinger_mc(p, q, lambda n: sample(m, 0.5, np.random.default_rng(7), n), 500)
        assert a == b


class TestConvolutionRate:
    sigmas = np.geomspace(0.05, 0.2, 8)

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_slope_two(self, d):
        slope, _ = convolution_rate_check(self.sigmas, d)
        assert abs(slope - 2.0) <= 0.05

    def test_monotone(self):
        _, dist = convolution_rate_check(self.sigmas)
        assert np.all(np.diff(dist) > 0)

    def test_rejects_nonpositive(self):
        with pytest.raises(DomainError):
            convolution_rate_check([0.0, 0.1, 0.2])
