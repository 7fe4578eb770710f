import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shallowgen.constructor import (
    IndicatorSpec,
    brute_force_two_mixture,
    construct_direct,
    in_theorem1_sieve,
    l2_step_gap,
    merge_displacement_bound,
    relu_from_step,
    relu_indicator,
    step_from_measure,
    theorem1_generator,
)
from shallowgen.errors import InfeasibleError
from shallowgen.gen_density import GenerativeDensity, exact_density
from shallowgen.measures import DiscreteMeasure, mixture_density
from shallowgen.metrics import grid_around, hellinger_quadrature, squared_hellinger_quadrature
from shallowgen.networks import StepGenerator, l2_distance_sq, sup_norm
from shallowgen.verify import piecewise_l2_sq, pipeline_fixture


def random_step(rng, n, d):
    cuts = np.concatenate([[0.0], np.sort(rng.uniform(0.05, 0.95, n - 1)), [1.0]])
    while np.min(np.diff(cuts)) < 0.01:
        cuts = np.concatenate([[0.0], np.sort(rng.uniform(0.05, 0.95, n - 1)), [1.0]])
    return StepGenerator(cuts, rng.normal(0, 1.5, (n, d)))


class TestStepFromMeasure:
    def test_single_atom(self):
        s = step_from_measure(DiscreteMeasure([[0.4, -0.2]], [1.0]))
        np.testing.assert_array_equal(s(np.array([0.0, 0.5, 1.0])), [[0.4, -0.2]] * 3)

    def test_two_atoms_cuts(self):
        m = DiscreteMeasure([[-1.3, -1.3], [1.3, 1.3]], [0.5, 0.5])
        np.testing.assert_array_equal(step_from_measure(m).cut_points, [0.0, 0.5, 1.0])

    def test_mass_recovery(self):
        m = DiscreteMeasure([[0.0], [1.0], [2.0]], [0.25, 0.6, 0.15])
        z = np.random.default_rng(0).uniform(size=1_000_000)
        vals = step_from_measure(m)(z)[:, 0]
        for a, w in zip(m.atoms[:, 0], m.weights):
            assert abs(np.mean(vals == a) - w) <= 4 * math.sqrt(w * (1 - w) / z.size)


class TestReluIndicator:
    spec = IndicatorSpec(np.array([1.5, -0.5]), 0.2, 0.6, 0.05)

    def test_plateau(self):
        np.testing.assert_array_equal(relu_indicator(self.spec)(0.4), [1.5, -0.5])

    def test_ramp_endpoints(self):
        g = relu_indicator(self.spec)
        np.testing.assert_array_equal(g(0.2), [0.0, 0.0])
        np.testing.assert_allclose(g(0.25), [1.5, -0.5], rtol=1e-14)
        np.testing.assert_array_equal(g(0.6), [0.0, 0.0])

    def test_error_confined_to_ramps(self):
        g = relu_indicator(self.spec)
        z = np.linspace(0, 1, 20001)
        target = np.where(((z > 0.2) & (z <= 0.6))[:, None], self.spec.value, 0.0)
        err = np.max(np.abs(g.forward(z) - target), axis=1)
        ramps = ((z > 0.2) & (z < 0.25)) | ((z > 0.55) & (z <= 0.6))
        assert np.all(err[~ramps] <= 1e-12)
        assert np.max(err) <= np.max(np.abs(self.spec.value)) + 1e-12

    def test_ramp_too_wide(self):
        with pytest.raises(InfeasibleError):
            IndicatorSpec(np.array([1.0]), 0.2, 0.3, 0.05)


class TestReluFromStep:
    def test_width(self):
        s = random_step(np.random.default_rng(1), 5, 2)
        assert relu_from_step(s, 1e-3).d1 == 20

    def test_plateaus_exact(self):
        s = random_step(np.random.default_rng(2), 4, 2)
        kappa = 1e-3
        g = relu_from_step(s, kappa)
        lo, hi = s.cut_points[:-1], s.cut_points[1:]
        z = np.concatenate([np.linspace(a + kappa, b - kappa, 50) for a, b in zip(lo, hi)])
        np.testing.assert_allclose(g.forward(z), s(z), atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_l2_gap_identity(self, seed):
        rng = np.random.default_rng(10 + seed)
        s = random_step(rng, int(rng.integers(1, 6)), int(rng.integers(1, 3)))
        kappa = float(rng.uniform(1e-4, 4e-3))
        g = relu_from_step(s, kappa)
        assert abs(piecewise_l2_sq(s, g) - l2_step_gap(s, kappa)) <= 1e-12
        assert l2_distance_sq(s, g) == pytest.approx(l2_step_gap(s, kappa), rel=1e-9)


class TestL2StepGap:
    def test_zero_values(self):
        assert l2_step_gap(StepGenerator([0.0, 0.5, 1.0], [[0.0], [0.0]]), 1e-3) == 0.0

    def test_two_mixture_value(self):
        s = StepGenerator([0.0, 0.5, 1.0], [[1.3, 1.3], [-1.3, -1.3]])
        assert l2_step_gap(s, 1e-5) == pytest.approx(4.5067e-5, abs=1e-9)
        assert l2_step_gap(s, 1e-5) == pytest.approx((2 / 3) * 1e-5 * 4 * 1.69, rel=1e-14)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(1e-6, 1e-3))
    def test_linear_in_kappa(self, seed, kappa):
        s = random_step(np.random.default_rng(seed), 3, 2)
        assert l2_step_gap(s, 2 * kappa) == pytest.approx(2 * l2_step_gap(s, kappa), rel=1e-13)

    def test_kappa_too_large(self):
        with pytest.raises(InfeasibleError):
            l2_step_gap(StepGenerator([0.0, 0.1, 1.0], [[1.0], [2.0]]), 0.05)


class TestBruteForce:
    m = np.array([1.3, 1.3])

    def test_plateau_values(self):
        # ramp terms of size z / kappa cancel on the plateau, so agreement is to rounding
        g = brute_force_two_mixture(self.m).generator
        np.testing.assert_allclose(g(0.25), self.m, rtol=1e-10)
        np.testing.assert_allclose(g(0.75), -self.m, rtol=1e-10)
        assert g.d1 == 8

    def test_sup_norm(self):
        assert sup_norm(brute_force_two_mixture(self.m).generator) == pytest.approx(1.3, rel=1e-12)

    def test_hellinger_to_mixture(self):
        p = brute_force_two_mixture(self.m)
        truth = DiscreteMeasure([self.m, -self.m], [0.5, 0.5])
        grid = grid_around(-self.m, self.m, 8.0, 401)
        dh2 = squared_hellinger_quadrature(lambda x: mixture_density(truth, 1.0, x), lambda x: exact_density(p, x), grid)
        bound = l2_step_gap(step_from_measure(truth), 1e-5) / 8.0
        assert bound == pytest.approx(5.63e-6, abs=1e-8)
        assert dh2 <= bound + 1e-9

    def test_kappa_range(self):
        with pytest.raises(InfeasibleError):
            brute_force_two_mixture(self.m, kappa=0.3)


class TestMergeDisplacementBound:
    def test_nothing_dropped(self):
        m = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5])
        assert merge_displacement_bound(m, 0.1, 1.0) == 0.0

    def test_hand_value(self):
        m = DiscreteMeasure([[0.0], [2.0]], [0.9, 0.1])
        assert merge_displacement_bound(m, 0.2, 0.5) == pytest.approx(math.sqrt(0.1 * 4 / 2.0), rel=1e-15)

    def test_infeasible(self):
        with pytest.raises(InfeasibleError):
            merge_displacement_bound(DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5]), 0.9, 1.0)


class TestConstructDirect:
    def test_rows_and_width(self):
        m = DiscreteMeasure([[1.3, 1.3], [-1.3, -1.3]], [0.5, 0.5])
        g, diag = construct_direct(m, 1.0, 1e-5)
        assert g.d1 == 8
        assert [r.stage for r in diag.stages] == ["step", "relu"]
        assert diag.all_hold


class TestTheorem1Generator:
    @pytest.fixture(scope="class")
    @staticmethod
    def run():
        m = pipeline_fixture()
        return m, theorem1_generator(m, 0.3, 1.0, 1, 2.0)

    def test_stage_bounds(self, run):
        _, (_, diag) = run
        assert [r.stage for r in diag.stages] == ["quantize", "merge", "extend", "step", "relu"]
        for r in diag.stages:
            assert r.measured <= r.bound + 1e-9, r

    def test_in_sieve(self, run):
        _, (g, diag) = run
        assert in_theorem1_sieve(g, diag)
        assert g.d1 == 4 * len(diag.step)

    def test_mass_preserved(self, run):
        _, (_, diag) = run
        for key in ("quantized", "merged", "extended"):
            assert abs(math.fsum(diag.measures[key].weights) - 1.0) <= 1e-12

    def test_end_to_end_shrinks_with_kappa(self, run):
        m, (_, diag) = run
        h2 = diag.measures["extended"]
        step = step_from_measure(h2)
        grid = grid_around(m.atoms.min(axis=0), m.atoms.max(axis=0), 2.4, 4001)
        target = lambda x: mixture_density(m, 0.3, x)
        shortest = float(step.lengths.min())
        kappas = [shortest / 4, shortest / 16, shortest / 64]
        dists = [
            hellinger_quadrature(target, lambda x, k=k: exact_density(GenerativeDensity(relu_from_step(step, k), 0.3), x), grid)
            for k in kappas
        ]
        assert dists[0] > dists[1] > dists[2]

    def test_sigma_domain(self):
        with pytest.raises(ValueError):
            theorem1_generator(pipeline_fixture(), 1.0, 1.0, 1, 2.0)
