import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import multivariate_normal, norm

from shallowgen.errors import DomainError, InfeasibleError
from shallowgen.measures import (
    DiscreteMeasure,
    GridSpec,
    extend_partition,
    merge_small_atoms,
    mixture_density,
    mixture_log_density,
    partition_cells,
    quantize_to_grid,
    sample,
)


def random_measure(rng, n, d, lo=-2.0, hi=2.0):
    return DiscreteMeasure(rng.uniform(lo, hi, (n, d)), rng.dirichlet(np.ones(n)))


@st.composite
def measures(draw, max_atoms=12, max_dim=2, half_width=2.0):
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(1, max_atoms))
    d = draw(st.integers(1, max_dim))
    return random_measure(np.random.default_rng(seed), n, d, -half_width, half_width)


class TestDiscreteMeasure:
    def test_rejects_bad_weights(self):
        with pytest.raises(ValueError):
            DiscreteMeasure([[0.0], [1.0]], [0.5, 0.6])
        with pytest.raises(ValueError):
            DiscreteMeasure([[0.0], [1.0]], [1.0, 0.0])

    def test_rejects_duplicate_atoms(self):
        with pytest.raises(ValueError):
            DiscreteMeasure([[0.5], [0.5]], [0.5, 0.5])

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            DiscreteMeasure([[0.0], [1.0]], [1.0])

    def test_arrays_are_read_only(self):
        m = DiscreteMeasure([[0.0]], [1.0])
        with pytest.raises(ValueError):
            m.atoms[0, 0] = 1.0

    def test_text_round_trip(self, tmp_path):
        m = random_measure(np.random.default_rng(3), 7, 2)
        m.save(tmp_path / "m.txt")
        back = DiscreteMeasure.load(tmp_path / "m.txt")
        np.testing.assert_array_equal(back.atoms, m.atoms)
        np.testing.assert_array_equal(back.weights, m.weights)


class TestQuantize:
    def test_on_grid_atom_unchanged(self):
        out = quantize_to_grid(DiscreteMeasure([[0.25]], [1.0]), GridSpec(0.125, 1.0, 1))
        assert out.atoms[0, 0] == 0.25

    def test_snaps_to_nearest(self):
        out = quantize_to_grid(DiscreteMeasure([[0.3]], [1.0]), GridSpec(0.125, 1.0, 1))
        assert out.atoms[0, 0] == 0.25

    def test_colliding_atoms_merge(self):
        out = quantize_to_grid(DiscreteMeasure([[0.3], [0.2]], [0.5, 0.5]), GridSpec(0.125, 1.0, 1))
        assert len(out) == 1
        assert out.atoms[0, 0] == 0.25
        assert out.weights[0] == 1.0

    def test_midpoint_goes_down(self):
        out = quantize_to_grid(DiscreteMeasure([[0.1875]], [1.0]), GridSpec(0.125, 1.0, 1))
        assert out.atoms[0, 0] == 0.125

    def test_outside_cube_rejected(self):
        with pytest.raises(DomainError):
            quantize_to_grid(DiscreteMeasure([[1.5]], [1.0]), GridSpec(0.125, 1.0, 1))

    @settings(max_examples=60, deadline=None)
    @given(measures(), st.sampled_from([0.05, 0.125, 0.25]))
    def test_displacement_and_mass(self, m, spacing):
        # the cube edge 2.0 is a lattice point for these spacings
        grid = GridSpec(spacing, 2.0, m.dim)
        out = quantize_to_grid(m, grid)
        assert abs(math.fsum(out.weights) - 1.0) <= 1e-12
        k = out.atoms / spacing
        np.testing.assert_allclose(k, np.round(k), atol=1e-9)
        for atom in m.atoms:
            dist = np.min(np.linalg.norm(out.atoms - atom, axis=1))
            assert dist <= math.sqrt(m.dim) / 2 * spacing + 1e-12

    @settings(max_examples=60, deadline=None)
    @given(measures(), st.sampled_from([0.3, 0.7]))
    def test_boundary_strip_moves_less_than_a_spacing(self, m, spacing):
        # lattice points stop short of the cube edge, so clipped atoms move further than half a spacing
        out = quantize_to_grid(m, GridSpec(spacing, 2.0, m.dim))
        assert np.all(np.abs(out.atoms) <= 2.0)
        for atom in m.atoms:
            gap = np.min(np.max(np.abs(out.atoms - atom), axis=1))
            assert gap < spacing


class TestMerge:
    def test_hand_example(self):
        m = DiscreteMeasure([[0.0], [1.0], [2.0], [3.0]], [0.5, 0.3, 0.15, 0.05])
        out = merge_small_atoms(m, 0.1)
        np.testing.assert_allclose(out.weights, [0.55, 0.3, 0.15], atol=1e-15)
        np.testing.assert_array_equal(out.atoms[:, 0], [0.0, 1.0, 2.0])

    def test_identity_when_all_heavy(self):
        m = DiscreteMeasure([[0.0], [1.0]], [0.6, 0.4])
        out = merge_small_atoms(m, 0.1)
        np.testing.assert_array_equal(out.weights, m.weights)
        np.testing.assert_array_equal(out.atoms, m.atoms)

    def test_collapse_to_single_atom(self):
        out = merge_small_atoms(DiscreteMeasure([[0.0], [1.0]], [0.9, 0.1]), 0.2)
        assert len(out) == 1
        assert out.weights[0] == pytest.approx(1.0, abs=1e-15)

    def test_tie_goes_to_lexicographically_smallest(self):
        m = DiscreteMeasure([[1.0], [-1.0], [5.0]], [0.45, 0.45, 0.1])
        out = merge_small_atoms(m, 0.2)
        heavy = out.atoms[np.argmax(out.weights), 0]
        assert heavy == -1.0

    def test_nothing_heavy_is_infeasible(self):
        with pytest.raises(InfeasibleError) as exc:
            merge_small_atoms(DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5]), 0.9)
        assert exc.value.stage == "merge"

    @settings(max_examples=60, deadline=None)
    @given(measures(), st.floats(0.0, 1.0))
    def test_mass_and_threshold(self, m, q):
        threshold = float(np.quantile(m.weights, q))
        out = merge_small_atoms(m, threshold)
        assert abs(math.fsum(out.weights) - 1.0) <= 1e-12
        assert np.all(out.weights >= threshold)
        assert out.weights.max() >= m.weights.max()


def enumerate_cells(half_width, cap, d):
    """Oracle: cells of the uniform layout, listed axis by axis."""
    k = 1
    while 2 * half_width / k * math.sqrt(d) > cap:
        k += 1
    side = 2 * half_width / k
    ticks = [-half_width + (i + 0.5) * side for i in range(k)]
    cells = [[t] for t in ticks]
    for _ in range(d - 1):
        cells = [c + [t] for c in cells for t in ticks]
    return np.array(cells), side


class TestExtend:
    def test_already_covering_is_identity(self):
        m = DiscreteMeasure([[0.0]], [1.0])
        out = extend_partition(m, GridSpec(0.1, 0.5, 1), 1.0, 0.01)
        assert len(out) == 1

    def test_two_fillers(self):
        m = DiscreteMeasure([[0.0]], [1.0])
        out = extend_partition(m, GridSpec(0.1, 1.0, 1), 1.0, 0.01)
        centers, _ = enumerate_cells(1.0, 1.0, 1)
        expected = sum(np.min(np.abs(c - m.atoms[:, 0])) > 0.1 / 3 for c in centers[:, 0])
        assert len(out) - 1 == expected == 2
        assert abs(math.fsum(out.weights) - 1.0) <= 1e-12
        np.testing.assert_allclose(out.weights[1:], 0.01)

    @pytest.mark.parametrize("d,hw,cap", [(1, 1.0, 0.3), (2, 1.0, 0.5), (2, 1.5, 0.7), (3, 1.0, 0.9)])
    def test_cell_layout_matches_oracle(self, d, hw, cap):
        centers, side = partition_cells(GridSpec(0.05, hw, d), cap)
        ref, ref_side = enumerate_cells(hw, cap, d)
        assert side == pytest.approx(ref_side, rel=1e-15)
        np.testing.assert_allclose(np.sort(centers, axis=0), np.sort(ref, axis=0), atol=1e-14)
        assert side * math.sqrt(d) <= cap + 1e-12

    def test_unfundable_fillers(self):
        m = DiscreteMeasure([[0.0]], [1.0])
        with pytest.raises(InfeasibleError) as exc:
            extend_partition(m, GridSpec(0.01, 1.0, 1), 0.01, 0.1)
        assert exc.value.stage == "extend"


class TestMixtureDensity:
    def test_standard_normal_mode(self):
        m = DiscreteMeasure([[0.0]], [1.0])
        assert mixture_density(m, 1.0, [0.0]) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-15)

    def test_symmetric_pair_at_origin(self):
        m = DiscreteMeasure([[-1.3], [1.3]], [0.5, 0.5])
        assert mixture_density(m, 1.0, [0.0]) == pytest.approx(0.1713686, abs=5e-8)
        assert mixture_density(m, 1.0, [0.0]) == pytest.approx(norm.pdf(1.3), rel=1e-14)

    def test_far_point_underflows_cleanly(self):
        m = DiscreteMeasure([[0.0, 0.0]], [1.0])
        v = mixture_density(m, 1.0, np.array([[1e3, 1e3], [1e200, 0.0]]))
        assert np.all(v == 0.0)
        assert np.all(np.isfinite(mixture_log_density(m, 1.0, np.array([[1e3, 1e3]]))))

    def test_matches_scipy_oracle(self):
        rng = np.random.default_rng(11)
        m = random_measure(rng, 6, 2)
        sigma = 0.7
        x = rng.normal(size=(50, 2))
        ref = sum(w * multivariate_normal(a, sigma**2 * np.eye(2)).pdf(x) for a, w in zip(m.atoms, m.weights))
        np.testing.assert_allclose(mixture_density(m, sigma, x), ref, rtol=1e-12)


class TestSample:
    def test_zero_sigma_single_atom(self):
        m = DiscreteMeasure([[0.3, -0.2]], [1.0])
        x = sample(m, 0.0, np.random.default_rng(0), 50)
        assert np.all(x == m.atoms[0])

    def test_frequencies(self):
        m = DiscreteMeasure([[0.0], [1.0], [2.0]], [0.2, 0.5, 0.3])
        n = 100_000
        x = sample(m, 0.0, np.random.default_rng(1), n)
        for a, w in zip(m.atoms[:, 0], m.weights):
            freq = np.mean(x[:, 0] == a)
            assert abs(freq - w) <= 4 * math.sqrt(w * (1 - w) / n)

    def test_seeded(self):
        m = DiscreteMeasure([[0.0], [1.0]], [0.5, 0.5])
        a = sample(m, 1.0, np.random.default_rng(5), 10)
        b = sample(m, 1.0, np.random.default_rng(5), 10)
        np.testing.assert_array_equal(a, b)
