"""Tests for kernel construction, size calibration and the exact samplers."""

import itertools
from collections import Counter

import numpy as np
import pytest

from services.dpp import (
    DppKernel, build_kernel, elementary_symmetric_log, enumerate_dpp, expected_size,
    expected_size_variance, greedy_map, load_kernel, marginal_kernel, mean_pairwise_similarity,
    rescale_to_k, sample_best_of_m, sample_dpp, sample_kdpp, save_kernel, subset_log_det,
)
from services.mlp import ActivationMatrix
from services.numerics import Rng
from utils.errors import FormatError, PreconditionError

from conftest import random_pd_matrix, total_variation


class TestBuildKernel:

    def test_identical_vectors(self):
        acts = ActivationMatrix(1, np.array([[0.2, 0.7], [0.2, 0.7], [0.9, 0.1]]))
        kernel = build_kernel(acts, beta=1.0, epsilon=0.0)
        assert kernel.base[0, 1] == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_unit_vectors(self):
        acts = ActivationMatrix(1, np.array([[1.0, 0.0], [0.0, 1.0]]))
        kernel = build_kernel(acts, beta=1.0, epsilon=0.01)
        assert kernel.matrix[0, 1] == pytest.approx(np.exp(-2.0), abs=1e-6)
        np.testing.assert_array_equal(np.diag(kernel.matrix), [1.0 + 0.01, 1.0 + 0.01])

    def test_auto_beta(self):
        acts = ActivationMatrix(1, np.full((2, 60000), 0.5))
        assert build_kernel(acts).beta == pytest.approx(10 / 60000)

    def test_diagonal_is_one_plus_epsilon(self):
        acts = ActivationMatrix(1, np.random.default_rng(0).uniform(size=(7, 30)))
        kernel = build_kernel(acts, epsilon=0.05)
        assert np.all(np.diag(kernel.base) == 1.0 + 0.05)
        assert kernel.gamma == 1.0

    def test_permutation_equivariant(self):
        values = np.random.default_rng(1).uniform(size=(6, 20))
        order = np.array([3, 0, 5, 1, 4, 2])
        plain = build_kernel(ActivationMatrix(1, values)).matrix
        permuted = build_kernel(ActivationMatrix(1, values[order])).matrix
        np.testing.assert_allclose(permuted, plain[np.ix_(order, order)], atol=1e-12)

    def test_non_finite(self):
        with pytest.raises(PreconditionError):
            build_kernel(ActivationMatrix(1, np.array([[np.nan, 0.1]])))


class TestExpectedSize:

    def test_identity(self):
        assert expected_size(DppKernel.from_matrix(np.eye(5))) == pytest.approx(2.5)

    def test_single_neuron(self):
        assert expected_size(DppKernel.from_matrix([[3.0]])) == pytest.approx(0.75)

    def test_matches_trace_formula(self, random_kernel):
        for seed in range(20):
            kernel = random_kernel(6, seed)
            matrix = kernel.matrix
            oracle = np.trace(matrix @ np.linalg.inv(np.eye(6) + matrix))
            assert expected_size(kernel) == pytest.approx(oracle, abs=1e-8)

    def test_variance_of_identity(self):
        assert expected_size_variance(DppKernel.from_matrix(np.eye(4))) == pytest.approx(1.0)


class TestRescale:

    def test_closed_form_identity_at_current_size(self, random_kernel):
        kernel = random_kernel(6, 1)
        scaled = rescale_to_k(kernel, expected_size(kernel), mode="paper")
        assert scaled.gamma == pytest.approx(1.0, abs=1e-12)

    def test_exact_mode_identity_kernel(self):
        scaled = rescale_to_k(DppKernel.from_matrix(np.eye(6)), 3, mode="exact")
        assert scaled.gamma == pytest.approx(1.0, abs=1e-5)

    def test_exact_mode_hits_target(self, random_kernel):
        scaled = rescale_to_k(random_kernel(8, 2), 3, mode="exact")
        assert abs(expected_size(scaled) - 3) < 1e-6

    def test_closed_form_exact_for_flat_spectrum(self):
        scaled = rescale_to_k(DppKernel.from_matrix(2.0 * np.eye(5)), 2, mode="paper")
        assert expected_size(scaled) == pytest.approx(2.0)

    @pytest.mark.parametrize("target", [0, 6, -1])
    def test_target_out_of_range(self, random_kernel, target):
        with pytest.raises(PreconditionError):
            rescale_to_k(random_kernel(6, 0), target)


class TestSampleDpp:

    def test_diag_one_one(self):
        kernel = DppKernel.from_matrix(np.eye(2))
        oracle = dict(enumerate_dpp(kernel))
        for probability in oracle.values():
            assert probability == pytest.approx(0.25)
        rng = Rng(0)
        counts = Counter(sample_dpp(kernel, rng).indices for _ in range(8000))
        for subset in oracle:
            assert abs(counts[subset] / 8000 - 0.25) < 0.03

    def test_distribution_matches_enumeration(self, random_kernel):
        kernel = random_kernel(5, 11)
        rng = Rng(1)
        samples = [sample_dpp(kernel, rng).indices for _ in range(20000)]
        assert total_variation(samples, enumerate_dpp(kernel)) < 0.03

    def test_mean_size_within_three_sigma(self, random_kernel):
        kernel = random_kernel(6, 4)
        rng = Rng(2)
        draws = 20000
        sizes = [sample_dpp(kernel, rng).size for _ in range(draws)]
        sigma = np.sqrt(expected_size_variance(kernel) / draws)
        assert abs(np.mean(sizes) - expected_size(kernel)) < 3 * sigma

    def test_large_gamma_fills_the_set(self, random_kernel):
        kernel = random_kernel(6, 5).with_gamma(1e8)
        assert all(sample_dpp(kernel, Rng(seed)).size == 6 for seed in range(20))

    def test_deterministic(self, random_kernel):
        kernel = random_kernel(8, 6)
        assert sample_dpp(kernel, Rng(3)) == sample_dpp(kernel, Rng(3))


class TestSampleKdpp:

    def test_full_size(self, random_kernel):
        assert sample_kdpp(random_kernel(5, 0), 5, Rng(0)).indices == (0, 1, 2, 3, 4)

    def test_ratio_on_diagonal(self):
        kernel = DppKernel.from_matrix(np.diag([1.0, 3.0]))
        rng = Rng(4)
        counts = Counter(sample_kdpp(kernel, 1, rng).indices for _ in range(20000))
        assert counts[(1,)] / counts[(0,)] == pytest.approx(3.0, rel=0.1)
        assert dict(enumerate_dpp(kernel, size=1))[(1,)] == pytest.approx(0.75)

    def test_distribution_matches_enumeration(self, random_kernel):
        kernel = random_kernel(6, 12)
        rng = Rng(5)
        samples = [sample_kdpp(kernel, 3, rng).indices for _ in range(20000)]
        assert all(len(s) == 3 for s in samples)
        assert total_variation(samples, enumerate_dpp(kernel, size=3)) < 0.03

    def test_size_above_n(self, random_kernel):
        with pytest.raises(PreconditionError):
            sample_kdpp(random_kernel(4, 0), 5, Rng(0))

    def test_size_above_rank(self):
        with pytest.raises(PreconditionError):
            sample_kdpp(DppKernel.from_matrix(np.ones((3, 3))), 2, Rng(0))

    @pytest.mark.parametrize("scale", [0.1, 10.0])
    def test_scale_invariance(self, scale):
        matrix = random_pd_matrix(7, 3)
        plain = enumerate_dpp(DppKernel.from_matrix(matrix), size=3)
        scaled = enumerate_dpp(DppKernel.from_matrix(scale * matrix), size=3)
        for (subset_a, p_a), (subset_b, p_b) in zip(plain, scaled):
            assert subset_a == subset_b
            assert abs(p_a - p_b) < 1e-9


class TestElementarySymmetric:

    def test_small_values(self):
        table = elementary_symmetric_log(np.array([1.0, 2.0, 3.0]), 3)
        np.testing.assert_allclose(np.exp(table[:, 3]), [1.0, 6.0, 11.0, 6.0])

    def test_no_overflow(self):
        values = np.full(3000, 1e3)
        table = elementary_symmetric_log(values, 50)
        assert np.all(np.isfinite(table[:, -1]))


class TestBestOfM:

    def test_single_draw_matches_kdpp(self, random_kernel):
        kernel = random_kernel(7, 1)
        assert sample_best_of_m(kernel, 3, 1, Rng(8)) == sample_kdpp(kernel, 3, Rng(8))

    def test_returns_best_candidate(self, random_kernel):
        kernel = random_kernel(7, 2)
        best = sample_best_of_m(kernel, 3, 20, Rng(9))
        rng = Rng(9)
        candidates = [sample_kdpp(kernel, 3, rng) for _ in range(20)]
        assert best.log_det == max(c.log_det for c in candidates)

    def test_favours_dominant_subset(self):
        matrix = np.full((5, 5), 0.9) + 0.1 * np.eye(5)
        matrix[:2, :] = 0.0
        matrix[:, :2] = 0.0
        matrix[0, 0] = matrix[1, 1] = 4.0
        kernel = DppKernel.from_matrix(matrix)
        dominant = max(enumerate_dpp(kernel, size=2), key=lambda item: item[1])[0]
        rng = Rng(10)
        plain = sum(sample_kdpp(kernel, 2, rng).indices == dominant for _ in range(300))
        best = sum(sample_best_of_m(kernel, 2, 50, rng).indices == dominant for _ in range(300))
        assert best > plain


class TestGreedy:

    def test_picks_largest_diagonal(self):
        assert greedy_map(DppKernel.from_matrix(np.diag([1.0, 5.0, 2.0])), 1).indices == (1,)

    def test_full_size(self, random_kernel):
        assert greedy_map(random_kernel(6, 0), 6).indices == tuple(range(6))

    def test_beats_random_subsets(self, random_kernel):
        kernel = random_kernel(6, 7)
        greedy = greedy_map(kernel, 3)
        rng = np.random.default_rng(0)
        random_dets = [subset_log_det(kernel.matrix, rng.choice(6, 3, replace=False)) for _ in range(1000)]
        assert greedy.log_det >= np.mean(random_dets)

    def test_increments_match_determinants(self, random_kernel):
        kernel = random_kernel(6, 8)
        greedy = greedy_map(kernel, 3)
        best = max(itertools.combinations(range(6), 1),
                   key=lambda s: subset_log_det(kernel.matrix, s))
        assert best[0] in greedy.indices
        assert greedy.log_det == pytest.approx(subset_log_det(kernel.matrix, greedy.indices))


class TestEnumerate:

    def test_sums_to_one(self, random_kernel):
        for seed in range(5):
            total = sum(p for _, p in enumerate_dpp(random_kernel(6, seed)))
            assert total == pytest.approx(1.0, abs=1e-9)

    def test_marginals_match_marginal_kernel(self, random_kernel):
        kernel = random_kernel(5, 3)
        marginals = np.zeros(5)
        for subset, probability in enumerate_dpp(kernel):
            marginals[list(subset)] += probability
        np.testing.assert_allclose(marginals, np.diag(marginal_kernel(kernel)), atol=1e-8)

    def test_refuses_large_sets(self):
        with pytest.raises(PreconditionError):
            enumerate_dpp(DppKernel.from_matrix(np.eye(17)))


class TestKernelType:

    def test_rejects_asymmetric(self):
        with pytest.raises(PreconditionError):
            DppKernel.from_matrix([[1.0, 0.5], [0.0, 1.0]])

    def test_rejects_indefinite(self):
        with pytest.raises(PreconditionError):
            DppKernel.from_matrix([[1.0, 2.0], [2.0, 1.0]])

    def test_with_gamma_shares_eigendecomposition(self, random_kernel):
        kernel = random_kernel(5, 0)
        scaled = kernel.with_gamma(3.0)
        assert scaled.base_eig is kernel.base_eig
        np.testing.assert_allclose(scaled.eigenvalues, 3.0 * kernel.eigenvalues)

    def test_save_and_load(self, tmp_path, random_kernel):
        kernel = random_kernel(4, 1).with_gamma(2.5)
        save_kernel(kernel, tmp_path / "kernel.npz")
        loaded = load_kernel(tmp_path / "kernel.npz")
        assert loaded.gamma == 2.5 and loaded.size == 4
        np.testing.assert_array_equal(loaded.matrix, kernel.matrix)

    def test_load_garbage(self, tmp_path):
        (tmp_path / "kernel.npz").write_bytes(b"junk")
        with pytest.raises(FormatError):
            load_kernel(tmp_path / "kernel.npz")


def test_mean_pairwise_similarity():
    acts = ActivationMatrix(1, np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]]))
    assert mean_pairwise_similarity(acts, [0, 1], beta=1.0) == pytest.approx(1.0)
    assert mean_pairwise_similarity(acts, [0, 2], beta=1.0) == pytest.approx(np.exp(-2.0))


class TestBandwidthLimits:
    """Expected size as the RBF bandwidth goes to zero or grows large."""

    @pytest.fixture
    def acts(self):
        return ActivationMatrix(1, np.random.default_rng(11).uniform(size=(10, 25)))

    def test_small_beta_keeps_about_one_neuron(self, acts):
        kernel = build_kernel(acts, beta=1e-9, epsilon=0.01)
        assert expected_size(kernel) == pytest.approx(10.01 / 11.01 + 9 * 0.01 / 1.01, abs=1e-4)

    def test_large_beta_keeps_about_half(self, acts):
        kernel = build_kernel(acts, beta=1e6, epsilon=0.01)
        assert expected_size(kernel) == pytest.approx(10 * 1.01 / 2.01, abs=1e-6)
