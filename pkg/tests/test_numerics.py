"""Tests for the linear algebra and random-number primitives."""

import numpy as np
import pytest

from services.numerics import Rng, derive_seed, lstsq, sym_eig
from utils.errors import PreconditionError


class TestSymEig:

    def test_identity(self):
        eig = sym_eig(np.eye(3))
        np.testing.assert_allclose(eig.eigenvalues, [1.0, 1.0, 1.0])

    def test_diagonal(self):
        eig = sym_eig(np.diag([2.0, 5.0]))
        np.testing.assert_allclose(eig.eigenvalues, [2.0, 5.0])
        np.testing.assert_allclose(np.abs(eig.eigenvectors), np.eye(2), atol=1e-12)

    def test_random_reconstruction(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(6, 6))
        a = a + a.T
        eig = sym_eig(a)
        q = eig.eigenvectors
        assert np.max(np.abs(q.T @ q - np.eye(6))) <= 1e-8
        assert np.max(np.abs(a - eig.reconstruct())) <= 1e-6 * np.max(np.abs(a))
        assert np.all(np.diff(eig.eigenvalues) >= 0)
        assert eig.eigenvalues.sum() == pytest.approx(np.trace(a), rel=1e-8, abs=1e-10)

    def test_rejects_asymmetric(self):
        with pytest.raises(PreconditionError):
            sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_rejects_non_square(self):
        with pytest.raises(PreconditionError):
            sym_eig(np.ones((2, 3)))


class TestLstsq:

    def test_identity_design(self):
        np.testing.assert_allclose(lstsq(np.eye(2), np.array([3.0, 4.0])), [3.0, 4.0])

    def test_minimum_norm_split(self):
        a = np.array([[1.0, 1.0], [0.0, 0.0]])
        np.testing.assert_allclose(lstsq(a, np.array([2.0, 0.0])), [1.0, 1.0], atol=1e-10)

    def test_matches_normal_equations(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(20, 5))
        b = rng.normal(size=(20, 1))
        x = lstsq(a, b)
        oracle = np.linalg.inv(a.T @ a) @ a.T @ b
        np.testing.assert_allclose(a @ x - b, a @ oracle - b, atol=1e-8)
        assert np.max(np.abs(a.T @ (a @ x - b))) <= 1e-6

    def test_ridge_matches_closed_form_and_is_repeatable(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(10, 4))
        b = rng.normal(size=(10, 2))
        x = lstsq(a, b, ridge=0.5)
        np.testing.assert_allclose(x, np.linalg.solve(a.T @ a + 0.5 * np.eye(4), a.T @ b), atol=1e-10)
        assert np.array_equal(x, lstsq(a, b, ridge=0.5))

    def test_empty_right_hand_side(self):
        assert lstsq(np.eye(3), np.zeros((3, 0))).shape == (3, 0)

    def test_dimension_mismatch(self):
        with pytest.raises(PreconditionError):
            lstsq(np.eye(3), np.ones(2))

    def test_negative_ridge(self):
        with pytest.raises(PreconditionError):
            lstsq(np.eye(2), np.ones(2), ridge=-1.0)


class TestRng:

    def test_reproducible(self):
        assert Rng(42).uniform() == Rng(42).uniform()

    def test_shuffle_reproducible(self):
        values = [1, 2, 3, 4, 5]
        first = Rng(9).shuffle(values)
        np.testing.assert_array_equal(first, Rng(9).shuffle(values))
        assert sorted(first.tolist()) == values
        assert values == [1, 2, 3, 4, 5]

    def test_uniform_mean(self):
        draws = Rng(5).uniform_array(100_000)
        assert abs(draws.mean() - 0.5) < 0.01
        assert draws.min() >= 0.0 and draws.max() < 1.0

    def test_choice_without_replacement(self):
        picked = Rng(1).choice(10, size=10, replace=False)
        assert sorted(picked.tolist()) == list(range(10))

    def test_seed_range(self):
        with pytest.raises(PreconditionError):
            Rng(-1)
        with pytest.raises(PreconditionError):
            Rng(2 ** 64)


class TestDeriveSeed:

    def test_stable_and_in_range(self):
        seed = derive_seed(0, "divnet", 0.5, 2)
        assert seed == derive_seed(0, "divnet", 0.5, 2)
        assert 0 <= seed < 2 ** 64

    def test_labels_matter(self):
        seeds = {derive_seed(0, name, 0.5, 0) for name in ("random", "dpp", "divnet")}
        assert len(seeds) == 3
        assert derive_seed(0, "dpp", 0.5, 0) != derive_seed(1, "dpp", 0.5, 0)
