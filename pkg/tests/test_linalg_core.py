import numpy as np
import pytest

from errors import ConfigError, DataError
from linalg_core import (
    RatingMatrix,
    as_mask,
    frobenius_norm,
    nuclear_norm,
    numerical_rank,
    project_observed,
    project_unobserved,
    soft_threshold_svd,
    svd,
)


class TestRatingMatrix:
    def test_rejects_nonzero_unobserved_entries(self):
        with pytest.raises(DataError):
            RatingMatrix(np.array([[4.0, 1.0], [0.0, 2.0]]), np.array([[True, False], [False, True]]))

    def test_rejects_ratings_outside_scale(self):
        with pytest.raises(DataError):
            RatingMatrix(np.array([[7.0]]), np.array([[True]]))

    def test_scale_none_skips_bounds(self):
        x = RatingMatrix(np.array([[-3.0]]), np.array([[True]]), scale=None)
        assert x.num_observed == 1

    def test_arrays_are_read_only(self):
        x = RatingMatrix.from_dense(np.full((2, 2), 3.0), np.eye(2, dtype=bool))
        with pytest.raises(ValueError):
            x.values[0, 0] = 1.0

    def test_sparsity_and_observed_pairs(self):
        x = RatingMatrix.from_dense(np.full((2, 2), 3.0), [(0, 1)])
        assert x.sparsity == pytest.approx(0.75)
        np.testing.assert_array_equal(x.observed, [[0, 1]])

    def test_restrict_keeps_intersection(self):
        x = RatingMatrix.from_dense(np.full((2, 2), 3.0), np.ones((2, 2), dtype=bool))
        y = x.restrict([(1, 1)])
        assert y.num_observed == 1
        assert y.values[0, 0] == 0.0


class TestProjections:
    def test_project_observed_example(self):
        x = RatingMatrix.from_dense(np.array([[4.0, 9.0], [9.0, 2.0]]), [(0, 0), (1, 1)], scale=None)
        np.testing.assert_array_equal(project_observed(x), [[4.0, 0.0], [0.0, 2.0]])

    def test_project_observed_empty_set(self):
        x = RatingMatrix.from_dense(np.ones((2, 3)), np.zeros((2, 3), dtype=bool))
        np.testing.assert_array_equal(project_observed(x), np.zeros((2, 3)))

    def test_project_unobserved_example(self):
        out = project_unobserved(np.array([[4.0, 7.0], [3.0, 2.0]]), [(0, 0), (1, 1)])
        np.testing.assert_array_equal(out, [[0.0, 7.0], [3.0, 0.0]])

    def test_projections_partition_the_matrix(self, rng):
        dense = rng.standard_normal((5, 4))
        mask = rng.random((5, 4)) < 0.5
        x = RatingMatrix.from_dense(dense, mask, scale=None)
        np.testing.assert_allclose(project_observed(x) + project_unobserved(dense, mask), dense)

    def test_as_mask_rejects_out_of_range_pairs(self):
        with pytest.raises(ConfigError):
            as_mask([(2, 0)], (2, 2))


class TestSvd:
    def test_diagonal(self):
        np.testing.assert_allclose(svd(np.diag([3.0, 1.0])).sigma, [3.0, 1.0])

    def test_rank_one_outer_product(self):
        a, b = np.array([1.0, 2.0, 2.0]), np.array([3.0, 4.0])
        sigma = svd(np.outer(a, b)).sigma
        assert sigma[0] == pytest.approx(np.linalg.norm(a) * np.linalg.norm(b))
        assert sigma[1] == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("method", ["lapack", "jacobi"])
    def test_matches_gram_eigensolve(self, rng, method):
        x = rng.standard_normal((6, 4))
        expected = np.sqrt(np.sort(np.linalg.eigvalsh(x.T @ x))[::-1])
        factors = svd(x, method=method)
        np.testing.assert_allclose(factors.sigma, expected, rtol=1e-10)
        np.testing.assert_allclose(factors.reconstruct(), x, atol=1e-10)
        np.testing.assert_allclose(factors.u.T @ factors.u, np.eye(4), atol=1e-10)
        np.testing.assert_allclose(factors.v.T @ factors.v, np.eye(4), atol=1e-10)

    @pytest.mark.parametrize("shape", [(7, 5), (4, 9)])
    def test_jacobi_agrees_with_lapack(self, rng, shape):
        x = rng.standard_normal(shape)
        lapack, jacobi = svd(x, "lapack"), svd(x, "jacobi")
        np.testing.assert_allclose(jacobi.sigma, lapack.sigma, rtol=1e-10)
        np.testing.assert_allclose(jacobi.u, lapack.u, atol=1e-8)
        np.testing.assert_allclose(jacobi.v, lapack.v, atol=1e-8)

    def test_sign_convention(self, rng):
        factors = svd(rng.standard_normal((5, 3)))
        pivots = np.argmax(np.abs(factors.u), axis=0)
        assert np.all(factors.u[pivots, np.arange(3)] > 0)

    def test_unknown_method(self):
        with pytest.raises(ConfigError):
            svd(np.eye(2), method="power")


class TestSoftThreshold:
    def test_diagonal_example(self):
        result = soft_threshold_svd(np.diag([5.0, 3.0, 1.0]), 2.0)
        np.testing.assert_allclose(result.z, np.diag([3.0, 1.0, 0.0]), atol=1e-10)
        assert result.rank == 2
        assert result.nuclear_norm == pytest.approx(4.0)

    def test_zero_lambda_is_identity(self, rng):
        x = rng.standard_normal((6, 5))
        result = soft_threshold_svd(x, 0.0)
        np.testing.assert_allclose(result.z, x, atol=1e-8)
        assert result.rank == numerical_rank(x)

    def test_lambda_above_sigma_max_gives_zero(self, rng):
        x = rng.standard_normal((6, 5))
        result = soft_threshold_svd(x, svd(x).sigma[0] + 1e-9)
        assert result.rank == 0
        np.testing.assert_array_equal(result.z, np.zeros((6, 5)))

    def test_negative_lambda(self):
        with pytest.raises(ConfigError):
            soft_threshold_svd(np.eye(2), -1.0)

    def test_non_expansive(self, rng):
        for _ in range(20):
            a, b = rng.standard_normal((8, 6)), rng.standard_normal((8, 6))
            lam = float(rng.uniform(0, 3))
            gap = frobenius_norm(soft_threshold_svd(a, lam).z - soft_threshold_svd(b, lam).z)
            assert gap <= frobenius_norm(a - b) + 1e-10

    def test_rank_non_increasing_in_lambda(self, make_low_rank):
        matrix = make_low_rank(12, 10, 6)
        ranks = [soft_threshold_svd(matrix, lam).rank for lam in np.linspace(0, 15, 31)]
        assert all(later <= earlier for earlier, later in zip(ranks, ranks[1:]))
        assert ranks[0] == 6

    @pytest.mark.parametrize("lam", [0.1, 1.0, 5.0])
    def test_minimizes_prox_objective(self, rng, lam):
        def objective(a, z):
            return 0.5 * np.sum((a - z) ** 2) + lam * np.linalg.svd(z, compute_uv=False).sum()

        for _ in range(25):
            a = rng.standard_normal((6, 5))
            sigma = np.linalg.svd(a, compute_uv=False)
            # brute force over shrinkage levels in the singular basis of a
            grid = np.linspace(0.0, 1.0, 20001)[:, None] * sigma[None, :]
            per_component = 0.5 * (sigma[None, :] - grid) ** 2 + lam * grid
            oracle = per_component.min(axis=0).sum()
            ours = objective(a, soft_threshold_svd(a, lam).z)
            assert ours <= oracle + 1e-10
            assert abs(ours - oracle) <= 1e-6 * max(oracle, 1e-12)


class TestNorms:
    def test_identity(self):
        assert nuclear_norm(np.eye(3)) == pytest.approx(3.0)
        assert frobenius_norm(np.eye(3)) == pytest.approx(np.sqrt(3.0))

    def test_diagonal(self):
        assert nuclear_norm(np.diag([4.0, 3.0])) == pytest.approx(7.0)
        assert frobenius_norm(np.diag([4.0, 3.0])) == pytest.approx(5.0)

    def test_norm_ordering(self, rng):
        x = rng.standard_normal((5, 5))
        assert nuclear_norm(x) >= frobenius_norm(x) >= svd(x).sigma[0]

    def test_numerical_rank(self, make_low_rank):
        assert numerical_rank(make_low_rank(12, 9, 3)) == 3
        assert numerical_rank(np.zeros((3, 3))) == 0
