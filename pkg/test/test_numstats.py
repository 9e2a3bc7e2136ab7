import unittest
from unittest import mock

import numpy as np
from parameterized import parameterized

import common
import embnorm
import numstats


def random_symmetric(size: int, seed: int) -> np.ndarray:
    matrix = np.random.default_rng(seed).standard_normal((size, size))
    return matrix + matrix.T


def random_spd(size: int, seed: int) -> np.ndarray:
    factor = np.random.default_rng(seed).standard_normal((size, size))
    return factor @ factor.T + size * np.eye(size)


class Moments(unittest.TestCase):
    def setUp(self):
        embnorm.setup_logging(False, "DEBUG")

    @parameterized.expand(
        [
            ("symmetric", [-1.0, 0.0, 1.0], 0.0, -1.5),
            ("two_point", [-1.0, 1.0], 0.0, -2.0),
            ("skewed", [0.0, 0.0, 0.0, 1.0], 2.0 / np.sqrt(3.0), -2.0 / 3.0),
        ]
    )
    def test_examples(self, _name, samples, skewness, kurtosis):
        summary = numstats.moments(samples)
        self.assertAlmostEqual(float(summary.skewness[0]), skewness, places=12)
        self.assertAlmostEqual(float(summary.excess_kurtosis[0]), kurtosis, places=12)

    @parameterized.expand([("empty", []), ("single", [[1.0, 2.0]])])
    def test_too_few_samples(self, _name, samples):
        with self.assertRaises(common.InvalidInputError):
            numstats.moments(samples)

    def test_non_finite(self):
        with self.assertRaises(common.InvalidInputError):
            numstats.moments([1.0, np.nan, 2.0])

    def test_constant_dimension(self):
        rng = np.random.default_rng(3)
        samples = np.column_stack([rng.standard_normal(50), np.full(50, 7.0)])
        summary = numstats.moments(samples)
        self.assertEqual(summary.degenerate.tolist(), [False, True])
        self.assertEqual(float(summary.skewness[1]), 0.0)
        self.assertEqual(float(summary.excess_kurtosis[1]), 0.0)
        self.assertTrue(np.all(np.isfinite(summary.skewness)))

    def test_covariance_symmetric(self):
        samples = np.random.default_rng(4).standard_normal((40, 6))
        summary = numstats.moments(samples)
        self.assertTrue(np.array_equal(summary.covariance, summary.covariance.T))
        self.assertTrue(np.all(np.diag(summary.covariance) >= 0))
        self.assertTrue(np.allclose(summary.covariance, np.cov(samples.T, bias=True)))

    @parameterized.expand([(-3.5,), (0.25,), (100.0,)])
    def test_shift_invariance(self, shift):
        samples = np.random.default_rng(5).exponential(size=(200, 3))
        summary = numstats.moments(samples)
        shifted = numstats.moments(samples + shift)
        self.assertTrue(np.allclose(shifted.skewness, summary.skewness, atol=1e-10))
        self.assertTrue(
            np.allclose(shifted.excess_kurtosis, summary.excess_kurtosis, atol=1e-10)
        )
        self.assertTrue(np.allclose(shifted.mean, summary.mean + shift, atol=1e-10))

    @parameterized.expand([(0.01,), (3.7,), (250.0,)])
    def test_scale_invariance(self, scale):
        samples = np.random.default_rng(6).exponential(size=(200, 3))
        summary = numstats.moments(samples)
        scaled = numstats.moments(samples * scale)
        self.assertTrue(np.allclose(scaled.skewness, summary.skewness, atol=1e-10))
        self.assertTrue(
            np.allclose(scaled.excess_kurtosis, summary.excess_kurtosis, atol=1e-10)
        )


class SymEig(unittest.TestCase):
    def setUp(self):
        embnorm.setup_logging(False, "DEBUG")

    def test_identity(self):
        values, vectors = numstats.sym_eig(np.eye(3))
        self.assertEqual(values.tolist(), [1.0, 1.0, 1.0])
        self.assertTrue(np.array_equal(vectors, np.eye(3)))

    def test_diagonal_sorted(self):
        values, vectors = numstats.sym_eig(np.diag([1.0, 3.0, 2.0]))
        self.assertEqual(values.tolist(), [3.0, 2.0, 1.0])
        self.assertTrue(np.array_equal(np.abs(vectors), np.eye(3)[:, [1, 2, 0]]))

    def test_two_by_two(self):
        values, vectors = numstats.sym_eig([[2.0, 1.0], [1.0, 2.0]])
        self.assertTrue(np.allclose(values, [3.0, 1.0], atol=1e-12))
        self.assertTrue(np.allclose(vectors[:, 0], [np.sqrt(0.5)] * 2, atol=1e-12))
        self.assertTrue(np.allclose(np.abs(vectors[:, 1]), [np.sqrt(0.5)] * 2))
        self.assertLess(vectors[0, 1] * vectors[1, 1], 0)

    def test_not_symmetric(self):
        with self.assertRaises(common.InvalidInputError):
            numstats.sym_eig([[1.0, 2.0], [0.0, 1.0]])

    def test_not_square(self):
        with self.assertRaises(common.InvalidInputError):
            numstats.sym_eig(np.zeros((2, 3)))

    @parameterized.expand([(1,), (2,), (5,), (16,), (32,), (150,)])
    def test_reconstruction(self, size):
        matrix = random_symmetric(size, seed=size)
        values, vectors = numstats.sym_eig(matrix)
        norm = np.linalg.norm(matrix)
        self.assertLessEqual(
            np.linalg.norm(vectors @ np.diag(values) @ vectors.T - matrix),
            1e-7 * norm,
        )
        self.assertTrue(np.allclose(vectors.T @ vectors, np.eye(size), atol=1e-8))
        self.assertTrue(np.all(np.diff(values) <= 0))
        for column in range(size):
            vector = vectors[:, column]
            residual = matrix @ vector - values[column] * vector
            self.assertLessEqual(np.linalg.norm(residual), 1e-8 * norm)
            pivot = np.argmax(np.abs(vectors[:, column]))
            self.assertGreater(vectors[pivot, column], 0)

    def test_matches_numpy(self):
        matrix = random_symmetric(12, seed=99)
        values, _ = numstats.sym_eig(matrix)
        self.assertTrue(np.allclose(values, np.linalg.eigvalsh(matrix)[::-1]))

    def test_lapack_matches_jacobi(self):
        matrix = random_symmetric(20, seed=7)
        values, vectors = numstats.sym_eig(matrix)
        with mock.patch.object(numstats, "JACOBI_MAX_DIM", 4):
            lapack_values, lapack_vectors = numstats.sym_eig(matrix)
        self.assertTrue(np.allclose(values, lapack_values, atol=1e-10))
        self.assertTrue(np.allclose(vectors, lapack_vectors, atol=1e-8))

    def test_no_convergence(self):
        with (
            mock.patch.object(numstats, "JACOBI_MAX_SWEEPS", 0),
            self.assertRaisesRegex(common.NumericError, "did not converge"),
        ):
            numstats.sym_eig([[2.0, 1.0], [1.0, 2.0]])

    def test_clip_eigenvalues(self):
        matrix = np.diag([2.0, -1.0])
        repaired, changed = numstats.clip_eigenvalues(matrix, 0.5)
        self.assertTrue(changed)
        self.assertTrue(np.allclose(repaired, np.diag([2.0, 0.5])))
        unchanged, changed = numstats.clip_eigenvalues(np.eye(2), 0.5)
        self.assertFalse(changed)
        self.assertTrue(np.array_equal(unchanged, np.eye(2)))


class Cholesky(unittest.TestCase):
    def setUp(self):
        embnorm.setup_logging(False, "DEBUG")

    @parameterized.expand(
        [
            ("identity", np.eye(2), [1.0, -2.0], [1.0, -2.0]),
            ("diagonal", np.diag([4.0, 2.0]), [8.0, 1.0], [2.0, 0.5]),
            ("coupled", [[2.0, 1.0], [1.0, 2.0]], [3.0, 3.0], [1.0, 1.0]),
        ]
    )
    def test_solve(self, _name, matrix, rhs, expected):
        solution, logdet = numstats.chol_solve(matrix, rhs)
        self.assertTrue(np.allclose(solution, expected, atol=1e-12))
        self.assertAlmostEqual(logdet, float(np.log(np.linalg.det(matrix))), places=12)

    def test_not_positive_definite(self):
        with self.assertRaisesRegex(common.NumericError, "pivot 1"):
            numstats.chol_solve([[1.0, 2.0], [2.0, 1.0]], [1.0, 1.0])

    def test_zero_pivot(self):
        with self.assertRaisesRegex(common.NumericError, "pivot 0"):
            numstats.Cholesky(np.zeros((2, 2)))

    def test_matrix_right_hand_side(self):
        matrix = random_spd(5, seed=1)
        rhs = np.random.default_rng(2).standard_normal((5, 3))
        solution = numstats.Cholesky(matrix).solve(rhs)
        self.assertEqual(solution.shape, (5, 3))
        self.assertTrue(np.allclose(matrix @ solution, rhs, atol=1e-10))

    @parameterized.expand([(size, seed) for size in (1, 3, 8, 20) for seed in (0, 1)])
    def test_agrees_with_eigen_inverse(self, size, seed):
        matrix = random_spd(size, seed)
        rhs = np.random.default_rng(seed + 100).standard_normal(size)
        solution, logdet = numstats.chol_solve(matrix, rhs)
        values, vectors = numstats.sym_eig(matrix)
        eigen_solution = vectors @ ((vectors.T @ rhs) / values)
        residual = np.linalg.norm(matrix @ solution - rhs)
        self.assertLessEqual(residual, 1e-8 * np.linalg.norm(rhs))
        self.assertTrue(np.allclose(solution, eigen_solution, atol=1e-8))
        self.assertAlmostEqual(logdet, float(np.sum(np.log(values))), places=8)


if __name__ == "__main__":
    unittest.main()
