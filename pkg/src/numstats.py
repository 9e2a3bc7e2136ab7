"""Dense linear algebra and moment statistics."""

from dataclasses import dataclass
import logging

import numpy as np

from common import InvalidInputError, NumericError


LOGGER = logging.getLogger("embnorm")

# Matrices are plain 2-D float64 arrays.
Matrix = np.ndarray

JACOBI_TOLERANCE = 1e-12
JACOBI_MAX_SWEEPS = 100
# larger matrices go to LAPACK
JACOBI_MAX_DIM = 128
SYMMETRY_TOLERANCE = 1e-8


def as_matrix(values, name: str = "matrix") -> Matrix:
    """
    Convert to a finite 2-D float64 array.

    >>> as_matrix([[1, 2], [3, 4]]).dtype
    dtype('float64')
    >>> as_matrix([1, 2])
    Traceback (most recent call last):
    ...
    common.InvalidInputError: matrix must be 2-D, got 1-D
    """
    matrix = np.asarray(values, dtype=np.float64)
    if matrix.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got {matrix.ndim}-D")
    if not np.all(np.isfinite(matrix)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return matrix


def as_samples(samples) -> Matrix:
    """A list of scalars is read as samples of dimension 1."""
    array = np.asarray(samples, dtype=np.float64)
    if array.ndim == 1:
        array = array.reshape(-1, 1)
    return as_matrix(array, "samples")


def symmetrize(matrix: Matrix) -> Matrix:
    return 0.5 * (matrix + matrix.T)


def check_symmetric(matrix: Matrix, tolerance: float = SYMMETRY_TOLERANCE):
    if matrix.shape[0] != matrix.shape[1]:
        raise InvalidInputError(f"Matrix must be square, got {matrix.shape}")
    scale = max(1.0, float(np.max(np.abs(matrix), initial=0.0)))
    asymmetry = float(np.max(np.abs(matrix - matrix.T), initial=0.0))
    if asymmetry > tolerance * scale:
        raise InvalidInputError(f"Matrix is not symmetric (deviation {asymmetry:g})")


###########################################################
# moments
###########################################################


@dataclass(frozen=True, eq=False)
class MomentSummary:
    mean: np.ndarray
    covariance: Matrix
    skewness: np.ndarray
    excess_kurtosis: np.ndarray
    # dimensions with zero variance, their skewness and kurtosis are reported as 0
    degenerate: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.mean)


def covariance(samples: Matrix, mean: np.ndarray | None = None) -> Matrix:
    """Population covariance (divide by N), exactly symmetric."""
    if mean is None:
        mean = samples.mean(axis=0)
    centered = samples - mean
    return symmetrize(centered.T @ centered / len(samples))


def moments(samples) -> MomentSummary:
    """
    Population moments per dimension.

    >>> summary = moments([0, 0, 0, 1])
    >>> round(float(summary.skewness[0]), 4)
    1.1547
    >>> float(moments([-1, 1]).excess_kurtosis[0])
    -2.0
    """
    data = as_samples(samples)
    if len(data) < 2:
        raise InvalidInputError(f"Need at least 2 samples, got {len(data)}")
    mean = data.mean(axis=0)
    centered = data - mean
    m2 = np.mean(centered**2, axis=0)
    m3 = np.mean(centered**3, axis=0)
    m4 = np.mean(centered**4, axis=0)

    # A constant column leaves rounding residue in the centered values.
    scale = np.max(np.abs(data), axis=0)
    degenerate = m2 <= (64 * np.finfo(np.float64).eps * scale) ** 2
    safe_m2 = np.where(degenerate, 1.0, m2)
    skewness = np.where(degenerate, 0.0, m3 / safe_m2**1.5)
    kurtosis = np.where(degenerate, 0.0, m4 / safe_m2**2 - 3.0)
    if np.any(degenerate):
        LOGGER.debug(f"Zero variance in dimensions {np.flatnonzero(degenerate)}")

    return MomentSummary(
        mean=mean,
        covariance=symmetrize(centered.T @ centered / len(data)),
        skewness=skewness,
        excess_kurtosis=kurtosis,
        degenerate=degenerate,
    )


###########################################################
# symmetric eigenproblem
###########################################################


def _rotate(a: Matrix, v: Matrix, p: int, q: int):
    """One Jacobi rotation that annihilates a[p, q], in place."""
    apq = a[p, q]
    theta = (a[q, q] - a[p, p]) / (2.0 * apq)
    if abs(theta) > 1e150:
        t = 0.5 / theta
    else:
        sign = 1.0 if theta >= 0 else -1.0
        t = sign / (abs(theta) + np.sqrt(theta * theta + 1.0))
    c = 1.0 / np.sqrt(t * t + 1.0)
    s = t * c

    col_p = a[:, p].copy()
    col_q = a[:, q].copy()
    a[:, p] = c * col_p - s * col_q
    a[:, q] = s * col_p + c * col_q
    row_p = a[p, :].copy()
    row_q = a[q, :].copy()
    a[p, :] = c * row_p - s * row_q
    a[q, :] = s * row_p + c * row_q
    a[p, q] = a[q, p] = 0.0

    col_p = v[:, p].copy()
    col_q = v[:, q].copy()
    v[:, p] = c * col_p - s * col_q
    v[:, q] = s * col_p + c * col_q


def _off_diagonal_norm(a: Matrix) -> float:
    return float(np.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2)))


def _jacobi(a: Matrix) -> tuple[np.ndarray, Matrix]:
    n = a.shape[0]
    v = np.eye(n)
    threshold = JACOBI_TOLERANCE * float(np.linalg.norm(a))

    for sweep in range(JACOBI_MAX_SWEEPS + 1):
        if _off_diagonal_norm(a) <= threshold:
            break
        if sweep == JACOBI_MAX_SWEEPS:
            raise NumericError(
                f"Jacobi eigensolver did not converge after {JACOBI_MAX_SWEEPS} "
                f"sweeps (off-diagonal norm {_off_diagonal_norm(a):g})"
            )
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] != 0.0:
                    _rotate(a, v, p, q)
    return np.diag(a).copy(), v


def sym_eig(m) -> tuple[np.ndarray, Matrix]:
    """
    Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations, or by
    LAPACK above JACOBI_MAX_DIM dimensions.
    Eigenvalues are returned in descending order, eigenvectors as columns.
    The largest-magnitude component of every eigenvector is positive.

    >>> values, vectors = sym_eig([[2.0, 1.0], [1.0, 2.0]])
    >>> [round(float(value), 12) for value in values]
    [3.0, 1.0]
    >>> [round(float(x), 6) for x in vectors[:, 0]]
    [0.707107, 0.707107]
    """
    matrix = as_matrix(m)
    check_symmetric(matrix)
    n = matrix.shape[0]
    a = symmetrize(matrix).copy()
    if n > JACOBI_MAX_DIM:
        eigenvalues, v = np.linalg.eigh(a)
    else:
        eigenvalues, v = _jacobi(a)

    order = np.argsort(-eigenvalues, kind="stable")
    eigenvalues = eigenvalues[order]
    eigenvectors = v[:, order]
    for column in range(n):
        pivot = np.argmax(np.abs(eigenvectors[:, column]))
        if eigenvectors[pivot, column] < 0:
            eigenvectors[:, column] = -eigenvectors[:, column]
    return eigenvalues, eigenvectors


def clip_eigenvalues(m: Matrix, floor: float) -> tuple[Matrix, bool]:
    """
    Raise all eigenvalues of a symmetric matrix to at least ``floor``.
    Returns the repaired matrix and whether anything changed.
    """
    eigenvalues, eigenvectors = sym_eig(m)
    if eigenvalues[-1] >= floor:
        return m, False
    clipped = np.maximum(eigenvalues, floor)
    return symmetrize((eigenvectors * clipped) @ eigenvectors.T), True


###########################################################
# cholesky
###########################################################


class Cholesky:
    """
    Cholesky factorization a = L·Lᵀ of a symmetric positive definite matrix.

    >>> factor = Cholesky([[4.0]])
    >>> float(factor.solve([8.0])[0]), round(float(factor.logdet), 12)
    (2.0, 1.38629436112)
    >>> Cholesky([[1.0, 2.0], [2.0, 1.0]])
    Traceback (most recent call last):
    ...
    common.NumericError: Matrix is not positive definite: pivot 1 is -3
    """

    def __init__(self, a):
        matrix = as_matrix(a)
        check_symmetric(matrix)
        n = matrix.shape[0]
        lower = np.zeros_like(matrix)
        for j in range(n):
            row = lower[j, :j]
            pivot = matrix[j, j] - row @ row
            if not pivot > 0.0:
                raise NumericError(
                    f"Matrix is not positive definite: pivot {j} is {pivot:g}"
                )
            lower[j, j] = np.sqrt(pivot)
            lower[j + 1 :, j] = (matrix[j + 1 :, j] - lower[j + 1 :, :j] @ row) / (
                lower[j, j]
            )
        self.lower = lower
        self.logdet = 2.0 * float(np.sum(np.log(np.diag(lower))))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def solve(self, b) -> np.ndarray:
        """Solve a·x = b for a vector or a matrix of right-hand sides."""
        rhs = np.asarray(b, dtype=np.float64)
        is_vector = rhs.ndim == 1
        rhs = rhs.reshape(self.dim, -1)
        lower = self.lower
        y = np.zeros_like(rhs)
        for i in range(self.dim):
            y[i] = (rhs[i] - lower[i, :i] @ y[:i]) / lower[i, i]
        x = np.zeros_like(rhs)
        for i in reversed(range(self.dim)):
            x[i] = (y[i] - lower[i + 1 :, i] @ x[i + 1 :]) / lower[i, i]
        return x[:, 0] if is_vector else x

    def inverse(self) -> Matrix:
        return symmetrize(self.solve(np.eye(self.dim)))


def chol_solve(a, b) -> tuple[np.ndarray, float]:
    """
    Solve a·x = b for symmetric positive definite a.
    Returns the solution and the log-determinant of a.

    >>> x, logdet = chol_solve([[2.0, 1.0], [1.0, 2.0]], [1.0, 1.0])
    >>> [round(float(value), 12) for value in x]
    [0.333333333333, 0.333333333333]
    """
    factor = Cholesky(a)
    return factor.solve(b), factor.logdet
