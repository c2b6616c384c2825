"""
Dense linear algebra and random-number primitives.

All routines work in 64-bit floating point on ``numpy`` arrays and validate
their preconditions up front, raising ``PreconditionError`` on bad input and
``NumericError`` when LAPACK fails or produces non-finite values.
"""

import hashlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg

from utils.errors import NumericError, PreconditionError
from utils.logging_config import get_logger

logger = get_logger(__name__)  # pylint: disable=invalid-name

SYMMETRY_TOLERANCE = 1e-10


@dataclass(frozen=True)
class SymEig:
    """
    Eigendecomposition of a symmetric matrix.

    Attributes:
        eigenvalues (np.ndarray): Ascending eigenvalues.
        eigenvectors (np.ndarray): Orthonormal eigenvectors stored as columns.
    """
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        """Return Q diag(eigenvalues) Q^T."""
        q = self.eigenvectors
        return (q * self.eigenvalues) @ q.T


class Rng:
    """
    Seedable random stream.

    Backed by ``numpy.random.Generator`` over the PCG64 bit generator, whose
    output for a given 64-bit seed is identical on every platform.
    """

    def __init__(self, seed: int):
        if seed < 0 or seed >= 2 ** 64:
            raise PreconditionError(f"Seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self._generator = np.random.Generator(np.random.PCG64(self.seed))

    @property
    def generator(self) -> np.random.Generator:
        """Underlying numpy generator, for library calls that accept one."""
        return self._generator

    def uniform(self) -> float:
        """Draw one real in [0, 1)."""
        return float(self._generator.random())

    def uniform_array(self, size: int) -> np.ndarray:
        """Draw ``size`` reals in [0, 1)."""
        return self._generator.random(size)

    def normal(self, size) -> np.ndarray:
        """Draw standard normal variates of the given shape."""
        return self._generator.standard_normal(size)

    def integers(self, low: int, high: int) -> int:
        """Draw an integer in [low, high)."""
        return int(self._generator.integers(low, high))

    def permutation(self, n: int) -> np.ndarray:
        """Random permutation of ``range(n)``."""
        return self._generator.permutation(n)

    def shuffle(self, values: Sequence) -> np.ndarray:
        """Return a shuffled copy of ``values``."""
        values = np.array(values, copy=True)
        self._generator.shuffle(values)
        return values

    def choice(self, n: int, size: Optional[int] = None, replace: bool = True,
               p: Optional[np.ndarray] = None):
        """Sample from ``range(n)``, optionally without replacement or with weights ``p``."""
        return self._generator.choice(n, size=size, replace=replace, p=p)


def derive_seed(base_seed: int, *labels) -> int:
    """
    Derive an independent 64-bit seed from a base seed and a sequence of labels.

    The seed is the first 8 bytes (big-endian) of BLAKE2b over
    ``repr(base_seed)`` followed by ``repr(label)`` for every label, separated by
    ``"/"``. Cells of a sweep that differ in any label get unrelated streams.
    """
    text = "/".join([repr(int(base_seed))] + [repr(label) for label in labels])
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise PreconditionError(f"{name} must be a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise PreconditionError(f"{name} contains non-finite entries")
    return a


def check_symmetric(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    """
    Validate that ``a`` is square and symmetric within ``SYMMETRY_TOLERANCE``.

    Returns:
        np.ndarray: ``a`` as a float64 array.
    """
    a = _as_matrix(a, name)
    if a.shape[0] != a.shape[1]:
        raise PreconditionError(f"{name} must be square, got shape {a.shape}")
    asymmetry = np.max(np.abs(a - a.T))
    if asymmetry > SYMMETRY_TOLERANCE:
        raise PreconditionError(f"{name} is not symmetric (max asymmetry {asymmetry:.3e})")
    return a


def sym_eig(a) -> SymEig:
    """
    Eigendecomposition of a symmetric matrix.

    Uses LAPACK ``dsyev`` (Householder tridiagonalization followed by implicit
    QL/QR iterations).

    Args:
        a: Square symmetric matrix.

    Returns:
        SymEig: Ascending eigenvalues and orthonormal eigenvectors.

    Raises:
        PreconditionError: If ``a`` is not square or not symmetric.
        NumericError: If the QL/QR iterations do not converge.
    """
    a = check_symmetric(a)
    try:
        eigenvalues, eigenvectors = scipy.linalg.eigh(a, driver="ev", check_finite=False)
    except np.linalg.LinAlgError as exc:
        logger.error("Symmetric eigendecomposition failed: %s", exc)
        raise NumericError(f"Eigendecomposition did not converge: {exc}") from exc
    if not (np.all(np.isfinite(eigenvalues)) and np.all(np.isfinite(eigenvectors))):
        raise NumericError("Eigendecomposition produced non-finite values")
    return SymEig(eigenvalues=eigenvalues, eigenvectors=eigenvectors)


def lstsq(a, b, ridge: float = 0.0) -> np.ndarray:
    """
    Solve ``min ||A X - B||_F^2 + ridge * ||X||_F^2``.

    With ``ridge == 0`` and a rank-deficient ``A`` the minimum-norm minimizer
    is returned. The solver is LAPACK ``dgelsy`` (QR with column pivoting);
    a positive ridge is handled through the augmented system
    ``[A; sqrt(ridge) I] X = [B; 0]``.

    Args:
        a: Design matrix, m x n.
        b: Right-hand side, m x p (or a length-m vector).
        ridge (float): Non-negative Tikhonov weight.

    Returns:
        np.ndarray: Solution of shape n x p (or length n for a vector ``b``).
    """
    a = _as_matrix(a, "A")
    b = np.asarray(b, dtype=np.float64)
    vector_rhs = b.ndim == 1
    if vector_rhs:
        b = b[:, None]
    if b.ndim != 2:
        raise PreconditionError(f"B must be a vector or a matrix, got shape {b.shape}")
    if b.shape[0] != a.shape[0]:
        raise PreconditionError(
            f"Dimension mismatch: A has {a.shape[0]} rows but B has {b.shape[0]}"
        )
    if not np.all(np.isfinite(b)):
        raise PreconditionError("B contains non-finite entries")
    if ridge < 0 or not np.isfinite(ridge):
        raise PreconditionError(f"Ridge must be a non-negative real, got {ridge}")

    n = a.shape[1]
    if b.shape[1] == 0:
        solution = np.zeros((n, 0))
    else:
        if ridge > 0:
            a = np.vstack([a, np.sqrt(ridge) * np.eye(n)])
            b = np.vstack([b, np.zeros((n, b.shape[1]))])
        try:
            solution, _, _, _ = scipy.linalg.lstsq(
                a, b, lapack_driver="gelsy", check_finite=False
            )
        except np.linalg.LinAlgError as exc:
            logger.error("Least-squares solve failed: %s", exc)
            raise NumericError(f"Least-squares solve failed: {exc}") from exc
        if not np.all(np.isfinite(solution)):
            raise NumericError("Least-squares solve produced non-finite values")

    return solution[:, 0] if vector_rhs else solution
