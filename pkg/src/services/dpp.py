"""
Determinantal point processes over the neurons of a layer.

Builds the Gaussian RBF kernel from an activation matrix, calibrates its
expected sample size, and samples diverse neuron subsets exactly with the
spectral algorithm (plain DPP and k-DPP), plus best-of-m and greedy-mode
variants. ``enumerate_dpp`` is a brute-force oracle for small kernels.
"""

import dataclasses
import io
import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import brentq
from sklearn.metrics.pairwise import rbf_kernel

from schemas.records import KERNEL_FORMAT, KERNEL_VERSION
from services.mlp import ActivationMatrix
from services.numerics import Rng, SymEig, check_symmetric, sym_eig
from utils.errors import FormatError, NumericError, PreconditionError
from utils.logging_config import get_logger

logger = get_logger(__name__)  # pylint: disable=invalid-name

DEFAULT_EPSILON = 0.01
ENUMERATION_LIMIT = 16
GAMMA_BRACKET = (1e-12, 1e12)
EXACT_GAMMA_TOLERANCE = 1e-6

PathLike = Union[str, Path]
Beta = Union[float, str]


@dataclass(frozen=True)
class DppKernel:
    """
    DPP kernel ``L = gamma * base`` with ``base = L' + epsilon * I``.

    The eigendecomposition of ``base`` is computed once; rescaling by
    ``with_gamma`` reuses it, since the eigenvalues of ``gamma * base`` are
    ``gamma`` times those of ``base``.
    """
    base: np.ndarray
    beta: Optional[float]
    epsilon: float
    gamma: float = 1.0
    base_eig: Optional[SymEig] = dataclasses.field(default=None, repr=False, compare=False)

    def __post_init__(self):
        base = check_symmetric(self.base, "kernel")
        if self.gamma <= 0 or not np.isfinite(self.gamma):
            raise PreconditionError(f"gamma must be a positive real, got {self.gamma}")
        if self.epsilon < 0:
            raise PreconditionError("epsilon must be non-negative")
        eig = self.base_eig if self.base_eig is not None else sym_eig(base)
        floor = self.epsilon - 1e-9 * max(1.0, float(np.max(np.abs(eig.eigenvalues))))
        if eig.eigenvalues[0] < floor:
            raise PreconditionError(
                f"kernel is not positive definite enough: minimum eigenvalue "
                f"{eig.eigenvalues[0]:.3e} < epsilon {self.epsilon}"
            )
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "base_eig", eig)

    @classmethod
    def from_matrix(cls, matrix, gamma: float = 1.0) -> "DppKernel":
        """Wrap an arbitrary symmetric positive semi-definite matrix."""
        return cls(base=np.asarray(matrix, dtype=np.float64), beta=None, epsilon=0.0, gamma=gamma)

    def with_gamma(self, gamma: float) -> "DppKernel":
        """Same kernel with a different scale, sharing the eigendecomposition."""
        return dataclasses.replace(self, gamma=float(gamma))

    @property
    def size(self) -> int:
        return self.base.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        return self.gamma * self.base

    @property
    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues of the scaled kernel, ascending, clipped at zero."""
        return self.gamma * np.clip(self.base_eig.eigenvalues, 0.0, None)

    @property
    def eigenvectors(self) -> np.ndarray:
        return self.base_eig.eigenvectors

    @property
    def rank(self) -> int:
        values = self.eigenvalues
        tolerance = self.size * np.finfo(np.float64).eps * max(float(values[-1]), 0.0)
        return int(np.sum(values > tolerance))


@dataclass(frozen=True)
class NeuronSubset:
    """Sorted distinct neuron ids and ``log det(L_Y)``."""
    indices: Tuple[int, ...]
    log_det: float

    @property
    def size(self) -> int:
        return len(self.indices)


def subset_log_det(matrix: np.ndarray, indices: Sequence[int]) -> float:
    """``log det`` of the principal submatrix; 0 for the empty set, -inf if singular."""
    indices = list(indices)
    if not indices:
        return 0.0
    sign, value = np.linalg.slogdet(matrix[np.ix_(indices, indices)])
    return float(value) if sign > 0 else float("-inf")


def _subset(kernel: DppKernel, indices) -> NeuronSubset:
    indices = tuple(sorted(int(i) for i in indices))
    return NeuronSubset(indices=indices, log_det=subset_log_det(kernel.matrix, indices))


def build_kernel(acts: ActivationMatrix, beta: Beta = "auto",
                 epsilon: float = DEFAULT_EPSILON) -> DppKernel:
    """
    Gaussian RBF kernel over the activation vectors of a layer.

    ``L'_ij = exp(-beta * ||v_i - v_j||^2)``, then ``L' + epsilon * I``.
    ``beta="auto"`` uses ``10 / |T|`` with ``|T|`` the number of instances.

    Raises:
        PreconditionError: Non-finite activations, empty input or bad beta.
    """
    values = acts.values
    if values.shape[1] < 1:
        raise PreconditionError("activation matrix has no instances")
    if not np.all(np.isfinite(values)):
        raise PreconditionError("activation matrix contains non-finite values")
    beta_value = 10.0 / acts.instance_count if beta == "auto" else float(beta)
    if not beta_value > 0:
        raise PreconditionError(f"beta must be positive, got {beta}")
    if epsilon < 0:
        raise PreconditionError("epsilon must be non-negative")

    similarity = rbf_kernel(values, gamma=beta_value)
    similarity = 0.5 * (similarity + similarity.T)
    np.fill_diagonal(similarity, 1.0)
    base = similarity + epsilon * np.eye(acts.neuron_count)
    logger.debug("Built %dx%d kernel with beta %.4g", acts.neuron_count, acts.neuron_count, beta_value)
    return DppKernel(base=base, beta=beta_value, epsilon=float(epsilon))


def expected_size(kernel: DppKernel) -> float:
    """Expected DPP sample size ``Tr(L (I + L)^-1) = sum(lambda / (1 + lambda))``."""
    values = kernel.eigenvalues
    return float(np.sum(values / (1.0 + values)))


def expected_size_variance(kernel: DppKernel) -> float:
    """Variance of the DPP sample size, ``sum(lambda / (1 + lambda)^2)``."""
    values = kernel.eigenvalues
    return float(np.sum(values / (1.0 + values) ** 2))


def marginal_kernel(kernel: DppKernel) -> np.ndarray:
    """Marginal kernel ``K = L (L + I)^-1``; its diagonal holds inclusion probabilities."""
    values = kernel.eigenvalues
    vectors = kernel.eigenvectors
    return (vectors * (values / (1.0 + values))) @ vectors.T


def rescale_to_k(kernel: DppKernel, target: float, mode: str = "paper") -> DppKernel:
    """
    Scale the kernel so that its expected sample size becomes ``target``.

    ``paper`` multiplies the scale by ``(k / (n - k)) * ((n - k') / k')`` with
    ``k'`` the current expected size; this is exact only for flat spectra.
    ``exact`` solves for the scale in [1e-12, 1e12] until the expected size is
    within 1e-6 of the target. A k-DPP is unaffected by the scale, so both
    modes matter only for the plain DPP sampler; they are still applied for
    every sampler.

    Raises:
        PreconditionError: ``target`` or ``k'`` outside (0, n), or unknown mode.
        NumericError: The exact search cannot bracket the target.
    """
    n = kernel.size
    if not 0 < target < n:
        raise PreconditionError(f"target size {target} must lie strictly between 0 and {n}")
    current = expected_size(kernel)
    if not 0 < current < n:
        raise PreconditionError(f"current expected size {current} must lie strictly between 0 and {n}")

    if mode == "paper":
        factor = (target * (n - current)) / ((n - target) * current)
        return kernel.with_gamma(kernel.gamma * factor)
    if mode != "exact":
        raise PreconditionError(f"unknown gamma mode {mode!r}")

    base_values = np.clip(kernel.base_eig.eigenvalues, 0.0, None)

    def excess(log_gamma: float) -> float:
        scaled = np.exp(log_gamma) * base_values
        return float(np.sum(scaled / (1.0 + scaled))) - target

    low, high = np.log(GAMMA_BRACKET[0]), np.log(GAMMA_BRACKET[1])
    if excess(low) > 0 or excess(high) < 0:
        raise NumericError(f"cannot bracket expected size {target} with gamma in {GAMMA_BRACKET}")
    log_gamma = brentq(excess, low, high, xtol=1e-14, rtol=8 * np.finfo(np.float64).eps, maxiter=500)
    if abs(excess(log_gamma)) >= EXACT_GAMMA_TOLERANCE:
        raise NumericError(f"gamma search stalled {excess(log_gamma):.3e} away from the target")
    logger.debug("Exact gamma %.6g for target %s", np.exp(log_gamma), target)
    return kernel.with_gamma(float(np.exp(log_gamma)))


def _project_sample(vectors: np.ndarray, rng: Rng) -> List[int]:
    """
    Sample one item per column from the projection DPP spanned by ``vectors``.

    After each pick, the subspace is restricted to vectors vanishing on the
    picked item and re-orthonormalized with Householder QR.
    """
    vectors = np.array(vectors, copy=True)
    n = vectors.shape[0]
    chosen = []
    while vectors.shape[1] > 0:
        weights = np.sum(vectors ** 2, axis=1)
        weights[chosen] = 0.0
        item = int(rng.choice(n, p=weights / weights.sum()))
        chosen.append(item)
        column = int(np.argmax(np.abs(vectors[item])))
        pivot = vectors[:, column].copy()
        vectors = np.delete(vectors, column, axis=1)
        if vectors.shape[1] == 0:
            break
        vectors -= np.outer(pivot, vectors[item] / pivot[item])
        vectors[item] = 0.0
        vectors, _ = np.linalg.qr(vectors)
    return chosen


def sample_dpp(kernel: DppKernel, rng: Rng) -> NeuronSubset:
    """
    Exact sample of the DPP ``P(Y) = det(L_Y) / det(L + I)``.

    Each eigenvector is kept independently with probability
    ``lambda / (1 + lambda)``; the resulting projection DPP is then sampled.
    """
    values = kernel.eigenvalues
    keep = rng.uniform_array(kernel.size) < values / (1.0 + values)
    indices = _project_sample(kernel.eigenvectors[:, keep], rng)
    return _subset(kernel, indices)


def elementary_symmetric_log(values: np.ndarray, k: int) -> np.ndarray:
    """
    Logarithms of the elementary symmetric polynomials.

    ``table[l, m] = log e_l(values[:m])`` for ``0 <= l <= k`` and
    ``0 <= m <= len(values)``, computed with the recurrence
    ``e_l(m) = e_l(m - 1) + values[m - 1] * e_{l-1}(m - 1)`` in log space.
    """
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    with np.errstate(divide="ignore"):
        log_values = np.log(values)
    table = np.full((k + 1, n + 1), -np.inf)
    table[0, :] = 0.0
    for m in range(1, n + 1):
        table[1:, m] = np.logaddexp(table[1:, m - 1], log_values[m - 1] + table[:-1, m - 1])
    return table


def _select_eigenvectors(values: np.ndarray, size: int, rng: Rng) -> List[int]:
    table = elementary_symmetric_log(values, size)
    with np.errstate(divide="ignore"):
        log_values = np.log(values)
    selected = []
    remaining = size
    for m in range(values.size, 0, -1):
        if remaining == 0:
            break
        if m == remaining:
            marginal = 1.0
        else:
            marginal = np.exp(log_values[m - 1] + table[remaining - 1, m - 1] - table[remaining, m])
        if rng.uniform() < marginal:
            selected.append(m - 1)
            remaining -= 1
    return selected


def sample_kdpp(kernel: DppKernel, size: int, rng: Rng) -> NeuronSubset:
    """
    Exact sample of the k-DPP ``P(Y) ∝ det(L_Y)`` over subsets with ``|Y| = size``.

    Raises:
        PreconditionError: ``size`` outside [1, n] or above the kernel rank.
    """
    if not 1 <= size <= kernel.size:
        raise PreconditionError(f"k-DPP size {size} must lie in [1, {kernel.size}]")
    if size > kernel.rank:
        raise PreconditionError(f"k-DPP size {size} exceeds the kernel rank {kernel.rank}")
    selected = _select_eigenvectors(kernel.eigenvalues, size, rng)
    indices = _project_sample(kernel.eigenvectors[:, selected], rng)
    return _subset(kernel, indices)


def sample_best_of_m(kernel: DppKernel, size: int, m: int, rng: Rng) -> NeuronSubset:
    """
    Draw ``m`` k-DPP samples and return the one with the largest ``log det``.

    Ties go to the first drawn.
    """
    if m < 1:
        raise PreconditionError("m must be at least 1")
    best = None
    for _ in range(m):
        candidate = sample_kdpp(kernel, size, rng)
        if best is None or candidate.log_det > best.log_det:
            best = candidate
    return best


def greedy_map(kernel: DppKernel, size: int) -> NeuronSubset:
    """
    Greedy approximation of the DPP mode.

    Adds, one at a time, the neuron maximizing the determinant of the augmented
    submatrix, using incremental Cholesky updates. Ties go to the lowest index.
    """
    n = kernel.size
    if not 1 <= size <= n:
        raise PreconditionError(f"greedy size {size} must lie in [1, {n}]")
    matrix = kernel.matrix
    factors = np.zeros((size, n))
    gains = np.diag(matrix).copy()
    selected: List[int] = []
    for step in range(size):
        scores = gains.copy()
        scores[selected] = -np.inf
        item = int(np.argmax(scores))
        selected.append(item)
        if step == size - 1:
            break
        if gains[item] > 0:
            row = (matrix[item] - factors[:step, item] @ factors[:step]) / np.sqrt(gains[item])
        else:
            row = np.zeros(n)
        factors[step] = row
        gains = gains - row ** 2
    return _subset(kernel, selected)


def enumerate_dpp(kernel: DppKernel, size: Optional[int] = None
                  ) -> List[Tuple[Tuple[int, ...], float]]:
    """
    Exact probabilities of every subset (or of every subset of ``size``).

    Without ``size`` the probabilities are ``det(L_Y) / det(L + I)``; with it
    they are normalized over the subsets of that size.

    Raises:
        PreconditionError: More than 16 items, or ``size`` outside [0, n].
    """
    n = kernel.size
    if n > ENUMERATION_LIMIT:
        raise PreconditionError(f"refusing to enumerate 2^{n} subsets (limit {ENUMERATION_LIMIT} items)")
    if size is not None and not 0 <= size <= n:
        raise PreconditionError(f"size {size} must lie in [0, {n}]")
    matrix = kernel.matrix
    sizes = range(n + 1) if size is None else [size]
    subsets = []
    masses = []
    for r in sizes:
        for subset in itertools.combinations(range(n), r):
            mass = np.linalg.det(matrix[np.ix_(subset, subset)]) if r else 1.0
            subsets.append(subset)
            masses.append(max(float(mass), 0.0))
    masses = np.array(masses)
    normalizer = np.linalg.det(matrix + np.eye(n)) if size is None else masses.sum()
    return list(zip(subsets, (masses / normalizer).tolist()))


def mean_pairwise_similarity(acts: ActivationMatrix, neurons: Sequence[int], beta: Beta = "auto") -> float:
    """Mean off-diagonal RBF similarity among the activation vectors of ``neurons``."""
    neurons = list(neurons)
    if len(neurons) < 2:
        raise PreconditionError("need at least two neurons for a pairwise statistic")
    beta_value = 10.0 / acts.instance_count if beta == "auto" else float(beta)
    similarity = rbf_kernel(acts.values[neurons], gamma=beta_value)
    count = len(neurons)
    return float((similarity.sum() - np.trace(similarity)) / (count * (count - 1)))


def save_kernel(kernel: DppKernel, path: PathLike) -> None:
    """
    Export a kernel as an npz archive.

    The JSON ``header`` holds format, version, n, beta, epsilon and gamma; the
    array ``base`` holds the unscaled ``L' + epsilon * I``.
    """
    header = {"format": KERNEL_FORMAT, "version": KERNEL_VERSION, "n": kernel.size,
              "beta": kernel.beta, "epsilon": kernel.epsilon, "gamma": kernel.gamma}
    buffer = io.BytesIO()
    np.savez(buffer, header=np.frombuffer(json.dumps(header).encode("utf-8"), dtype=np.uint8),
             base=kernel.base)
    Path(path).write_bytes(buffer.getvalue())


def load_kernel(path: PathLike) -> DppKernel:
    """Import a kernel written by ``save_kernel``."""
    try:
        with np.load(path, allow_pickle=False) as archive:
            header = json.loads(archive["header"].tobytes().decode("utf-8"))
            base = archive["base"]
    except FileNotFoundError:
        raise
    except Exception as exc:  # pylint: disable=broad-except
        raise FormatError(f"{path}: corrupt kernel file: {exc}") from exc
    if header.get("format") != KERNEL_FORMAT or header.get("version") != KERNEL_VERSION:
        raise FormatError(f"{path}: unsupported kernel format {header.get('format')} "
                          f"v{header.get('version')}")
    if base.shape != (header["n"], header["n"]):
        raise FormatError(f"{path}: kernel shape {base.shape} does not match n={header['n']}")
    return DppKernel(base=base, beta=header["beta"], epsilon=header["epsilon"], gamma=header["gamma"])
