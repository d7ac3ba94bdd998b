"""Numerical foundation: Sylvester solvers, Kronecker algebra, spectra and
tolerance-aware rank tests.

All comparisons against a threshold go through :class:`Tolerances`. The vec
convention is column stacking everywhere, so that
``vec(A @ X @ B) == kron(B.T, A) @ vec(X)``.
"""
import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Tuple

import numpy as np
import scipy.linalg as spla
from pydantic import BaseModel, ConfigDict, PositiveFloat

from utils.errors import DimensionMismatch, IllConditioned, NumericalFailure, SpectraOverlap
from utils.validation import MatrixValidator

logger = logging.getLogger(__name__)

# n*nu ceiling for the dense Kronecker path (oracle and fallback)
KRON_PATH_LIMIT = 400


class Tolerances(BaseModel):
    """Numerical tolerances used by every comparison in the package.

    ``spectral_gap`` is relative to ``1 + spectral radius``; ``rank_rel`` is
    scaled by the largest matrix dimension and the largest singular value;
    ``residual_rel`` bounds relative equation residuals.
    """

    model_config = ConfigDict(frozen=True)

    spectral_gap: PositiveFloat = 1e-8
    rank_rel: PositiveFloat = 1e-10
    residual_rel: PositiveFloat = 1e-8

    def rank_threshold(self, shape: Tuple[int, ...], sigma_max: float) -> float:
        return self.rank_rel * max(max(shape, default=1), 1) * sigma_max

    def gap_threshold(self, scale: float) -> float:
        return self.spectral_gap * (1.0 + scale)


DEFAULT_TOLERANCES = Tolerances()


def eigenvalues(M: np.ndarray) -> np.ndarray:
    try:
        return spla.eigvals(M)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise NumericalFailure(f"Eigenvalue computation failed: {e}") from e


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues of a square matrix, repeated by algebraic multiplicity."""

    eigenvalues: Tuple[complex, ...]

    @classmethod
    def from_matrix(cls, M) -> "Spectrum":
        M = MatrixValidator.real_matrix(M, "matrix")
        MatrixValidator.square(M, "matrix")
        w = eigenvalues(M)
        order = np.lexsort((w.imag, w.real))
        return cls(tuple(complex(v) for v in w[order]))

    def __len__(self) -> int:
        return len(self.eigenvalues)

    @property
    def radius(self) -> float:
        return max((abs(v) for v in self.eigenvalues), default=0.0)

    @property
    def abscissa(self) -> float:
        return max((v.real for v in self.eigenvalues), default=-np.inf)

    def distinct(self, tol: Tolerances = DEFAULT_TOLERANCES) -> List[Tuple[complex, int]]:
        """Cluster eigenvalues closer than the spectral gap; (mean value, multiplicity) per cluster."""
        threshold = tol.gap_threshold(self.radius)
        clusters: List[List[complex]] = []
        for value in self.eigenvalues:
            for cluster in clusters:
                if abs(value - cluster[0]) <= threshold:
                    cluster.append(value)
                    break
            else:
                clusters.append([value])
        return [(complex(np.mean(c)), len(c)) for c in clusters]


class SpectralGap(NamedTuple):
    disjoint: bool
    min_gap: float


def spectra_disjoint(A, S, tol: Tolerances = DEFAULT_TOLERANCES) -> SpectralGap:
    """Check sigma(A) and sigma(S) are separated by more than the spectral gap."""
    A = MatrixValidator.real_matrix(A, "A")
    S = MatrixValidator.real_matrix(S, "S")
    MatrixValidator.square(A, "A")
    MatrixValidator.square(S, "S")
    wa, ws = eigenvalues(A), eigenvalues(S)
    min_gap = float(np.min(np.abs(wa[:, None] - ws[None, :])))
    scale = max(np.max(np.abs(wa)), np.max(np.abs(ws)))
    return SpectralGap(min_gap > tol.gap_threshold(scale), min_gap)


def require_disjoint(A, S, tol: Tolerances = DEFAULT_TOLERANCES, what: str = "A") -> None:
    disjoint, gap = spectra_disjoint(A, S, tol)
    if not disjoint:
        raise SpectraOverlap(f"sigma({what}) and sigma(S) overlap (min gap {gap:.3e})", min_gap=gap)


def sylvester_residual(S: np.ndarray, A: np.ndarray, R: np.ndarray, Pi: np.ndarray) -> float:
    """Relative residual ||Pi S - A Pi - R|| / max(1, ||R||)."""
    return float(np.linalg.norm(Pi @ S - A @ Pi - R) / max(1.0, np.linalg.norm(R)))


def solve_sylvester_kron(S, A, R) -> np.ndarray:
    """Dense solve of (S^T kron I - I kron A) vec(Pi) = vec(R)."""
    n, nu = A.shape[0], S.shape[0]
    K = np.kron(S.T, np.eye(n)) - np.kron(np.eye(nu), A)
    try:
        x = np.linalg.solve(K, vec(R))
    except np.linalg.LinAlgError as e:
        raise NumericalFailure(f"Kronecker Sylvester system is singular: {e}") from e
    return unvec(x, n, nu)


def solve_sylvester(S, A, R, tol: Tolerances = DEFAULT_TOLERANCES, method: str = "schur") -> np.ndarray:
    """Solve Pi S = A Pi + R for Pi (n x nu).

    The primary path is the Bartels-Stewart Schur reduction; the dense
    Kronecker solve (``method="kron"``) is limited to n*nu <= KRON_PATH_LIMIT
    and also serves as a refinement fallback when the Schur residual misses
    ``tol.residual_rel``.
    """
    S = MatrixValidator.real_matrix(S, "S")
    A = MatrixValidator.real_matrix(A, "A")
    R = MatrixValidator.real_matrix(R, "R")
    nu = MatrixValidator.square(S, "S")
    n = MatrixValidator.square(A, "A")
    MatrixValidator.shape(R, "R", n, nu)
    require_disjoint(A, S, tol)

    if method == "kron":
        if n * nu > KRON_PATH_LIMIT:
            raise DimensionMismatch(f"Kronecker path limited to n*nu <= {KRON_PATH_LIMIT}, got {n * nu}")
        Pi = solve_sylvester_kron(S, A, R)
    elif method == "schur":
        # scipy solves A X + X B = Q
        try:
            Pi = spla.solve_sylvester(A, -S, -R)
        except (np.linalg.LinAlgError, ValueError) as e:
            raise NumericalFailure(f"Schur Sylvester solve failed: {e}") from e
    else:
        raise DimensionMismatch(f"Unknown Sylvester method '{method}'")

    residual = sylvester_residual(S, A, R, Pi)
    if residual > tol.residual_rel and method == "schur" and n * nu <= KRON_PATH_LIMIT:
        logger.debug("Schur residual %.3e above tolerance, retrying with Kronecker solve", residual)
        Pi = solve_sylvester_kron(S, A, R)
        residual = sylvester_residual(S, A, R, Pi)
    if residual > tol.residual_rel:
        raise IllConditioned(f"Sylvester residual {residual:.3e} exceeds {tol.residual_rel:.1e}")
    logger.debug("Sylvester solve (%s) n=%d nu=%d residual=%.2e", method, n, nu, residual)
    return Pi


class RankInfo(NamedTuple):
    rank: int
    range_basis: np.ndarray
    null_basis: np.ndarray
    singular_values: np.ndarray
    threshold: float


def rank_and_range(M, tol: Tolerances = DEFAULT_TOLERANCES, scale: float = 0.0) -> RankInfo:
    """Numerical rank with orthonormal bases of the range and the null space.

    Accepts real or complex input (PBH pencils are complex). ``scale`` is a
    reference magnitude: singular values are measured against
    max(sigma_max, scale), so a matrix that is zero up to round-off has rank 0.
    """
    M = np.atleast_2d(np.asarray(M))
    if not np.all(np.isfinite(M)):
        raise NumericalFailure("rank test on a matrix with NaN or Inf entries")
    rows, cols = M.shape
    if rows == 0 or cols == 0:
        return RankInfo(0, np.zeros((rows, 0), dtype=M.dtype), np.eye(cols, dtype=M.dtype),
                        np.zeros(0), 0.0)
    try:
        U, s, Vh = spla.svd(M)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise NumericalFailure(f"SVD failed: {e}") from e
    sigma_max = s[0] if s.size else 0.0
    threshold = tol.rank_threshold(M.shape, max(sigma_max, scale))
    rank = int(np.sum(s > threshold)) if sigma_max > 0 else 0
    return RankInfo(rank, U[:, :rank], Vh[rank:].conj().T, s, threshold)


def kron(A, B) -> np.ndarray:
    return np.kron(np.atleast_2d(A), np.atleast_2d(B))


def vec(M) -> np.ndarray:
    """Column-stacking vectorization."""
    return np.asarray(M).reshape(-1, order="F")


def unvec(v, rows: int, cols: int) -> np.ndarray:
    v = np.asarray(v).reshape(-1)
    if v.size != rows * cols:
        raise DimensionMismatch(f"cannot unvec length {v.size} into {rows}x{cols}")
    return v.reshape((rows, cols), order="F")


def spectral_abscissa(M) -> float:
    return float(np.max(eigenvalues(np.atleast_2d(M)).real))


def is_hurwitz(M, tol: Tolerances = DEFAULT_TOLERANCES) -> bool:
    return spectral_abscissa(M) < -tol.spectral_gap
