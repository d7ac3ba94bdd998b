"""Time-domain moments of plant/generator/compensator interconnections and the
moment transfer operator T_S.

T_S maps the output matrix M_in of a virtual generator (S, M_in) driving the
plant input to the resulting open-loop moment:

    T_S(M_in) = C Pi + D M_in,   Pi S = A Pi + B M_in.

Its dense matrix form acts on column-stacked vec(M_in).
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from math import factorial
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as spla

from moments.systems import Compensator, Plant, SignalGenerator, interconnect
from utils.errors import DefectiveGenerator, DimensionMismatch, NumericalFailure, PoleAtPoint
from utils.linalg import (
    DEFAULT_TOLERANCES,
    Spectrum,
    Tolerances,
    eigenvalues,
    rank_and_range,
    require_disjoint,
    solve_sylvester,
    sylvester_residual,
    unvec,
    vec,
)
from utils.validation import MatrixValidator

logger = logging.getLogger(__name__)


class MomentKind(str, Enum):
    OPEN_LOOP = "open_loop"
    CLOSED_LOOP = "closed_loop"
    COMPENSATOR = "compensator"
    DESIRED = "desired"


@dataclass(frozen=True)
class MomentMatrix:
    value: np.ndarray
    kind: MomentKind

    def __post_init__(self):
        object.__setattr__(self, "value", MatrixValidator.real_matrix(self.value, f"{self.kind.value} moment"))

    @property
    def generator_dim(self) -> int:
        return self.value.shape[1]

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    def check_generator(self, gen: SignalGenerator) -> None:
        if self.generator_dim != gen.nu:
            raise DimensionMismatch(
                f"{self.kind.value} moment has {self.generator_dim} columns, generator order is {gen.nu}")


class OpenLoopMoment(NamedTuple):
    moment: MomentMatrix
    Pi: np.ndarray


class ClosedLoopMoment(NamedTuple):
    M_cl: MomentMatrix
    M_c: MomentMatrix
    Pi_x: np.ndarray
    Pi_xi: np.ndarray


def open_loop_moment(plant: Plant, gen: SignalGenerator, tol: Tolerances = DEFAULT_TOLERANCES) -> OpenLoopMoment:
    """M_open = C Pi + Q L with Pi S = A Pi + P L."""
    gen.check_plant(plant)
    Pi = solve_sylvester(gen.S, plant.A, plant.P @ gen.L, tol)
    M_open = plant.C @ Pi + plant.Q @ gen.L
    return OpenLoopMoment(MomentMatrix(M_open, MomentKind.OPEN_LOOP), Pi)


def closed_loop_moment(plant: Plant, gen: SignalGenerator, comp: Compensator,
                       tol: Tolerances = DEFAULT_TOLERANCES) -> ClosedLoopMoment:
    """Joint Sylvester solve on the stacked (n + rho) x nu unknown [Pi_x; Pi_xi]."""
    gen.check_plant(plant)
    loop = interconnect(plant, comp)
    require_disjoint(loop.A_cl, gen.S, tol, what="A_cl")
    Pi = solve_sylvester(gen.S, loop.A_cl, loop.P_cl @ gen.L, tol)
    Pi_x, Pi_xi = Pi[:plant.n], Pi[plant.n:]
    M_c = comp.H @ Pi_xi
    M_cl = plant.C @ Pi_x + plant.D @ M_c + plant.Q @ gen.L
    return ClosedLoopMoment(
        MomentMatrix(M_cl, MomentKind.CLOSED_LOOP),
        MomentMatrix(M_c, MomentKind.COMPENSATOR),
        Pi_x,
        Pi_xi,
    )


@dataclass(frozen=True)
class KMoment:
    s_star: complex
    k: int
    value: np.ndarray


def k_moment(plant: Plant, s_star: complex, k: int, tol: Tolerances = DEFAULT_TOLERANCES) -> KMoment:
    """eta_k(s*) = C (s*I - A)^-(k+1) B, plus D for k = 0."""
    if k < 0:
        raise DimensionMismatch(f"moment order must be non-negative, got {k}")
    s_star = complex(s_star)
    poles = eigenvalues(plant.A)
    gap = float(np.min(np.abs(poles - s_star)))
    if gap <= tol.gap_threshold(max(np.max(np.abs(poles)), abs(s_star))):
        raise PoleAtPoint(f"s* = {s_star} lies within {gap:.3e} of a pole of the plant")
    resolvent = spla.lu_factor(s_star * np.eye(plant.n) - plant.A)
    X = plant.B.astype(complex)
    for _ in range(k + 1):
        X = spla.lu_solve(resolvent, X)
    value = plant.C @ X
    if k == 0:
        value = value + plant.D
    return KMoment(s_star, k, value)


def transfer_apply(plant: Plant, S, M_in, tol: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
    """T_S(M_in) = C L^-1_(S,A)(B M_in) + D M_in."""
    S = MatrixValidator.real_matrix(S, "S")
    M_in = MatrixValidator.real_matrix(M_in, "M_in")
    MatrixValidator.shape(M_in, "M_in", plant.m, S.shape[0])
    Pi = solve_sylvester(S, plant.A, plant.B @ M_in, tol)
    return plant.C @ Pi + plant.D @ M_in


class OperatorConstruction(str, Enum):
    BASIS_PROBE = "basis_probe"
    JORDAN_EXPLICIT = "jordan_explicit"


@dataclass(frozen=True)
class MomentTransferOperator:
    m: int
    p: int
    nu: int
    matrix_form: np.ndarray
    construction: OperatorConstruction
    scale: float = 0.0

    def apply(self, M_in) -> np.ndarray:
        M_in = np.atleast_2d(np.asarray(M_in, dtype=float))
        MatrixValidator.shape(M_in, "M_in", self.m, self.nu)
        return unvec(self.matrix_form @ vec(M_in), self.p, self.nu)


@dataclass(frozen=True)
class JordanStructure:
    """Declared Jordan form S = T^-1 Sigma T.

    ``block_sizes[i]`` is the size of the block with eigenvalue
    ``eigenvalues[i]``; blocks appear along the diagonal of Sigma in order.
    ``transform`` defaults to the identity (S already in Jordan form).
    """

    eigenvalues: Sequence[complex]
    block_sizes: Sequence[int]
    transform: Optional[np.ndarray] = None

    def jordan_matrix(self) -> np.ndarray:
        if len(self.eigenvalues) != len(self.block_sizes):
            raise DefectiveGenerator("Jordan structure needs one eigenvalue per block")
        blocks = []
        for s, size in zip(self.eigenvalues, self.block_sizes):
            blocks.append(complex(s) * np.eye(size) + np.eye(size, k=1))
        return spla.block_diag(*blocks).astype(complex)


def _diagonal_structure(S: np.ndarray, tol: Tolerances) -> Tuple[JordanStructure, float]:
    w, V = spla.eig(S)
    nu = S.shape[0]
    scale = float(np.max(np.abs(w)))
    sep = np.abs(w[:, None] - w[None, :])
    np.fill_diagonal(sep, np.inf)
    if nu > 1 and np.min(sep) <= tol.gap_threshold(scale):
        raise DefectiveGenerator(
            "S has eigenvalues closer than the spectral gap; declare its Jordan structure explicitly")
    cond = np.linalg.cond(V)
    if not np.isfinite(cond) or cond * tol.residual_rel > 1.0:
        raise DefectiveGenerator(f"eigenvector matrix of S is ill-conditioned (cond {cond:.2e})")
    return JordanStructure(list(w), [1] * nu, np.linalg.inv(V)), cond


def _certify(S: np.ndarray, structure: JordanStructure, tol: Tolerances, cond: float = 1.0) -> np.ndarray:
    nu = S.shape[0]
    if sum(structure.block_sizes) != nu:
        raise DefectiveGenerator(f"Jordan block sizes sum to {sum(structure.block_sizes)}, S has order {nu}")
    Sigma = structure.jordan_matrix()
    T = np.eye(nu, dtype=complex) if structure.transform is None else np.asarray(structure.transform, dtype=complex)
    if T.shape != (nu, nu):
        raise DefectiveGenerator(f"Jordan transform has shape {T.shape}, expected {(nu, nu)}")
    defect = np.linalg.norm(T @ S @ np.linalg.inv(T) - Sigma)
    if defect > tol.residual_rel * (1.0 + np.linalg.norm(S)) * cond:
        raise DefectiveGenerator(f"declared Jordan structure does not reproduce S (defect {defect:.3e})")
    return T


def _jordan_matrix_form(plant: Plant, S: np.ndarray, structure: JordanStructure, T: np.ndarray,
                        tol: Tolerances) -> np.ndarray:
    nu = S.shape[0]
    T_inv = np.linalg.inv(T)
    total = np.zeros((plant.p * nu, plant.m * nu), dtype=complex)
    start = 0
    for s_i, size in zip(structure.eigenvalues, structure.block_sizes):
        E_i = np.zeros((nu, nu))
        E_i[start:start + size, start:start + size] = np.eye(size)
        start += size
        P_i = T_inv @ E_i @ T
        N_i = complex(s_i) * np.eye(nu) - S
        power = np.eye(nu, dtype=complex)
        for k in range(size):
            eta = k_moment(plant, s_i, k, tol).value
            # vec(eta M X) = (X^T kron eta) vec(M)
            total += np.kron((P_i @ power @ P_i).T, eta)
            power = power @ N_i
    imag = np.linalg.norm(total.imag)
    if imag > tol.residual_rel * (1.0 + np.linalg.norm(total.real)):
        raise NumericalFailure(f"Jordan-built operator is not real (imaginary part {imag:.3e})")
    return total.real


def plant_gain_scale(plant: Plant) -> float:
    """Reference magnitude ||C|| ||B|| + ||D|| for rank decisions on moment maps."""
    return float(np.linalg.norm(plant.C, 2) * np.linalg.norm(plant.B, 2) + np.linalg.norm(plant.D, 2))


def transfer_matrix(plant: Plant, S, method: str = OperatorConstruction.BASIS_PROBE,
                    tol: Tolerances = DEFAULT_TOLERANCES,
                    jordan: Optional[JordanStructure] = None) -> MomentTransferOperator:
    """Dense (p nu) x (m nu) matrix of T_S.

    ``basis_probe`` stacks vec(T_S(E_ij)) over the canonical basis;
    ``jordan_explicit`` sums eta_k(s_i) M P_i (s_i I - S)^k P_i over the
    Jordan blocks of S (declared via ``jordan`` or read off a well
    conditioned eigendecomposition).
    """
    S = MatrixValidator.real_matrix(S, "S")
    nu = MatrixValidator.square(S, "S")
    require_disjoint(plant.A, S, tol)
    method = OperatorConstruction(method)
    m, p = plant.m, plant.p

    if method is OperatorConstruction.BASIS_PROBE:
        columns = []
        for j in range(m * nu):
            unit = np.zeros(m * nu)
            unit[j] = 1.0
            columns.append(vec(transfer_apply(plant, S, unvec(unit, m, nu), tol)))
        matrix_form = np.column_stack(columns)
    else:
        if jordan is None:
            jordan, cond = _diagonal_structure(S, tol)
        else:
            cond = 1.0
        T = _certify(S, jordan, tol, cond)
        matrix_form = _jordan_matrix_form(plant, S, jordan, T, tol)

    matrix_form.setflags(write=False)
    logger.debug("T_S built by %s: shape %s", method.value, matrix_form.shape)
    return MomentTransferOperator(m, p, nu, matrix_form, method, plant_gain_scale(plant))


@dataclass(frozen=True)
class EigenDiagnostic:
    eigenvalue: complex
    multiplicity: int
    eta0_rank: int
    transmission_zero: bool


@dataclass(frozen=True)
class RangeDiagnostics:
    operator_rank: int
    full_rank: int
    surjective: bool
    eigenvalues: List[EigenDiagnostic] = field(default_factory=list)

    @property
    def flagged(self) -> List[complex]:
        return [d.eigenvalue for d in self.eigenvalues if d.transmission_zero]


# points on a circle outside every pole; the largest rank there is the normal rank of W(s)
GENERIC_POINTS = (1.3 + 0.7j, -0.4 + 1.9j, 0.9 - 1.6j)


def normal_rank(plant: Plant, tol: Tolerances = DEFAULT_TOLERANCES, scale: float = 0.0) -> int:
    """Rank of W(s) = C(sI - A)^-1 B + D at generic s."""
    radius = 1.0 + (float(np.max(np.abs(eigenvalues(plant.A)))) if plant.n else 0.0)
    return max(rank_and_range(plant.transfer(radius * z), tol, scale).rank for z in GENERIC_POINTS)


def transfer_range_diagnostics(op: MomentTransferOperator, gen_spectrum: Spectrum, plant: Plant,
                               tol: Tolerances = DEFAULT_TOLERANCES) -> RangeDiagnostics:
    """Rank of T_S and the 0-moment rank at each generator eigenvalue.

    The block-triangular Jordan form of T_S makes its rank depend only on
    eta_0(s_i); a rank drop there means s_i is a transmission zero.
    """
    info = rank_and_range(op.matrix_form, tol, op.scale)
    generic_rank = normal_rank(plant, tol, op.scale)
    per_eigenvalue = []
    for s_i, mult in gen_spectrum.distinct(tol):
        eta0 = k_moment(plant, s_i, 0, tol).value
        r = rank_and_range(eta0, tol, op.scale).rank
        per_eigenvalue.append(EigenDiagnostic(s_i, mult, r, r < generic_rank))
    full = op.p * op.nu
    return RangeDiagnostics(info.rank, full, info.rank == full, per_eigenvalue)


@dataclass(frozen=True)
class ClosedLoopDecomposition:
    Pi_open: np.ndarray
    Pi_comp: np.ndarray
    M_open: np.ndarray
    induced: np.ndarray
    M_cl: np.ndarray
    M_c: np.ndarray
    defect: float


def decompose_closed_loop(plant: Plant, gen: SignalGenerator, comp: Compensator,
                          tol: Tolerances = DEFAULT_TOLERANCES) -> ClosedLoopDecomposition:
    """Split M_cl into the open-loop moment plus the compensator-induced T_S(M_c).

    Pi_x = L^-1(P L) + L^-1(B M_c), so M_cl = M_open + T_S(M_c).
    """
    opened = open_loop_moment(plant, gen, tol)
    closed = closed_loop_moment(plant, gen, comp, tol)
    M_c = closed.M_c.value
    Pi_comp = solve_sylvester(gen.S, plant.A, plant.B @ M_c, tol)
    induced = plant.C @ Pi_comp + plant.D @ M_c
    M_cl = closed.M_cl.value
    defect = float(np.linalg.norm(M_cl - opened.moment.value - induced))
    return ClosedLoopDecomposition(opened.Pi, Pi_comp, opened.moment.value, induced, M_cl, M_c, defect)


def compensator_virtual_moment(comp: Compensator, S, M_cl, tol: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
    """Open-loop moment of the compensator driven by the virtual generator (S, M_cl)."""
    S = MatrixValidator.real_matrix(S, "S")
    M_cl = MatrixValidator.real_matrix(M_cl, "M_cl")
    Pi_xi = solve_sylvester(S, comp.F, comp.G @ M_cl, tol)
    return comp.H @ Pi_xi


class PartitionResiduals(NamedTuple):
    plant_block: float
    compensator_block: float


def partitioned_closed_loop_check(plant: Plant, gen: SignalGenerator, comp: Compensator,
                                  Pi_x, Pi_xi) -> PartitionResiduals:
    """Residuals of the two block rows of the closed-loop Sylvester equation."""
    S, L = gen.S, gen.L
    plant_rhs = plant.B @ comp.H @ Pi_xi + plant.P @ L
    comp_A = comp.F + comp.G @ plant.D @ comp.H
    comp_rhs = comp.G @ plant.C @ Pi_x + comp.G @ plant.Q @ L
    return PartitionResiduals(
        sylvester_residual(S, plant.A, plant_rhs, Pi_x),
        sylvester_residual(S, comp_A, comp_rhs, Pi_xi),
    )


def k_moment_derivative_oracle(plant: Plant, s_star: complex, k: int,
                               radius: Optional[float] = None, points: int = 64) -> np.ndarray:
    """((-1)^k / k!) d^k W / ds^k at s* from samples of W(s) only.

    Uses the complex-contour difference stencil (trapezoidal Cauchy
    integral on a circle around s*), which stays accurate for k = 3 where a
    real central difference loses everything to cancellation. Used as an
    independent check of :func:`k_moment`.
    """
    s_star = complex(s_star)
    if radius is None:
        distance = float(np.min(np.abs(eigenvalues(plant.A) - s_star)))
        radius = min(0.5 * distance, 1.0)
    theta = 2.0 * np.pi * np.arange(points) / points
    total = np.zeros((plant.p, plant.m), dtype=complex)
    for t in theta:
        total += plant.transfer(s_star + radius * np.exp(1j * t)) * np.exp(-1j * k * t)
    derivative = factorial(k) * total / (points * radius ** k)
    return (-1) ** k / factorial(k) * derivative
