"""Moment assignability and the compensator moment M_c.

M_des is assignable iff Delta M = M_des - M_open lies in the range of T_S.
Otherwise the weighted least-squares minimizer M_c* defines the closest
achievable moment M_open + T_S(M_c*).
"""
import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import scipy.linalg as spla

from moments.core import (
    MomentKind,
    MomentMatrix,
    MomentTransferOperator,
    open_loop_moment,
    transfer_matrix,
)
from moments.systems import Plant, SignalGenerator
from utils.errors import ConfigMismatch, DimensionMismatch, NumericalFailure
from utils.linalg import DEFAULT_TOLERANCES, Tolerances, rank_and_range, solve_sylvester, unvec, vec
from utils.validation import MatrixValidator

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AssignmentProblem:
    plant: Plant
    gen: SignalGenerator
    M_des: MomentMatrix
    weight: Optional[np.ndarray] = None

    def __post_init__(self):
        self.gen.check_plant(self.plant)
        if not isinstance(self.M_des, MomentMatrix):
            object.__setattr__(self, "M_des", MomentMatrix(self.M_des, MomentKind.DESIRED))
        MatrixValidator.shape(self.M_des.value, "M_des", self.plant.p, self.gen.nu)
        if self.weight is not None:
            weight = MatrixValidator.real_matrix(self.weight, "weight")
            MatrixValidator.shape(weight, "weight", self.plant.p, self.gen.nu)
            if np.any(weight <= 0):
                raise DimensionMismatch("moment-difference weights must be strictly positive")
            object.__setattr__(self, "weight", weight)


@dataclass(frozen=True)
class AssignmentSolution:
    M_c: MomentMatrix
    exact: bool
    residual: float
    M_des_effective: MomentMatrix
    M_des: MomentMatrix
    M_open: MomentMatrix
    operator: MomentTransferOperator


class AssignabilityCheck(NamedTuple):
    assignable: bool
    delta_M: np.ndarray
    range_defect: float


def _operator(problem: AssignmentProblem, tol: Tolerances,
              op: Optional[MomentTransferOperator]) -> MomentTransferOperator:
    return op if op is not None else transfer_matrix(problem.plant, problem.gen.S, tol=tol)


def check_assignable(problem: AssignmentProblem, tol: Tolerances = DEFAULT_TOLERANCES,
                     op: Optional[MomentTransferOperator] = None) -> AssignabilityCheck:
    """Decide Delta M in R(T_S) by projecting vec(Delta M) onto the range of T_S."""
    M_open = open_loop_moment(problem.plant, problem.gen, tol).moment.value
    delta_M = problem.M_des.value - M_open
    op = _operator(problem, tol, op)
    basis = rank_and_range(op.matrix_form, tol, op.scale).range_basis
    b = vec(delta_M)
    defect = float(np.linalg.norm(b - basis @ (basis.T @ b)))
    assignable = defect <= tol.residual_rel * (1.0 + np.linalg.norm(delta_M))
    logger.debug("range defect %.3e (assignable=%s)", defect, assignable)
    return AssignabilityCheck(assignable, delta_M, defect)


def solve_moment(problem: AssignmentProblem, tol: Tolerances = DEFAULT_TOLERANCES,
                 op: Optional[MomentTransferOperator] = None) -> AssignmentSolution:
    """Minimum-norm (weighted) least-squares solution of T_S(M_c) = Delta M.

    A single orthogonal-factorization solve covers the exact case, where the
    weights do not change the solution set, and the least-squares fallback.
    """
    plant, gen = problem.plant, problem.gen
    M_open = open_loop_moment(plant, gen, tol).moment
    delta_M = problem.M_des.value - M_open.value
    op = _operator(problem, tol, op)

    b = vec(delta_M)
    T = op.matrix_form
    scale = op.scale
    if problem.weight is not None:
        root = np.sqrt(vec(problem.weight))
        T, b = root[:, None] * T, root * b
        scale *= float(np.max(root))
    info = rank_and_range(T, tol, scale)
    if info.rank == 0:
        x = np.zeros(T.shape[1])
    else:
        try:
            x, *_ = spla.lstsq(T, b, cond=info.threshold / info.singular_values[0])
        except (np.linalg.LinAlgError, ValueError) as e:
            raise NumericalFailure(f"least-squares solve for M_c failed: {e}") from e

    M_c = unvec(x, plant.m, gen.nu)
    achieved = M_open.value + op.apply(M_c)
    residual = float(np.linalg.norm(delta_M - op.apply(M_c)))
    mismatch = np.linalg.norm(achieved - problem.M_des.value)
    exact = bool(mismatch <= tol.residual_rel * (1.0 + np.linalg.norm(problem.M_des.value)))
    if not exact:
        logger.info("⚠️ M_des is not assignable; using the least-squares moment (residual %.3e)", residual)
    return AssignmentSolution(
        M_c=MomentMatrix(M_c, MomentKind.COMPENSATOR),
        exact=exact,
        residual=residual,
        M_des_effective=MomentMatrix(achieved, MomentKind.DESIRED),
        M_des=problem.M_des,
        M_open=M_open,
        operator=op,
    )


def regulator_residual(plant: Plant, gen: SignalGenerator, M_c, tol: Tolerances = DEFAULT_TOLERANCES) -> float:
    """Relative residual of C Pi + D M_c + Q = 0 with Pi S = A Pi + B M_c + P."""
    M_c = np.atleast_2d(M_c)
    Pi = solve_sylvester(gen.S, plant.A, plant.P + plant.B @ M_c, tol)
    out = plant.C @ Pi + plant.D @ M_c + plant.Q
    scale = 1.0 + np.linalg.norm(plant.C @ Pi) + np.linalg.norm(plant.Q)
    return float(np.linalg.norm(out) / scale)


def regulator_equations_check(plant: Plant, gen: SignalGenerator, solution: AssignmentSolution,
                              tol: Tolerances = DEFAULT_TOLERANCES) -> bool:
    """Confirm M_c solves the classical regulator equations.

    Only defined for the output-regulation configuration M_des = 0, L = I.
    """
    nu = gen.nu
    if gen.L.shape != (nu, nu) or np.linalg.norm(gen.L - np.eye(nu)) > tol.residual_rel:
        raise ConfigMismatch("regulator equations need L = I (disturbance dimension equal to generator order)")
    if np.linalg.norm(solution.M_des.value) > tol.residual_rel:
        raise ConfigMismatch("regulator equations need M_des = 0")
    residual = regulator_residual(plant, gen, solution.M_c.value, tol)
    logger.debug("regulator equation residual %.3e", residual)
    return residual <= tol.residual_rel
