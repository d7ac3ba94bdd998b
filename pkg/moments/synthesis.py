"""Canonical moment-assigning compensators and their stabilization.

The canonical compensator has a moment-matching block xi_a of order nu and
a stabilizing block xi_b:

    xi_a' = (S - G_a M_des) xi_a + F_a xi_b + G_a u_xi
    xi_b' = -G_b M_des xi_a + F_b xi_b + G_b u_xi
    y_xi  = M_c xi_a + H_b xi_b

Stabilization reduces to output feedback on the augmented plant (x, xi_a);
the feedback is an observer-based LQG design whose controller state is xi_b.
"""
import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
import scipy.linalg as spla
from pydantic import BaseModel, ConfigDict, NonNegativeFloat, PositiveFloat

from moments.assignment import AssignmentProblem, AssignmentSolution, solve_moment
from moments.core import (
    ClosedLoopMoment,
    MomentKind,
    MomentMatrix,
    closed_loop_moment,
    open_loop_moment,
)
from moments.systems import Compensator, Plant, SignalGenerator, interconnect
from utils.errors import (
    NotAssignable,
    NotDetectable,
    NotMomentAssigning,
    NotStabilizable,
    NumericalFailure,
    RankDeficiencyAmbiguous,
    RiccatiFailure,
)
from utils.linalg import (
    DEFAULT_TOLERANCES,
    Spectrum,
    Tolerances,
    eigenvalues,
    is_hurwitz,
    rank_and_range,
)
from utils.validation import MatrixValidator

logger = logging.getLogger(__name__)

# singular values within this factor of the rank threshold make the rank decision ambiguous
RANK_GUARD_FACTOR = 10.0


def moment_tolerance(M_des, tol: Tolerances) -> float:
    """Acceptance bound for ||M_cl - M_des|| after a full synthesis."""
    return 10.0 * tol.residual_rel * (1.0 + float(np.linalg.norm(M_des)))


class PBHResult(NamedTuple):
    ok: bool
    offending: List[complex]


def pbh_stabilizable(A, B, tol: Tolerances = DEFAULT_TOLERANCES) -> PBHResult:
    """PBH test: rank [A - lambda I, B] = n for every eigenvalue with Re >= 0."""
    A = MatrixValidator.real_matrix(A, "A")
    B = MatrixValidator.real_matrix(B, "B", allow_empty=True)
    n = MatrixValidator.square(A, "A")
    MatrixValidator.shape(B, "B", rows=n)
    offending = []
    for lam, _ in Spectrum.from_matrix(A).distinct(tol):
        if lam.real < -tol.spectral_gap:
            continue
        pencil = np.hstack([A - lam * np.eye(n), B])
        if rank_and_range(pencil, tol).rank < n:
            offending.append(lam)
    return PBHResult(not offending, offending)


def pbh_detectable(C, A, tol: Tolerances = DEFAULT_TOLERANCES) -> PBHResult:
    """Dual PBH test: rank [A - lambda I; C] = n for every eigenvalue with Re >= 0."""
    A = MatrixValidator.real_matrix(A, "A")
    C = MatrixValidator.real_matrix(C, "C", allow_empty=True)
    return pbh_stabilizable(A.T, C.T, tol)


class OffendingMode(BaseModel):
    test: str
    re: float
    im: float


class StabilityReport(BaseModel):
    plant_stabilizable: bool
    plant_detectable: bool
    moment_pair_detectable: bool
    offending_eigenvalues: List[OffendingMode] = []

    @property
    def synthesizable(self) -> bool:
        return self.plant_stabilizable and self.plant_detectable and self.moment_pair_detectable

    def offending_for(self, test: str) -> List[complex]:
        return [complex(m.re, m.im) for m in self.offending_eigenvalues if m.test == test]


def stability_report(plant: Plant, gen: SignalGenerator, tol: Tolerances = DEFAULT_TOLERANCES) -> StabilityReport:
    """Existence test for a stabilizing moment-assigning compensator.

    Requires (A, B) stabilizable and both (C, A) and (M_open, S) detectable.
    """
    M_open = open_loop_moment(plant, gen, tol).moment.value
    checks = {
        "stabilizable(A,B)": pbh_stabilizable(plant.A, plant.B, tol),
        "detectable(C,A)": pbh_detectable(plant.C, plant.A, tol),
        "detectable(M_open,S)": pbh_detectable(M_open, gen.S, tol),
    }
    offending = [
        OffendingMode(test=name, re=lam.real, im=lam.imag)
        for name, result in checks.items()
        for lam in result.offending
    ]
    return StabilityReport(
        plant_stabilizable=checks["stabilizable(A,B)"].ok,
        plant_detectable=checks["detectable(C,A)"].ok,
        moment_pair_detectable=checks["detectable(M_open,S)"].ok,
        offending_eigenvalues=offending,
    )


@dataclass(frozen=True)
class AugmentedSystem:
    """Auxiliary plant (x, xi_a) driven by the virtual input (H_b xi_b, F_a xi_b)."""

    A_aug: np.ndarray
    B_aug: np.ndarray
    C_aug: np.ndarray
    plant: Plant
    S: np.ndarray
    M_des: np.ndarray
    M_c: np.ndarray
    G_a: np.ndarray

    @property
    def nu(self) -> int:
        return self.S.shape[0]


def build_augmented(plant: Plant, gen: SignalGenerator, M_des, M_c, G_a=None) -> AugmentedSystem:
    """A_aug = [[A, B M_c], [G_a C, S - G_a (M_des - D M_c)]],
    B_aug = [[B, 0], [G_a D, I]], C_aug = [C, -(M_des - D M_c)]."""
    nu = gen.nu
    M_des = MatrixValidator.real_matrix(M_des, "M_des")
    M_c = MatrixValidator.real_matrix(M_c, "M_c")
    MatrixValidator.shape(M_des, "M_des", plant.p, nu)
    MatrixValidator.shape(M_c, "M_c", plant.m, nu)
    G_a = np.zeros((nu, plant.p)) if G_a is None else MatrixValidator.real_matrix(G_a, "G_a")
    MatrixValidator.shape(G_a, "G_a", nu, plant.p)

    mismatch = M_des - plant.D @ M_c
    A_aug = np.block([
        [plant.A, plant.B @ M_c],
        [G_a @ plant.C, gen.S - G_a @ mismatch],
    ])
    B_aug = np.block([
        [plant.B, np.zeros((plant.n, nu))],
        [G_a @ plant.D, np.eye(nu)],
    ])
    C_aug = np.hstack([plant.C, -mismatch])
    return AugmentedSystem(A_aug, B_aug, C_aug, plant, gen.S, M_des, M_c, G_a)


class StabilizerWeights(BaseModel):
    """LQG design weights, each a multiple of the identity.

    ``decay_rate`` > 0 designs for the shifted matrix A_aug + decay_rate*I,
    placing every closed-loop eigenvalue left of -decay_rate.
    """

    model_config = ConfigDict(frozen=True)

    state: PositiveFloat = 1.0
    input: PositiveFloat = 1.0
    process: PositiveFloat = 1.0
    measurement: PositiveFloat = 1.0
    decay_rate: NonNegativeFloat = 0.0


class StabilizerGains(NamedTuple):
    K: np.ndarray
    L_obs: np.ndarray


def design_stabilizer(aug: AugmentedSystem, weights: Optional[StabilizerWeights] = None,
                      tol: Tolerances = DEFAULT_TOLERANCES) -> StabilizerGains:
    """State-feedback and observer gains from two continuous-time Riccati equations."""
    weights = weights or StabilizerWeights()
    A, B, C = aug.A_aug, aug.B_aug, aug.C_aug
    stabilizable = pbh_stabilizable(A, B, tol)
    if not stabilizable.ok:
        raise NotStabilizable("augmented pair (A_aug, B_aug) is not stabilizable", stabilizable.offending)
    detectable = pbh_detectable(C, A, tol)
    if not detectable.ok:
        raise NotDetectable("augmented pair (C_aug, A_aug) is not detectable", detectable.offending)

    N, n_in, n_out = A.shape[0], B.shape[1], C.shape[0]
    shifted = A + weights.decay_rate * np.eye(N)
    R = weights.input * np.eye(n_in)
    V = weights.measurement * np.eye(n_out)
    try:
        X = spla.solve_continuous_are(shifted, B, weights.state * np.eye(N), R)
        Y = spla.solve_continuous_are(shifted.T, C.T, weights.process * np.eye(N), V)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise RiccatiFailure(f"Riccati solve failed: {e}") from e
    K = np.linalg.solve(R, B.T @ X)
    L_obs = np.linalg.solve(V, C @ Y).T

    if not is_hurwitz(A - B @ K, tol):
        raise RiccatiFailure("state-feedback design A_aug - B_aug K is not Hurwitz")
    if not is_hurwitz(A - L_obs @ C, tol):
        raise RiccatiFailure("observer design A_aug - L_obs C_aug is not Hurwitz")
    logger.debug("stabilizer designed: |K|=%.3e |L|=%.3e", np.linalg.norm(K), np.linalg.norm(L_obs))
    return StabilizerGains(K, L_obs)


@dataclass(frozen=True)
class CanonicalCompensator:
    S: np.ndarray
    M_des: np.ndarray
    M_c: np.ndarray
    F_a: np.ndarray
    F_b: np.ndarray
    G_a: np.ndarray
    G_b: np.ndarray
    H_b: np.ndarray
    # rank of Pi_xi when built by canonicalize; below nu the realization is not minimal
    moment_rank: Optional[int] = None

    def __post_init__(self):
        for name in ("S", "M_des", "M_c", "F_a", "F_b", "G_a", "G_b", "H_b"):
            object.__setattr__(self, name, MatrixValidator.real_matrix(getattr(self, name), name, allow_empty=True))
        nu = MatrixValidator.square(self.S, "S")
        extra = MatrixValidator.square(self.F_b, "F_b") if self.F_b.size else self.F_b.shape[0]
        p, m = self.M_des.shape[0], self.M_c.shape[0]
        MatrixValidator.shape(self.M_des, "M_des", cols=nu)
        MatrixValidator.shape(self.M_c, "M_c", cols=nu)
        MatrixValidator.shape(self.F_a, "F_a", nu, extra)
        MatrixValidator.shape(self.G_a, "G_a", nu, p)
        MatrixValidator.shape(self.G_b, "G_b", extra, p)
        MatrixValidator.shape(self.H_b, "H_b", m, extra)

    @property
    def nu(self) -> int:
        return self.S.shape[0]

    @property
    def rho(self) -> int:
        return self.nu + self.F_b.shape[0]

    @property
    def redundant_states(self) -> int:
        return 0 if self.moment_rank is None else self.nu - self.moment_rank

    def flatten(self) -> Compensator:
        F = np.block([
            [self.S - self.G_a @ self.M_des, self.F_a],
            [-self.G_b @ self.M_des, self.F_b],
        ])
        G = np.vstack([self.G_a, self.G_b])
        H = np.hstack([self.M_c, self.H_b])
        return Compensator(F, G, H)

    def padded(self, F_null) -> "CanonicalCompensator":
        """Append r redundant xi_b states with dynamics F_null; the moment is unchanged."""
        F_null = MatrixValidator.real_matrix(F_null, "F_null")
        r = MatrixValidator.square(F_null, "F_null")
        extra = self.F_b.shape[0]
        return CanonicalCompensator(
            S=self.S,
            M_des=self.M_des,
            M_c=self.M_c,
            F_a=np.hstack([self.F_a, np.zeros((self.nu, r))]),
            F_b=spla.block_diag(self.F_b, F_null) if extra else F_null,
            G_a=self.G_a,
            G_b=np.vstack([self.G_b, np.zeros((r, self.G_b.shape[1]))]),
            H_b=np.hstack([self.H_b, np.zeros((self.H_b.shape[0], r))]),
            moment_rank=self.moment_rank,
        )


class AssembledCompensator(NamedTuple):
    canonical: CanonicalCompensator
    flat: Compensator


def assemble_compensator(aug: AugmentedSystem, K, L_obs) -> AssembledCompensator:
    """Turn the observer-based stabilizer of the augmented plant into xi_b.

    With u_aug = -K xi_b and xi_b' = (A_aug - B_aug K - L_obs C_aug) xi_b + L_obs y,
    -K splits by rows into [H_b; F_a], G_b = L_obs and F_b = Fbar_b - G_b D H_b.
    """
    K = MatrixValidator.real_matrix(K, "K")
    L_obs = MatrixValidator.real_matrix(L_obs, "L_obs")
    plant, nu = aug.plant, aug.nu
    N = aug.A_aug.shape[0]
    MatrixValidator.shape(K, "K", plant.m + nu, N)
    MatrixValidator.shape(L_obs, "L_obs", N, plant.p)

    gain = -K
    H_b, F_a = gain[:plant.m], gain[plant.m:]
    F_bar = aug.A_aug - aug.B_aug @ K - L_obs @ aug.C_aug
    G_b = L_obs
    F_b = F_bar - G_b @ plant.D @ H_b
    canonical = CanonicalCompensator(
        S=aug.S, M_des=aug.M_des, M_c=aug.M_c, F_a=F_a, F_b=F_b, G_a=aug.G_a, G_b=G_b, H_b=H_b,
    )
    return AssembledCompensator(canonical, canonical.flatten())


def closed_loop_spectrum(plant: Plant, comp: Compensator) -> np.ndarray:
    return eigenvalues(interconnect(plant, comp).A_cl)


def separation_spectra(aug: AugmentedSystem, gains: StabilizerGains) -> Tuple[np.ndarray, np.ndarray]:
    """Spectra of A_aug - B_aug K and A_aug - L_obs C_aug."""
    return (
        eigenvalues(aug.A_aug - aug.B_aug @ gains.K),
        eigenvalues(aug.A_aug - gains.L_obs @ aug.C_aug),
    )


def spectrum_contains(outer: np.ndarray, inner: np.ndarray, rel: float = 1e-6) -> bool:
    """Greedy nearest-neighbour multiset inclusion within rel*(1 + |lambda|)."""
    remaining = list(outer)
    for lam in inner:
        if not remaining:
            return False
        distances = [abs(lam - mu) for mu in remaining]
        j = int(np.argmin(distances))
        if distances[j] > rel * (1.0 + abs(lam)):
            return False
        remaining.pop(j)
    return True


def spectra_match(first: np.ndarray, second: np.ndarray, rel: float = 1e-6) -> bool:
    return len(first) == len(second) and spectrum_contains(first, second, rel)


def canonicalize(plant: Plant, gen: SignalGenerator, comp: Compensator, M_des,
                 tol: Tolerances = DEFAULT_TOLERANCES) -> CanonicalCompensator:
    """Rewrite a minimal moment-assigning compensator in canonical form.

    The rank factorization of Pi_xi splits the compensator state into a
    moment-carrying part (rank nu_bar) and a part invisible on the invariant
    manifold; the first is re-expressed through the right inverse of its
    moment map, the second becomes xi_b.
    """
    M_des = MatrixValidator.real_matrix(M_des, "M_des")
    MatrixValidator.shape(M_des, "M_des", plant.p, gen.nu)
    closed = closed_loop_moment(plant, gen, comp, tol)
    mismatch = float(np.linalg.norm(closed.M_cl.value - M_des))
    if mismatch > moment_tolerance(M_des, tol):
        raise NotMomentAssigning(f"compensator assigns a moment {mismatch:.3e} away from M_des")

    Pi_xi = closed.Pi_xi
    U, s, _ = spla.svd(Pi_xi)
    threshold = tol.rank_threshold(Pi_xi.shape, s[0] if s.size else 0.0)
    ambiguous = (s > threshold / RANK_GUARD_FACTOR) & (s < threshold * RANK_GUARD_FACTOR)
    if np.any(ambiguous):
        raise RankDeficiencyAmbiguous(
            f"singular values {s[ambiguous]} of Pi_xi lie within the rank guard band around {threshold:.2e}")
    nu_bar = int(np.sum(s > threshold)) if s.size and s[0] > 0 else 0

    # orthogonal change of coordinates: rows of T_xi span the moment-carrying part, V annihilates Pi_xi
    F_t = U.T @ comp.F @ U
    G_t = U.T @ comp.G
    H_t = comp.H @ U
    Pi_bar = U[:, :nu_bar].T @ Pi_xi
    right_inverse = np.linalg.pinv(Pi_bar)
    F_ab, F_bb = F_t[:nu_bar, nu_bar:], F_t[nu_bar:, nu_bar:]
    G_a_bar, G_b_bar = G_t[:nu_bar], G_t[nu_bar:]
    H_b_bar = H_t[:, nu_bar:]

    canonical = CanonicalCompensator(
        S=gen.S,
        M_des=M_des,
        M_c=closed.M_c.value,
        F_a=right_inverse @ F_ab,
        F_b=F_bb,
        G_a=right_inverse @ G_a_bar,
        G_b=G_b_bar,
        H_b=H_b_bar,
        moment_rank=nu_bar,
    )

    flat = canonical.flatten()
    check = closed_loop_moment(plant, gen, flat, tol)
    if np.linalg.norm(check.M_cl.value - M_des) > moment_tolerance(M_des, tol):
        raise NumericalFailure("canonical compensator does not reproduce the assigned moment")
    original_spectrum = closed_loop_spectrum(plant, comp)
    canonical_spectrum = closed_loop_spectrum(plant, flat)
    if not spectrum_contains(canonical_spectrum, original_spectrum):
        raise NumericalFailure("canonical closed loop does not contain the original closed-loop spectrum")
    if canonical.redundant_states:
        # the extra states come from S - G_a M_des and are hidden from the compensator input-output map
        logger.warning(
            "⚠️ Pi_xi has rank %d < nu=%d: canonical realization carries %d non-minimal states "
            "(closed-loop abscissa %.4f, original %.4f)",
            nu_bar, gen.nu, canonical.redundant_states,
            float(np.max(canonical_spectrum.real)), float(np.max(original_spectrum.real)),
        )
    logger.debug("canonicalized compensator: rho_bar=%d nu_bar=%d rho=%d", comp.rho, nu_bar, canonical.rho)
    return canonical


@dataclass(frozen=True)
class SynthesisResult:
    assignment: AssignmentSolution
    report: StabilityReport
    augmented: AugmentedSystem
    gains: StabilizerGains
    canonical: CanonicalCompensator
    compensator: Compensator
    closed_loop: ClosedLoopMoment
    spectrum: np.ndarray
    partition_error: Tuple[float, float]

    @property
    def hurwitz(self) -> bool:
        return bool(np.max(self.spectrum.real) < 0)

    @property
    def target(self) -> np.ndarray:
        """Moment the compensator assigns: M_des, or its least-squares replacement."""
        return self.augmented.M_des


def synthesize(plant: Plant, gen: SignalGenerator, M_des, G_a=None,
               weights: Optional[StabilizerWeights] = None, tol: Tolerances = DEFAULT_TOLERANCES,
               moment_weight=None, require_exact: bool = False) -> SynthesisResult:
    """Two-step procedure: assign the compensator moment, then stabilize.

    An unassignable M_des is replaced by the least-squares moment unless
    require_exact is set, in which case NotAssignable is raised.
    """
    report = stability_report(plant, gen, tol)
    if not report.plant_stabilizable:
        raise NotStabilizable("(A, B) is not stabilizable", report.offending_for("stabilizable(A,B)"))
    if not report.plant_detectable:
        raise NotDetectable("(C, A) is not detectable", report.offending_for("detectable(C,A)"))
    if not report.moment_pair_detectable:
        raise NotDetectable("(M_open, S) is not detectable", report.offending_for("detectable(M_open,S)"))

    problem = AssignmentProblem(plant, gen, MomentMatrix(M_des, MomentKind.DESIRED), moment_weight)
    solution = solve_moment(problem, tol)
    target = problem.M_des.value
    if not solution.exact:
        if require_exact:
            raise NotAssignable(f"M_des is not assignable (residual {solution.residual:.3e})", solution.residual)
        # the least-squares moment M_open + T_S(M_c) is assignable by construction
        target = solution.M_des_effective.value
        logger.info("⚠️ synthesizing for the closest assignable moment (residual %.3e)", solution.residual)

    aug = build_augmented(plant, gen, target, solution.M_c.value, G_a)
    gains = design_stabilizer(aug, weights, tol)
    assembled = assemble_compensator(aug, gains.K, gains.L_obs)
    flat = assembled.flat
    loop = interconnect(plant, flat)
    closed = closed_loop_moment(plant, gen, flat, tol)
    nu = gen.nu
    partition_error = (
        float(np.linalg.norm(closed.Pi_xi[:nu] - np.eye(nu))),
        float(np.linalg.norm(closed.Pi_xi[nu:])),
    )
    spectrum = eigenvalues(loop.A_cl)
    logger.info("✅ compensator of order %d synthesized (spectral abscissa %.4f)", flat.rho, np.max(spectrum.real))
    return SynthesisResult(solution, report, aug, gains, assembled.canonical, flat, closed, spectrum, partition_error)
