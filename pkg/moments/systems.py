"""State-space value types: plant, signal generator, dynamic compensator and
their closed-loop interconnection."""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from utils.errors import DimensionMismatch
from utils.validation import MatrixValidator


@dataclass(frozen=True)
class Plant:
    """x' = A x + B u + P mu,  y = C x + D u + Q mu."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    P: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        for name in ("A", "B", "C", "D", "P", "Q"):
            object.__setattr__(self, name, MatrixValidator.real_matrix(getattr(self, name), name))
        n = MatrixValidator.square(self.A, "A")
        MatrixValidator.shape(self.B, "B", rows=n)
        MatrixValidator.shape(self.C, "C", cols=n)
        MatrixValidator.shape(self.D, "D", self.C.shape[0], self.B.shape[1])
        MatrixValidator.shape(self.P, "P", rows=n)
        MatrixValidator.shape(self.Q, "Q", self.C.shape[0], self.P.shape[1])

    @classmethod
    def from_matrices(cls, A, B, C, P, D=None, Q=None) -> "Plant":
        """Build a plant, defaulting D and Q to zero blocks of the implied size."""
        A, B, C, P = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, C, P))
        if D is None:
            D = np.zeros((C.shape[0], B.shape[1]))
        if Q is None:
            Q = np.zeros((C.shape[0], P.shape[1]))
        return cls(A, B, C, D, P, Q)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    @property
    def q(self) -> int:
        return self.P.shape[1]

    def transfer(self, s: complex) -> np.ndarray:
        """W(s) = C (sI - A)^-1 B + D."""
        n = self.n
        return self.C @ np.linalg.solve(s * np.eye(n) - self.A, self.B) + self.D


@dataclass(frozen=True)
class SignalGenerator:
    """w' = S w,  v = L w."""

    S: np.ndarray
    L: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "S", MatrixValidator.real_matrix(self.S, "S"))
        object.__setattr__(self, "L", MatrixValidator.real_matrix(self.L, "L"))
        nu = MatrixValidator.square(self.S, "S")
        MatrixValidator.shape(self.L, "L", cols=nu)

    @property
    def nu(self) -> int:
        return self.S.shape[0]

    @property
    def q(self) -> int:
        return self.L.shape[0]

    def check_plant(self, plant: Plant) -> None:
        if plant.q != self.q:
            raise DimensionMismatch(
                f"generator output dimension {self.q} does not match plant disturbance dimension {plant.q}")


@dataclass(frozen=True)
class Compensator:
    """xi' = F xi + G u_xi,  y_xi = H xi."""

    F: np.ndarray
    G: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        for name in ("F", "G", "H"):
            object.__setattr__(self, name, MatrixValidator.real_matrix(getattr(self, name), name))
        rho = MatrixValidator.square(self.F, "F")
        MatrixValidator.shape(self.G, "G", rows=rho)
        MatrixValidator.shape(self.H, "H", cols=rho)

    @property
    def rho(self) -> int:
        return self.F.shape[0]

    def check_plant(self, plant: Plant) -> None:
        if self.G.shape[1] != plant.p or self.H.shape[0] != plant.m:
            raise DimensionMismatch(
                f"compensator maps {self.G.shape[1]} inputs to {self.H.shape[0]} outputs, "
                f"plant needs p={plant.p} inputs and m={plant.m} outputs")


@dataclass(frozen=True)
class Interconnection:
    """Closed loop with u = y_xi and u_xi = y, state z = (x, xi)."""

    A_cl: np.ndarray
    P_cl: np.ndarray
    C_cl: np.ndarray
    Q: np.ndarray
    n: int
    rho: int


def interconnect(plant: Plant, comp: Compensator) -> Interconnection:
    comp.check_plant(plant)
    F, G, H = comp.F, comp.G, comp.H
    A_cl = np.block([
        [plant.A, plant.B @ H],
        [G @ plant.C, F + G @ plant.D @ H],
    ])
    P_cl = np.vstack([plant.P, G @ plant.Q])
    C_cl = np.hstack([plant.C, plant.D @ H])
    return Interconnection(A_cl, P_cl, C_cl, plant.Q, plant.n, comp.rho)


def zero_compensator(plant: Plant, rho: int = 1, F: Optional[np.ndarray] = None) -> Compensator:
    """Disconnected compensator (G = 0, H = 0) of order rho."""
    F = -np.eye(rho) if F is None else F
    return Compensator(F, np.zeros((rho, plant.p)), np.zeros((plant.m, rho)))
