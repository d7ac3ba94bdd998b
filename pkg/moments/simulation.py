"""Exact-discretization simulation of generator + plant + compensator."""
import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import scipy.linalg as spla

from moments.systems import Compensator, Plant, SignalGenerator, interconnect
from utils.errors import DimensionMismatch, EmptyTrajectory, NumericalFailure
from utils.validation import MatrixValidator

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClosedLoopModel:
    """Autonomous system over (omega, x, xi).

    omega' = S omega,  z' = A_cl z + P_cl L omega,
    y = C_cl z + Q L omega,  y_des = M_des omega.
    """

    A_total: np.ndarray
    C_out: np.ndarray
    C_des: np.ndarray
    nu: int
    n: int
    rho: int

    @classmethod
    def build(cls, plant: Plant, gen: SignalGenerator, comp: Compensator, M_des) -> "ClosedLoopModel":
        gen.check_plant(plant)
        M_des = MatrixValidator.real_matrix(M_des, "M_des")
        MatrixValidator.shape(M_des, "M_des", plant.p, gen.nu)
        loop = interconnect(plant, comp)
        nu, N = gen.nu, plant.n + comp.rho
        A_total = np.block([
            [gen.S, np.zeros((nu, N))],
            [loop.P_cl @ gen.L, loop.A_cl],
        ])
        C_out = np.hstack([plant.Q @ gen.L, loop.C_cl])
        C_des = np.hstack([M_des, np.zeros((plant.p, N))])
        return cls(A_total, C_out, C_des, nu, plant.n, comp.rho)

    @property
    def order(self) -> int:
        return self.A_total.shape[0]

    @property
    def outputs(self) -> int:
        return self.C_out.shape[0]


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    desired: np.ndarray
    error: np.ndarray
    model: ClosedLoopModel

    def __len__(self) -> int:
        return self.times.shape[0]

    @property
    def omega(self) -> np.ndarray:
        return self.states[:, :self.model.nu]

    @property
    def x(self) -> np.ndarray:
        return self.states[:, self.model.nu:self.model.nu + self.model.n]

    @property
    def xi(self) -> np.ndarray:
        return self.states[:, self.model.nu + self.model.n:]


def _initial_block(value, size: int, name: str) -> np.ndarray:
    if value is None:
        return np.zeros(size)
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.size != size:
        raise DimensionMismatch(f"{name} has {arr.size} entries, expected {size}")
    return arr


def simulate(model: ClosedLoopModel, omega0, x0=None, xi0=None, t_end: float = 30.0,
             dt: float = 1e-3) -> Trajectory:
    """Advance the state with the one-step map expm(A_total dt), computed once."""
    if dt <= 0 or t_end < dt:
        raise DimensionMismatch(f"need dt > 0 and t_end >= dt, got dt={dt}, t_end={t_end}")
    z0 = np.concatenate([
        _initial_block(omega0, model.nu, "omega0"),
        _initial_block(x0, model.n, "x0"),
        _initial_block(xi0, model.rho, "xi0"),
    ])
    try:
        Phi = spla.expm(model.A_total * dt)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise NumericalFailure(f"matrix exponential failed: {e}") from e
    if not np.all(np.isfinite(Phi)):
        raise NumericalFailure("matrix exponential has non-finite entries")

    steps = int(round(t_end / dt))
    states = np.empty((steps + 1, model.order))
    states[0] = z0
    for k in range(steps):
        states[k + 1] = Phi @ states[k]
    times = dt * np.arange(steps + 1)
    outputs = states @ model.C_out.T
    desired = states @ model.C_des.T
    error = np.linalg.norm(outputs - desired, axis=1)
    logger.debug("simulated %d steps of order %d; final error %.3e", steps, model.order, error[-1])
    return Trajectory(times, states, outputs, desired, error, model)


class SteadyStateError(NamedTuple):
    max_err: float
    rms_err: float


def steady_state_error(traj: Trajectory, window: Optional[float] = 0.2) -> SteadyStateError:
    """Max and RMS of the tracking error over the trailing fraction ``window`` of the run."""
    if len(traj) == 0:
        raise EmptyTrajectory("trajectory has no samples")
    if window is None or not 0.0 < window <= 1.0:
        raise DimensionMismatch(f"window must lie in (0, 1], got {window}")
    count = max(1, int(np.ceil(window * len(traj))))
    tail = traj.error[-count:]
    return SteadyStateError(float(np.max(tail)), float(np.sqrt(np.mean(tail ** 2))))
