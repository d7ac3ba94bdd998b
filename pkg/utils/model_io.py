"""JSON model and compensator files, trajectory CSV and gnuplot scripts."""
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
from pydantic import BaseModel, PositiveFloat, ValidationError, field_validator

from moments.synthesis import CanonicalCompensator, StabilizerWeights
from moments.systems import Compensator, Plant, SignalGenerator
from utils.errors import DimensionMismatch, ParseError
from utils.linalg import Tolerances

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
Rows = List[List[float]]


def _rectangular(value: Optional[Rows]) -> Optional[Rows]:
    if value is None:
        return value
    widths = {len(row) for row in value}
    if len(widths) > 1:
        raise ValueError(f"rows have unequal lengths {sorted(widths)}")
    return value


def _rows(M) -> Rows:
    return np.asarray(M, dtype=float).tolist()


class ModelFile(BaseModel):
    name: str = "model"
    A: Rows
    B: Rows
    C: Rows
    D: Optional[Rows] = None
    P: Rows
    Q: Optional[Rows] = None
    S: Rows
    L: Rows
    M_des: Optional[Rows] = None
    weights: Optional[Rows] = None
    G_a: Optional[Rows] = None
    tolerances: Optional[Dict[str, PositiveFloat]] = None
    stabilizer: Optional[StabilizerWeights] = None

    check_rows = field_validator("A", "B", "C", "D", "P", "Q", "S", "L", "M_des", "weights", "G_a")(_rectangular)

    @field_validator("tolerances")
    @classmethod
    def _known_tolerances(cls, value):
        if value is not None:
            unknown = set(value) - set(Tolerances.model_fields)
            if unknown:
                raise ValueError(f"unknown tolerance fields {sorted(unknown)}")
        return value

    def plant(self) -> Plant:
        return Plant.from_matrices(self.A, self.B, self.C, self.P, self.D, self.Q)

    def generator(self) -> SignalGenerator:
        return SignalGenerator(self.S, self.L)

    def desired(self) -> Optional[np.ndarray]:
        return None if self.M_des is None else np.array(self.M_des, dtype=float)

    def moment_weights(self) -> Optional[np.ndarray]:
        return None if self.weights is None else np.array(self.weights, dtype=float)

    def ga(self) -> Optional[np.ndarray]:
        return None if self.G_a is None else np.array(self.G_a, dtype=float)

    def apply_tolerances(self, base: Tolerances) -> Tolerances:
        return base.model_copy(update=self.tolerances) if self.tolerances else base

    @classmethod
    def from_system(cls, plant: Plant, gen: SignalGenerator, M_des=None, name: str = "model",
                    **extra) -> "ModelFile":
        return cls(
            name=name,
            A=_rows(plant.A), B=_rows(plant.B), C=_rows(plant.C), D=_rows(plant.D),
            P=_rows(plant.P), Q=_rows(plant.Q), S=_rows(gen.S), L=_rows(gen.L),
            M_des=None if M_des is None else _rows(M_des),
            **extra,
        )


def load_model(path: PathLike) -> ModelFile:
    """Parse and dimension-check a model file."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ParseError(f"cannot read model file {path}: {e}") from e
    try:
        model = ModelFile.model_validate_json(text)
    except ValidationError as e:
        raise ParseError(f"invalid model file {path}: {e}") from e
    plant, gen = model.plant(), model.generator()
    gen.check_plant(plant)
    if model.M_des is not None and np.shape(model.M_des) != (plant.p, gen.nu):
        raise DimensionMismatch(f"M_des has shape {np.shape(model.M_des)}, expected {(plant.p, gen.nu)}")
    logger.debug("loaded model '%s' (n=%d, m=%d, p=%d, nu=%d)", model.name, plant.n, plant.m, plant.p, gen.nu)
    return model


def save_model(model: ModelFile, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(model.model_dump_json(indent=2, exclude_none=True))
    return path


def load_matrix(path: PathLike, name: str) -> np.ndarray:
    """Read a bare JSON 2-D array (G_a or weight overrides)."""
    try:
        rows = json.loads(Path(path).read_text())
        _rectangular(rows)
        return np.array(rows, dtype=float)
    except (OSError, ValueError, TypeError) as e:
        raise ParseError(f"cannot read {name} matrix from {path}: {e}") from e


class CanonicalFile(BaseModel):
    S: Rows
    M_des: Rows
    M_c: Rows
    F_a: Rows
    F_b: Rows
    G_a: Rows
    G_b: Rows
    H_b: Rows
    rho: int


class CompensatorFile(BaseModel):
    F: Rows
    G: Rows
    H: Rows
    canonical: Optional[CanonicalFile] = None
    plant_dims: Dict[str, int] = {}

    def compensator(self) -> Compensator:
        return Compensator(self.F, self.G, self.H)


def save_compensator(path: PathLike, comp: Compensator, plant: Plant,
                     canonical: Optional[CanonicalCompensator] = None) -> Path:
    doc = CompensatorFile(
        F=_rows(comp.F), G=_rows(comp.G), H=_rows(comp.H),
        plant_dims={"n": plant.n, "m": plant.m, "p": plant.p},
    )
    if canonical is not None:
        doc.canonical = CanonicalFile(
            **{name: _rows(getattr(canonical, name))
               for name in ("S", "M_des", "M_c", "F_a", "F_b", "G_a", "G_b", "H_b")},
            rho=canonical.rho,
        )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(doc.model_dump_json(indent=2, exclude_none=True))
    return path


def load_compensator(path: PathLike) -> CompensatorFile:
    try:
        return CompensatorFile.model_validate_json(Path(path).read_text())
    except OSError as e:
        raise ParseError(f"cannot read compensator file {path}: {e}") from e
    except ValidationError as e:
        raise ParseError(f"invalid compensator file {path}: {e}") from e


def trajectory_header(nu: int, n: int, rho: int, p: int) -> List[str]:
    columns = ["t"]
    for prefix, count in (("omega", nu), ("x", n), ("xi", rho), ("y", p), ("ydes", p)):
        columns += [f"{prefix}{i + 1}" for i in range(count)]
    return columns + ["err"]


def write_trajectory_csv(traj, path: PathLike) -> Path:
    """t, omega*, x*, xi*, y*, ydes*, err at full precision."""
    model = traj.model
    header = trajectory_header(model.nu, model.n, model.rho, model.outputs)
    data = np.column_stack([traj.times, traj.states, traj.outputs, traj.desired, traj.error])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt="%.17g")
    return path


def write_plot_script(path: PathLike, csv_path: PathLike, nu: int, n: int, rho: int, p: int) -> Path:
    """gnuplot script plotting each y_i against its desired trajectory."""
    header = trajectory_header(nu, n, rho, p)
    plots = []
    for i in range(p):
        y_col = header.index(f"y{i + 1}") + 1
        d_col = header.index(f"ydes{i + 1}") + 1
        plots.append(f"'{csv_path}' using 1:{y_col} with lines title 'y{i + 1}'")
        plots.append(f"'{csv_path}' using 1:{d_col} with lines dashtype 2 title 'ydes{i + 1}'")
    script = "\n".join([
        "set datafile separator ','",
        "set xlabel 't [s]'",
        "set ylabel 'output'",
        "plot " + ", \\\n     ".join(plots),
        "",
    ])
    path = Path(path)
    path.write_text(script)
    return path


def complex_json(value: complex) -> Dict[str, float]:
    value = complex(value)
    return {"re": value.real, "im": value.imag}
