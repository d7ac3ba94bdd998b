import json
import logging
import os
import uuid
from datetime import datetime
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel

from config.himat import HIMAT_M_DES, HIMAT_NAME, himat_generator, himat_plant
from config.settings import settings, tolerance_profile
from moments.assignment import (
    AssignmentProblem,
    AssignmentSolution,
    check_assignable,
    regulator_equations_check,
    regulator_residual,
    solve_moment,
)
from moments.core import (
    MomentKind,
    MomentMatrix,
    closed_loop_moment,
    open_loop_moment,
    transfer_matrix,
    transfer_range_diagnostics,
)
from moments.simulation import ClosedLoopModel, Trajectory, simulate, steady_state_error
from moments.synthesis import (
    StabilityReport,
    StabilizerWeights,
    SynthesisResult,
    closed_loop_spectrum,
    separation_spectra,
    spectra_match,
    stability_report,
    synthesize,
)
from moments.systems import Compensator
from utils.errors import AcceptanceFailure, ConfigMismatch
from utils.linalg import Spectrum, Tolerances, spectra_disjoint
from utils.model_io import ModelFile, complex_json, write_plot_script, write_trajectory_csv
from utils.validation import MatrixValidator

logger = logging.getLogger(__name__)

Rows = List[List[float]]


class ComplexValue(BaseModel):
    re: float
    im: float


def _spectrum(values) -> List[ComplexValue]:
    return [ComplexValue(**complex_json(v)) for v in values]


class RunReport(BaseModel):
    """Structured summary of a pipeline run; unset fields belong to stages that did not run."""

    model: str
    stages: List[str] = []
    sigma_A: Optional[List[ComplexValue]] = None
    sigma_S: Optional[List[ComplexValue]] = None
    spectra_disjoint: Optional[bool] = None
    min_gap: Optional[float] = None
    M_open: Optional[Rows] = None
    operator_rank: Optional[int] = None
    operator_full_rank: Optional[int] = None
    surjective: Optional[bool] = None
    transmission_zeros: Optional[List[ComplexValue]] = None
    stability: Optional[StabilityReport] = None
    synthesizable: Optional[bool] = None
    delta_M: Optional[Rows] = None
    assignable: Optional[bool] = None
    range_defect: Optional[float] = None
    M_des: Optional[Rows] = None
    M_c: Optional[Rows] = None
    M_des_effective: Optional[Rows] = None
    exact: Optional[bool] = None
    residual: Optional[float] = None
    regulator_residual: Optional[float] = None
    compensator_order: Optional[int] = None
    closed_loop_spectrum: Optional[List[ComplexValue]] = None
    spectral_abscissa: Optional[float] = None
    M_cl: Optional[Rows] = None
    moment_error: Optional[float] = None
    partition_error: Optional[List[float]] = None
    separation_holds: Optional[bool] = None
    final_error: Optional[float] = None
    steady_state_max: Optional[float] = None
    steady_state_rms: Optional[float] = None


class MomentPipelineAgent:
    """
    Runs the moment-assignment pipeline on a model:
    analyze → assign → synthesize → simulate, with a JSON report per stage
    and a job manifest under the output directory.
    """

    def __init__(self, tol: Optional[Tolerances] = None, output_dir: Optional[str] = None):
        self.tol = tol or tolerance_profile()
        self.output_dir = output_dir or settings.OUTPUT_DIR
        os.makedirs(self.output_dir, exist_ok=True)
        self.validator = MatrixValidator()

    def generate_job_id(self, command: str = "run") -> str:
        return f"{command}_{datetime.now().strftime('%Y%m%d_%H%M%S')}_{str(uuid.uuid4())[:8]}"

    def make_json_safe(self, obj):
        """Recursively convert numpy, complex and pydantic values to JSON-safe types"""
        if isinstance(obj, BaseModel):
            return self.make_json_safe(obj.model_dump(exclude_none=True))
        if isinstance(obj, dict):
            return {k: self.make_json_safe(v) for k, v in obj.items()}
        elif isinstance(obj, (list, tuple)):
            return [self.make_json_safe(i) for i in obj]
        elif isinstance(obj, np.ndarray):
            return self.make_json_safe(obj.tolist())
        elif isinstance(obj, (complex, np.complexfloating)):
            return complex_json(obj)
        elif isinstance(obj, np.generic):
            return obj.item()
        elif isinstance(obj, (bool, int, float, str)) or obj is None:
            return obj
        else:
            return str(obj)

    # ------------------------------------------------------------------
    # Stages
    # ------------------------------------------------------------------
    def analyze(self, model: ModelFile, report: Optional[RunReport] = None) -> RunReport:
        """Moments and diagnostics only; M_des is not needed."""
        report = report if report is not None else RunReport(model=model.name)
        tol = model.apply_tolerances(self.tol)
        plant, gen = model.plant(), model.generator()
        logger.info("🚀 Analyzing '%s' (n=%d, m=%d, p=%d, nu=%d)", model.name, plant.n, plant.m, plant.p, gen.nu)

        report.sigma_A = _spectrum(Spectrum.from_matrix(plant.A).eigenvalues)
        report.sigma_S = _spectrum(Spectrum.from_matrix(gen.S).eigenvalues)
        gap = spectra_disjoint(plant.A, gen.S, tol)
        report.spectra_disjoint, report.min_gap = gap.disjoint, gap.min_gap

        opened = open_loop_moment(plant, gen, tol)
        report.M_open = opened.moment.value.tolist()
        op = transfer_matrix(plant, gen.S, tol=tol)
        diagnostics = transfer_range_diagnostics(op, Spectrum.from_matrix(gen.S), plant, tol)
        report.operator_rank = diagnostics.operator_rank
        report.operator_full_rank = diagnostics.full_rank
        report.surjective = diagnostics.surjective
        report.transmission_zeros = _spectrum(diagnostics.flagged)
        if diagnostics.flagged:
            logger.info("⚠️ Generator eigenvalues at transmission zeros: %s", diagnostics.flagged)

        stability = stability_report(plant, gen, tol)
        report.stability = stability
        report.synthesizable = stability.synthesizable
        report.stages.append("analyze")
        logger.info("✅ Analysis complete (surjective=%s, synthesizable=%s)",
                    diagnostics.surjective, stability.synthesizable)
        return report

    def assign(self, model: ModelFile, weights=None,
               report: Optional[RunReport] = None) -> Tuple[AssignmentSolution, RunReport]:
        report = report if report is not None else RunReport(model=model.name)
        tol = model.apply_tolerances(self.tol)
        plant, gen = model.plant(), model.generator()
        M_des = model.desired()
        if M_des is None:
            raise ConfigMismatch("assign needs M_des in the model file", stage="assign")
        weights = weights if weights is not None else model.moment_weights()
        logger.info("🚀 Assigning moment for '%s'", model.name)

        problem = AssignmentProblem(plant, gen, MomentMatrix(M_des, MomentKind.DESIRED), weights)
        op = transfer_matrix(plant, gen.S, tol=tol)
        check = check_assignable(problem, tol, op)
        solution = solve_moment(problem, tol, op)

        report.M_open = solution.M_open.value.tolist()
        report.delta_M = check.delta_M.tolist()
        report.assignable = check.assignable
        report.range_defect = check.range_defect
        report.M_des = M_des.tolist()
        report.M_c = solution.M_c.value.tolist()
        report.M_des_effective = solution.M_des_effective.value.tolist()
        report.exact = solution.exact
        report.residual = solution.residual
        report.stages.append("assign")
        if solution.exact:
            logger.info("✅ M_des is exactly assignable")
        return solution, report

    def synthesize(self, model: ModelFile, G_a=None, weights: Optional[StabilizerWeights] = None,
                   moment_weights=None, require_exact: bool = False,
                   report: Optional[RunReport] = None) -> Tuple[SynthesisResult, RunReport]:
        report = report if report is not None else RunReport(model=model.name)
        tol = model.apply_tolerances(self.tol)
        plant, gen = model.plant(), model.generator()
        M_des = model.desired()
        if M_des is None:
            raise ConfigMismatch("synthesize needs M_des in the model file", stage="synthesize")
        G_a = G_a if G_a is not None else model.ga()
        weights = weights or model.stabilizer
        logger.info("🚀 Synthesizing compensator for '%s'", model.name)

        moment_weights = moment_weights if moment_weights is not None else model.moment_weights()
        result = synthesize(plant, gen, M_des, G_a=G_a, weights=weights, tol=tol,
                            moment_weight=moment_weights, require_exact=require_exact)
        self._fill_synthesis(report, result, M_des)
        report.stages.append("synthesize")
        return result, report

    def _fill_synthesis(self, report: RunReport, result: SynthesisResult, M_des: np.ndarray) -> None:
        report.stability = result.report
        report.synthesizable = result.report.synthesizable
        report.M_open = result.assignment.M_open.value.tolist()
        report.M_des = M_des.tolist()
        report.M_c = result.assignment.M_c.value.tolist()
        report.M_des_effective = result.target.tolist()
        report.exact = result.assignment.exact
        report.residual = result.assignment.residual
        report.compensator_order = result.compensator.rho
        report.closed_loop_spectrum = _spectrum(result.spectrum)
        report.spectral_abscissa = float(np.max(result.spectrum.real))
        report.M_cl = result.closed_loop.M_cl.value.tolist()
        report.moment_error = float(np.linalg.norm(result.closed_loop.M_cl.value - result.target))
        report.partition_error = list(result.partition_error)
        feedback, observer = separation_spectra(result.augmented, result.gains)
        report.separation_holds = spectra_match(result.spectrum, np.concatenate([feedback, observer]))

    def verify(self, model: ModelFile, comp: Compensator, target=None,
               report: Optional[RunReport] = None) -> RunReport:
        """Recompute the closed-loop moment of a stored compensator against target (default M_des)."""
        report = report if report is not None else RunReport(model=model.name)
        tol = model.apply_tolerances(self.tol)
        plant, gen = model.plant(), model.generator()
        closed = closed_loop_moment(plant, gen, comp, tol)
        spectrum = closed_loop_spectrum(plant, comp)
        report.compensator_order = comp.rho
        report.M_cl = closed.M_cl.value.tolist()
        report.M_c = closed.M_c.value.tolist()
        report.closed_loop_spectrum = _spectrum(spectrum)
        report.spectral_abscissa = float(np.max(spectrum.real))
        M_des = model.desired()
        if M_des is not None:
            report.M_des = M_des.tolist()
        target = M_des if target is None else np.asarray(target, dtype=float)
        if target is not None:
            report.M_des_effective = target.tolist()
            report.moment_error = float(np.linalg.norm(closed.M_cl.value - target))
        report.stages.append("verify")
        return report

    def simulate(self, model: ModelFile, comp: Compensator, omega0, t_end: float = settings.DEFAULT_T_END,
                 dt: float = settings.DEFAULT_DT, window: float = settings.STEADY_STATE_WINDOW,
                 x0=None, xi0=None, csv_path: Optional[str] = None, plot_script: Optional[str] = None,
                 report: Optional[RunReport] = None) -> Tuple[Trajectory, RunReport, Dict[str, str]]:
        report = report if report is not None else RunReport(model=model.name)
        tol = model.apply_tolerances(self.tol)
        plant, gen = model.plant(), model.generator()
        M_des = model.desired()
        if M_des is None:
            # without a target the reference is the moment the compensator actually assigns
            M_des = closed_loop_moment(plant, gen, comp, tol).M_cl.value
        logger.info("🚀 Simulating '%s' for %.3g s (dt=%.1e)", model.name, t_end, dt)

        closed_model = ClosedLoopModel.build(plant, gen, comp, M_des)
        traj = simulate(closed_model, omega0, x0, xi0, t_end=t_end, dt=dt)
        metrics = steady_state_error(traj, window)
        report.final_error = float(traj.error[-1])
        report.steady_state_max = metrics.max_err
        report.steady_state_rms = metrics.rms_err
        report.stages.append("simulate")

        outputs: Dict[str, str] = {}
        if csv_path:
            outputs["trajectory_csv"] = str(write_trajectory_csv(traj, csv_path))
            logger.info("💾 Trajectory written to %s", csv_path)
            if plot_script:
                outputs["plot_script"] = str(write_plot_script(
                    plot_script, csv_path, closed_model.nu, closed_model.n, closed_model.rho, plant.p))
        logger.info("✅ Simulation complete (steady-state max error %.3e)", metrics.max_err)
        return traj, report, outputs

    # ------------------------------------------------------------------
    # HiMAT demo
    # ------------------------------------------------------------------
    def himat_model(self, m_des: Union[str, np.ndarray, None] = None) -> ModelFile:
        """Embedded HiMAT model; m_des is 'zero', 'open', an explicit matrix or None (tracking target)."""
        plant, gen = himat_plant(), himat_generator()
        if m_des is None:
            M_des = HIMAT_M_DES
        elif isinstance(m_des, str) and m_des == "zero":
            M_des = np.zeros((plant.p, gen.nu))
        elif isinstance(m_des, str) and m_des == "open":
            M_des = open_loop_moment(plant, gen, self.tol).moment.value
        else:
            M_des = np.asarray(m_des, dtype=float)
        stabilizer = StabilizerWeights(decay_rate=settings.DEMO_DECAY_RATE)
        return ModelFile.from_system(plant, gen, M_des, name=HIMAT_NAME, stabilizer=stabilizer)

    def run_demo(self, m_des: Union[str, np.ndarray, None] = None, csv_path: Optional[str] = None,
                 plot_script: Optional[str] = None) -> Tuple[RunReport, Dict[str, str]]:
        """Full pipeline on HiMAT; raises AcceptanceFailure naming the first stage that misses."""
        model = self.himat_model(m_des)
        M_des = model.desired()
        report = RunReport(model=model.name)

        self.analyze(model, report)
        if not report.synthesizable:
            raise AcceptanceFailure("stability conditions fail for the HiMAT model", stage="analyze")

        solution, _ = self.assign(model, report=report)
        if not solution.exact:
            raise AcceptanceFailure(f"M_des not exactly assignable (residual {solution.residual:.3e})",
                                    stage="assign")
        if isinstance(m_des, str) and m_des == "zero":
            gen = model.generator()
            report.regulator_residual = regulator_residual(model.plant(), gen, solution.M_c.value, self.tol)
            if not regulator_equations_check(model.plant(), gen, solution, self.tol):
                raise AcceptanceFailure("M_c does not solve the regulator equations", stage="assign")
        if isinstance(m_des, str) and m_des == "open":
            if np.linalg.norm(solution.M_c.value) > settings.DEMO_MOMENT_THRESHOLD:
                raise AcceptanceFailure("interpolation variant should need M_c = 0", stage="assign")

        result, _ = self.synthesize(model, report=report)
        moment_bound = settings.DEMO_MOMENT_THRESHOLD * (1.0 + np.linalg.norm(M_des))
        if not result.hurwitz:
            raise AcceptanceFailure("closed loop is not Hurwitz", stage="synthesize")
        if report.moment_error > moment_bound:
            raise AcceptanceFailure(f"closed-loop moment off by {report.moment_error:.3e}", stage="synthesize")
        if max(result.partition_error) > settings.DEMO_PARTITION_THRESHOLD:
            raise AcceptanceFailure(f"Pi_xi partition error {max(result.partition_error):.3e}", stage="synthesize")

        _, _, outputs = self.simulate(model, result.compensator, settings.DEFAULT_OMEGA0,
                                      csv_path=csv_path, plot_script=plot_script, report=report)
        if report.steady_state_max > settings.DEMO_ERROR_THRESHOLD:
            raise AcceptanceFailure(f"steady-state error {report.steady_state_max:.3e}", stage="simulate")
        logger.info("🎉 HiMAT demo passed every acceptance threshold")
        return report, outputs

    # ------------------------------------------------------------------
    # Manifest
    # ------------------------------------------------------------------
    def write_manifest(self, command: str, report: RunReport, outputs: Dict[str, str], status: str,
                       path: Optional[str] = None) -> Tuple[str, Dict]:
        job_id = self.generate_job_id(command)
        manifest = self.validator.create_manifest(
            job_id=job_id,
            command=command,
            model_name=report.model,
            report=report.model_dump(exclude_none=True),
            outputs=outputs,
            status=status,
        )
        manifest = self.make_json_safe(manifest)
        manifest_file = path or os.path.join(self.output_dir, f"{job_id}_manifest.json")
        with open(manifest_file, "w") as f:
            json.dump(manifest, f, indent=2, default=str)
        logger.info("📄 Manifest: %s", manifest_file)
        return manifest_file, manifest
