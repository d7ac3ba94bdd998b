import argparse
import json
import logging
import sys
from typing import List, Optional

import numpy as np

from agents.pipeline_agent import MomentPipelineAgent, RunReport
from config.himat import HIMAT_NAME
from config.settings import configure_logging, settings, tolerance_profile
from moments.synthesis import StabilizerWeights
from utils.errors import MomentForgeError, NotAssignable, NumericalFailure, ParseError
from utils.linalg import Tolerances
from utils.model_io import ModelFile, load_compensator, load_matrix, load_model, save_compensator, save_model

logger = logging.getLogger("moment_forge")


# ------------------------------------------------------------------------------
# 🧭 Argument Parsing
# ------------------------------------------------------------------------------
def parse_omega0(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"omega0 must be comma-separated numbers: {e}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moment-forge",
        description="Moment assignment, stabilizing compensator synthesis and simulation",
    )
    parser.add_argument("--tol-spectral-gap", type=float)
    parser.add_argument("--tol-rank-rel", type=float)
    parser.add_argument("--tol-residual-rel", type=float)
    parser.add_argument("--log-level", default=None)
    parser.add_argument("--report", help="write the run manifest JSON to this path")
    sub = parser.add_subparsers(dest="command", required=True)

    analyze = sub.add_parser("analyze", help="moments, spectra and stability diagnostics")
    analyze.add_argument("model")

    assign = sub.add_parser("assign", help="solve for the compensator moment M_c")
    assign.add_argument("model")
    assign.add_argument("--weights", help="JSON p x nu weight matrix overriding the model file")
    assign.add_argument("--require-exact", action="store_true")

    synth = sub.add_parser("synthesize", help="build a stabilizing moment-assigning compensator")
    synth.add_argument("model")
    synth.add_argument("--out", required=True, help="compensator JSON output path")
    synth.add_argument("--ga", help="JSON nu x p G_a matrix")
    synth.add_argument("--decay-rate", type=float)
    synth.add_argument("--weights", help="JSON p x nu weight matrix overriding the model file")
    synth.add_argument("--require-exact", action="store_true",
                       help="fail with exit 4 instead of falling back to the least-squares moment")

    sim = sub.add_parser("simulate", help="simulate the closed loop with a stored compensator")
    sim.add_argument("model")
    sim.add_argument("compensator")
    sim.add_argument("--t-end", type=float, default=settings.DEFAULT_T_END)
    sim.add_argument("--dt", type=float, default=settings.DEFAULT_DT)
    sim.add_argument("--omega0", type=parse_omega0)
    sim.add_argument("--window", type=float, default=settings.STEADY_STATE_WINDOW)
    sim.add_argument("--csv")
    sim.add_argument("--plot-script")

    verify = sub.add_parser("verify", help="recheck the closed-loop moment of a stored compensator")
    verify.add_argument("model")
    verify.add_argument("compensator")

    demo = sub.add_parser("demo-himat", help="full pipeline on the embedded HiMAT model")
    demo.add_argument("--m-des", default=None, help="zero | open | path to a JSON p x nu matrix")
    demo.add_argument("--csv")
    demo.add_argument("--plot-script")

    export = sub.add_parser("export-himat", help="write the embedded HiMAT model file")
    export.add_argument("path")
    return parser


def resolve_tolerances(args: argparse.Namespace, model: Optional[ModelFile] = None) -> Tolerances:
    """Profile, then model-file overrides, then explicit flags."""
    tol = tolerance_profile()
    if model is not None:
        tol = model.apply_tolerances(tol)
    flags = {
        "spectral_gap": args.tol_spectral_gap,
        "rank_rel": args.tol_rank_rel,
        "residual_rel": args.tol_residual_rel,
    }
    flags = {k: v for k, v in flags.items() if v is not None}
    if flags:
        tol = Tolerances(**{**tol.model_dump(), **flags})
    return tol


# ------------------------------------------------------------------------------
# 🧩 Commands
# ------------------------------------------------------------------------------
def cmd_analyze(args, agent: MomentPipelineAgent):
    model = load_model(args.model)
    agent.tol = resolve_tolerances(args, model)
    model.tolerances = None
    return agent.analyze(model), {}


def cmd_assign(args, agent: MomentPipelineAgent):
    model = load_model(args.model)
    agent.tol = resolve_tolerances(args, model)
    model.tolerances = None
    weights = load_matrix(args.weights, "weights") if args.weights else None
    solution, report = agent.assign(model, weights=weights)
    if args.require_exact and not solution.exact:
        raise NotAssignable(f"M_des is not assignable (residual {solution.residual:.3e})", solution.residual)
    return report, {}


def cmd_synthesize(args, agent: MomentPipelineAgent):
    model = load_model(args.model)
    agent.tol = resolve_tolerances(args, model)
    model.tolerances = None
    G_a = load_matrix(args.ga, "G_a") if args.ga else None
    weights = model.stabilizer or StabilizerWeights()
    if args.decay_rate is not None:
        weights = weights.model_copy(update={"decay_rate": args.decay_rate})
    moment_weights = load_matrix(args.weights, "weights") if args.weights else None
    result, report = agent.synthesize(model, G_a=G_a, weights=weights, moment_weights=moment_weights,
                                      require_exact=args.require_exact)
    path = save_compensator(args.out, result.compensator, model.plant(), result.canonical)
    logger.info("💾 Compensator written to %s", path)
    return report, {"compensator": str(path)}


def cmd_simulate(args, agent: MomentPipelineAgent):
    model = load_model(args.model)
    agent.tol = resolve_tolerances(args, model)
    model.tolerances = None
    comp = load_compensator(args.compensator).compensator()
    omega0 = args.omega0
    if omega0 is None:
        nu = model.generator().nu
        omega0 = settings.DEFAULT_OMEGA0 if nu == len(settings.DEFAULT_OMEGA0) else np.ones(nu)
    _, report, outputs = agent.simulate(
        model, comp, omega0, t_end=args.t_end, dt=args.dt, window=args.window,
        csv_path=args.csv, plot_script=args.plot_script,
    )
    return report, outputs


def cmd_verify(args, agent: MomentPipelineAgent):
    model = load_model(args.model)
    agent.tol = resolve_tolerances(args, model)
    model.tolerances = None
    stored = load_compensator(args.compensator)
    # a least-squares fallback compensator is checked against the moment it was built for
    target = stored.canonical.M_des if stored.canonical is not None else None
    report = agent.verify(model, stored.compensator(), target=target)
    if report.moment_error is not None:
        bound = settings.DEMO_MOMENT_THRESHOLD * (1.0 + np.linalg.norm(report.M_des_effective))
        if report.moment_error > bound:
            raise NumericalFailure(f"stored compensator misses M_des by {report.moment_error:.3e}", stage="verify")
    return report, {}


def cmd_demo_himat(args, agent: MomentPipelineAgent):
    agent.tol = resolve_tolerances(args)
    m_des = args.m_des
    if m_des not in (None, "zero", "open"):
        m_des = load_matrix(m_des, "M_des")
    return agent.run_demo(m_des, csv_path=args.csv, plot_script=args.plot_script)


def cmd_export_himat(args, agent: MomentPipelineAgent):
    path = save_model(agent.himat_model(), args.path)
    logger.info("💾 HiMAT model written to %s", path)
    return RunReport(model=HIMAT_NAME, stages=["export"]), {"model": str(path)}


COMMANDS = {
    "analyze": cmd_analyze,
    "assign": cmd_assign,
    "synthesize": cmd_synthesize,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "demo-himat": cmd_demo_himat,
    "export-himat": cmd_export_himat,
}


# ------------------------------------------------------------------------------
# 🚀 Entry Point
# ------------------------------------------------------------------------------
def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        agent = MomentPipelineAgent(tol=tolerance_profile())
        report, outputs = COMMANDS[args.command](args, agent)
    except MomentForgeError as e:
        print(f"❌ {e.stage}: {e}", file=sys.stderr)
        return e.exit_code
    except ValueError as e:
        # pydantic rejects non-positive tolerance flags
        err = ParseError(str(e))
        print(f"❌ {err.stage}: {err}", file=sys.stderr)
        return err.exit_code

    if args.report:
        agent.write_manifest(args.command, report, outputs, "completed", path=args.report)
    print(json.dumps(agent.make_json_safe(report), indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
