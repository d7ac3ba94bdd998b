"""Exception hierarchy shared by the library and the CLI.

Every error carries the process exit code the CLI reports for it.
"""
from typing import Iterable, List, Optional


class MomentForgeError(Exception):
    """Base class for all moment-forge failures."""

    exit_code = 1
    stage = "pipeline"

    def __init__(self, message: str, *, stage: Optional[str] = None):
        super().__init__(message)
        if stage is not None:
            self.stage = stage


class ParseError(MomentForgeError):
    exit_code = 2
    stage = "parse"


class DimensionMismatch(MomentForgeError):
    exit_code = 2
    stage = "dimensions"


class ConfigMismatch(MomentForgeError):
    exit_code = 2
    stage = "configuration"


class SpectraOverlap(MomentForgeError):
    exit_code = 3
    stage = "spectral condition"

    def __init__(self, message: str, min_gap: float = 0.0, **kwargs):
        super().__init__(message, **kwargs)
        self.min_gap = float(min_gap)


class PoleAtPoint(MomentForgeError):
    exit_code = 3
    stage = "spectral condition"


class DefectiveGenerator(MomentForgeError):
    exit_code = 3
    stage = "spectral condition"


class NotAssignable(MomentForgeError):
    exit_code = 4
    stage = "assignment"

    def __init__(self, message: str, residual: float = 0.0, **kwargs):
        super().__init__(message, **kwargs)
        self.residual = float(residual)


class _ModeFailure(MomentForgeError):
    exit_code = 5
    stage = "stabilization"

    def __init__(self, message: str, offending: Iterable[complex] = (), **kwargs):
        self.offending: List[complex] = [complex(v) for v in offending]
        if self.offending:
            listed = ", ".join(_format_eig(v) for v in self.offending)
            message = f"{message} (offending eigenvalues: {listed})"
        super().__init__(message, **kwargs)


class NotStabilizable(_ModeFailure):
    pass


class NotDetectable(_ModeFailure):
    pass


class NumericalFailure(MomentForgeError):
    pass


class IllConditioned(NumericalFailure):
    pass


class RiccatiFailure(NumericalFailure):
    stage = "stabilization"


class NotMomentAssigning(MomentForgeError):
    stage = "canonicalization"


class RankDeficiencyAmbiguous(NumericalFailure):
    stage = "canonicalization"


class EmptyTrajectory(MomentForgeError):
    stage = "simulation"


class AcceptanceFailure(MomentForgeError):
    stage = "acceptance"


def _format_eig(value: complex) -> str:
    if abs(value.imag) == 0.0:
        return f"{value.real:.6g}"
    sign = "+" if value.imag >= 0 else "-"
    return f"{value.real:.6g}{sign}{abs(value.imag):.6g}j"
