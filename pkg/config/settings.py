import logging
import os
from typing import Dict, Optional

from dotenv import load_dotenv

from utils.errors import ConfigMismatch
from utils.linalg import Tolerances

load_dotenv(override=True)

TOL_PROFILE_ENV = "MOMENT_FORGE_TOL_PROFILE"

TOLERANCE_PROFILES: Dict[str, Tolerances] = {
    "default": Tolerances(),
    "strict": Tolerances(spectral_gap=1e-10, rank_rel=1e-12, residual_rel=1e-10),
    "loose": Tolerances(spectral_gap=1e-6, rank_rel=1e-8, residual_rel=1e-6),
}


class Settings:
    LOG_LEVEL = os.getenv("MOMENT_FORGE_LOG_LEVEL", "INFO")

    # Output Settings
    OUTPUT_DIR = os.getenv("MOMENT_FORGE_OUTPUT_DIR", "outputs")

    # Simulation Settings
    DEFAULT_DT = 1e-3  # seconds
    DEFAULT_T_END = 30.0  # seconds, covers the slowest HiMAT closed-loop mode
    DEFAULT_OMEGA0 = (1.0, 1.0, 0.0)
    STEADY_STATE_WINDOW = 0.2  # trailing fraction of the horizon

    # Acceptance thresholds for the embedded demo
    DEMO_ERROR_THRESHOLD = 1e-6
    DEMO_MOMENT_THRESHOLD = 1e-7
    DEMO_PARTITION_THRESHOLD = 1e-8
    DEMO_DECAY_RATE = 1.0  # prescribed degree of stability for the HiMAT stabilizer


settings = Settings()


def tolerance_profile(name: Optional[str] = None) -> Tolerances:
    """Resolve a named tolerance preset; env MOMENT_FORGE_TOL_PROFILE when no name is given."""
    name = name or os.getenv(TOL_PROFILE_ENV) or "default"
    try:
        return TOLERANCE_PROFILES[name]
    except KeyError:
        known = ", ".join(sorted(TOLERANCE_PROFILES))
        raise ConfigMismatch(f"Unknown tolerance profile '{name}' (known: {known})") from None


def configure_logging(level: Optional[str] = None) -> None:
    logging.basicConfig(
        level=(level or settings.LOG_LEVEL).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
