import logging
import os
import sys
from dataclasses import dataclass

from dotenv import load_dotenv

from errors import ConfigError

load_dotenv()


def _env_float(name, default, positive=True):
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(name, raw, "a number") from None
    if positive and not value > 0:
        raise ConfigError(name, raw, "a positive number")
    return value


def _env_int(name, default, minimum=0):
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(name, raw, "an integer") from None
    if value < minimum:
        raise ConfigError(name, raw, f"an integer >= {minimum}")
    return value


@dataclass(frozen=True)
class Settings:
    """Runtime defaults, overridable through the environment or a .env file."""

    log_level: str = "WARNING"
    tol_v: float = 1e-8
    tol_kcl: float = 1e-8
    max_iter: int = 50
    damping: float = 1.0
    min_synth_fraction: float = 0.5
    seed: int = 0

    @classmethod
    def from_env(cls):
        level = os.getenv("GRIDGLASS_LOG_LEVEL", cls.log_level).upper()
        if not isinstance(logging.getLevelName(level), int):
            raise ConfigError("GRIDGLASS_LOG_LEVEL", level, "a logging level name")

        damping = _env_float("GRIDGLASS_DAMPING", cls.damping)
        if damping > 1.0:
            raise ConfigError("GRIDGLASS_DAMPING", damping, "a factor in (0, 1]")
        fraction = _env_float("GRIDGLASS_MIN_SYNTH_FRACTION", cls.min_synth_fraction, positive=False)
        if not 0.0 <= fraction <= 1.0:
            raise ConfigError("GRIDGLASS_MIN_SYNTH_FRACTION", fraction, "a fraction in [0, 1]")

        return cls(
            log_level=level,
            tol_v=_env_float("GRIDGLASS_TOL_V", cls.tol_v),
            tol_kcl=_env_float("GRIDGLASS_TOL_KCL", cls.tol_kcl),
            max_iter=_env_int("GRIDGLASS_MAX_ITER", cls.max_iter, minimum=1),
            damping=damping,
            min_synth_fraction=fraction,
            seed=_env_int("GRIDGLASS_SEED", cls.seed),
        )


def configure_logging(level="WARNING"):
    """Send diagnostics to stderr; stdout is reserved for machine-readable output."""
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level)
