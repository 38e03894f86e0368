"""
Runtime Settings

Reads process-level knobs from the environment (populated from `.env` by
python-dotenv at every entry point).

Environment Variables:
    ADMM_WORKERS: Thread-pool size for per-node updates (default: 1)
    ADMM_INNER_TOL: Default inner-solve gradient tolerance (default: 1e-8)
    ADMM_INNER_MAX_ITER: Default inner-solve iteration cap (default: 100)
    ADMM_LOG_LEVEL: Logging level name (default: WARNING)
"""
import logging
import os
from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class RuntimeSettings:
    workers: int = 1
    inner_tolerance: float = 1e-8
    inner_max_iterations: int = 100
    log_level: str = "WARNING"


def _env(name, cast, default):
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(name, f"cannot parse {raw!r}") from exc


def load_settings():
    """
    Build RuntimeSettings from the current environment.

    Returns:
        RuntimeSettings with validated values
    """
    settings = RuntimeSettings(
        workers=_env("ADMM_WORKERS", int, 1),
        inner_tolerance=_env("ADMM_INNER_TOL", float, 1e-8),
        inner_max_iterations=_env("ADMM_INNER_MAX_ITER", int, 100),
        log_level=_env("ADMM_LOG_LEVEL", str, "WARNING").upper(),
    )
    if settings.workers < 1:
        raise ConfigError("ADMM_WORKERS", "must be >= 1")
    if settings.inner_tolerance <= 0:
        raise ConfigError("ADMM_INNER_TOL", "must be > 0")
    if settings.inner_max_iterations < 1:
        raise ConfigError("ADMM_INNER_MAX_ITER", "must be >= 1")
    return settings


def configure_logging(settings=None):
    """Apply the configured log level to the package logger"""
    settings = settings or load_settings()
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("src").setLevel(settings.log_level)
    return settings
