import logging
import os

from pythonjsonlogger import jsonlogger

LOG_LEVEL_ENV = "TACTILE_LOG_LEVEL"


def resolve_log_level(default: str = "INFO") -> str:
    """Reads the log verbosity from the environment, falling back to `default`."""
    level = os.environ.get(LOG_LEVEL_ENV, default).upper()
    if level not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
        return default
    return level


def setup_logging(log_level: str | None = None, log_format: str = "text") -> None:
    """Configures the root logger for the experiment pipeline."""
    logger = logging.getLogger()
    logger.setLevel((log_level or resolve_log_level()).upper())

    handler = logging.StreamHandler()

    formatter: logging.Formatter
    if log_format.lower() == "json":
        formatter = jsonlogger.JsonFormatter(  # type: ignore[attr-defined]
            "%(asctime)s %(name)s %(levelname)s %(message)s"
        )
    else:
        formatter = logging.Formatter("%(asctime)s - %(levelname)s - %(name)s - %(message)s")

    handler.setFormatter(formatter)

    # Repeated calls (tests, notebooks) must not stack handlers
    if logger.hasHandlers():
        logger.handlers.clear()
    logger.addHandler(handler)
