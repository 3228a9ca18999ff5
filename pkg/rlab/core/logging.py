from __future__ import annotations
import logging, logging.handlers
import os
from pathlib import Path
from app_config import (
    APP_NAME, COMPANY_NAME, LOG_DIR, LOG_ENV_VAR, DEFAULT_LOG_LEVEL, LOG_MAX_BYTES, LOG_BACKUPS,
)

LOG_FILE = LOG_DIR / f"{APP_NAME.lower()}.log"


def level_from_env(default: str = DEFAULT_LOG_LEVEL) -> int:
    """Resolve RLAB_LOG (DEBUG/INFO/WARNING/ERROR) to a logging level; unknown names fall back."""
    name = os.getenv(LOG_ENV_VAR, default).strip().upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.getLevelName(default)


def setup_logging(level: int | None = None, log_file: Path | None = LOG_FILE) -> logging.Logger:
    logger = logging.getLogger()  # root
    level = level_from_env() if level is None else level
    logger.setLevel(level)

    # Clear duplicate handlers if reinit
    for h in list(logger.handlers):
        logger.removeHandler(h)
        h.close()

    # key=value lines; messages are "event=<name> k=v ..."
    fmt = logging.Formatter(
        fmt="ts=%(asctime)s level=%(levelname)s logger=%(name)s %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S"
    )

    ch = logging.StreamHandler()
    ch.setFormatter(fmt)
    ch.setLevel(level)
    logger.addHandler(ch)

    if log_file is not None:
        try:
            log_file.parent.mkdir(parents=True, exist_ok=True)
            fh = logging.handlers.RotatingFileHandler(
                log_file, maxBytes=LOG_MAX_BYTES, backupCount=LOG_BACKUPS, encoding="utf-8"
            )
            fh.setFormatter(fmt)
            fh.setLevel(level)
            logger.addHandler(fh)
        except OSError as ex:
            logger.warning("event=log_file_unavailable path=%s error=%s", log_file, ex)
            log_file = None

    logger.debug("event=logging_ready app=%s vendor=%s file=%s", APP_NAME, COMPANY_NAME.replace(" ", "_"), log_file)
    return logger


# Convenience helper so other modules consistently acquire loggers
def get_logger(name: str | None = None) -> logging.Logger:
    """
    Return a child logger of the root configured by setup_logging().
    Usage: from rlab.core.logging import get_logger; log = get_logger(__name__)
    """
    return logging.getLogger(name or APP_NAME)
