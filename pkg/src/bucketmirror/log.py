"""Logging setup. Library modules log through `loguru.logger` and bind their own context."""

import sys

from loguru import logger


def configure_logging(level: str = "INFO", serialize: bool = False) -> None:
    """Install a single stderr sink.

    Args:
        level: minimum level to emit, e.g. "DEBUG" or "WARNING".

        serialize: emit one JSON object per line instead of human-readable text.
    """
    logger.remove()
    logger.add(
        sys.stderr,
        level=level.upper(),
        serialize=serialize,
        enqueue=False,
        backtrace=False,
        diagnose=False,
    )
