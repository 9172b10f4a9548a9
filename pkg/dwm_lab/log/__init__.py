import logging
import os
import sys
from enum import Enum
from pathlib import Path
from typing import Optional

from loguru import logger

from dwm_lab.config_loader import get_settings

CONSOLE_FORMAT = "<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level> | {message}\n"
COMMAND_CONSOLE_FORMAT = ("<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level> | "
                          "<cyan>{extra[command]}</cyan> | {message}\n")


class LoggingFormat(str, Enum):
    CONSOLE = "CONSOLE"
    JSON = "JSON"


def telemetry_filter(record: dict) -> bool:
    return record.get("extra", {}).get("telemetry", False)


def inv_telemetry_filter(record: dict) -> bool:
    return not record.get("extra", {}).get("telemetry", False)


def console_format(record: dict) -> str:
    # the command column only exists inside LabRunner's contextualize block
    return COMMAND_CONSOLE_FORMAT if "command" in record["extra"] else CONSOLE_FORMAT


def setup_logger(level: str = "INFO", fmt: LoggingFormat = LoggingFormat.CONSOLE, log_folder: Optional[str] = None):
    """
    Route console records to stderr and, when a log folder is configured, telemetry records (logged with
    telemetry=True) to a JSON-lines file per process in that folder.

    Args:
        level: minimum level name; unknown names fall back to INFO.
        fmt: CONSOLE for human-readable lines, JSON for serialized records on stderr.
        log_folder: telemetry destination, config.log_folder when omitted.
    """
    level: int = logging.getLevelName(level.upper())
    if type(level) is not int:
        level = logging.INFO

    logger.remove(None)
    if fmt == LoggingFormat.JSON:
        logger.add(sys.stderr, filter=inv_telemetry_filter, level=level, format="{message}", colorize=False,
                   serialize=True)
    else:
        logger.add(sys.stderr, filter=inv_telemetry_filter, level=level, format=console_format, colorize=True)

    log_folder = log_folder if log_folder is not None else get_settings().get("CONFIG.LOG_FOLDER", "")
    if log_folder:
        Path(log_folder).mkdir(parents=True, exist_ok=True)
        logger.add(
            os.path.join(log_folder, f"dwm-lab.{os.getpid()}.log"),
            filter=telemetry_filter,
            level=level,
            format="{message}",
            colorize=False,
            serialize=True,
        )

    return logger


def get_logger(*args, **kwargs):
    return logger
