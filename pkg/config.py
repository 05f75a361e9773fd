import os
import sys
import json
import logging

import structlog
from dotenv import load_dotenv, find_dotenv

# Load .env robustly
load_dotenv(find_dotenv(usecwd=True), override=True)

_LEVELS = {
    "DEBUG": logging.DEBUG,
    "INFO": logging.INFO,
    "WARNING": logging.WARNING,
    "ERROR": logging.ERROR,
    "CRITICAL": logging.CRITICAL,
}


def _truthy(value: str) -> bool:
    return str(value).strip().lower() in ("1", "true", "yes", "on")


def get_log_level() -> int:
    name = os.getenv("BIR_LOG_LEVEL", "WARNING").strip().upper()
    if name not in _LEVELS:
        raise ValueError(f"BIR_LOG_LEVEL must be one of {sorted(_LEVELS)}, got {name!r}.")
    return _LEVELS[name]


def get_strict_save() -> bool:
    """Default for wire.save(strict=...) when the caller passes nothing."""
    return _truthy(os.getenv("BIR_STRICT_SAVE", "1"))


def get_default_base() -> int:
    raw = os.getenv("BIR_DEFAULT_BASE", "0x400000")
    try:
        base = int(raw, 0)
    except ValueError:
        raise ValueError(f"BIR_DEFAULT_BASE is not an integer literal: {raw!r}.")
    if not 0 <= base < 1 << 64:
        raise ValueError(f"BIR_DEFAULT_BASE out of the 64-bit address range: {raw!r}.")
    return base


def get_dump_bytes() -> int:
    raw = os.getenv("BIR_DUMP_BYTES", "16")
    try:
        count = int(raw)
    except ValueError:
        raise ValueError(f"BIR_DUMP_BYTES is not an integer: {raw!r}.")
    if count < 2:
        raise ValueError("BIR_DUMP_BYTES must be at least 2.")
    return count


def configure_logging() -> None:
    """
    Route structlog to stderr at BIR_LOG_LEVEL.
    stdout belongs to command output, so nothing logged may land there.
    """
    structlog.configure(
        processors=[
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.dev.ConsoleRenderer(colors=False),
        ],
        wrapper_class=structlog.make_filtering_bound_logger(get_log_level()),
        logger_factory=structlog.PrintLoggerFactory(sys.stderr),
        cache_logger_on_first_use=False,
    )


def settings_status() -> dict:
    """Quick check of the resolved settings."""
    return {
        "log_level": logging.getLevelName(get_log_level()),
        "strict_save": get_strict_save(),
        "default_base": hex(get_default_base()),
        "dump_bytes": get_dump_bytes(),
        "dotenv": find_dotenv(usecwd=True) or None,
    }


configure_logging()

if __name__ == "__main__":
    try:
        print("Settings:", json.dumps(settings_status(), indent=2))
    except ValueError as e:
        print(f"Settings error: {e}")
        print("Troubleshoot: check the BIR_* variables in your environment or .env file.")
