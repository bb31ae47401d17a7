"""Utility functions shared by the command-line tools."""
import logging
from typing import List, Optional

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'

logger = logging.getLogger(__name__)


def setup_logging(level: str = "INFO", verbose: bool = False, quiet: bool = False) -> int:
    """
    Configure the root logger once per process.

    Args:
        level: Level name used when neither flag is given
        verbose: Force DEBUG
        quiet: Force WARNING

    Returns:
        The numeric level that was applied
    """
    if verbose:
        numeric = logging.DEBUG
    elif quiet:
        numeric = logging.WARNING
    else:
        numeric = logging.getLevelName(level.upper())
        if not isinstance(numeric, int):
            raise ValueError(f"unknown log level {level!r}")
    logging.basicConfig(level=numeric, format=LOG_FORMAT, datefmt=DATE_FORMAT, force=True)
    return numeric


def parse_float_list(text: str, size: Optional[int] = None) -> List[float]:
    """
    Parse a comma separated list of numbers.

    Args:
        text: Text such as "0.1, 0.2, 0.3"
        size: Required number of entries, if any

    Returns:
        The parsed values
    """
    parts = [p.strip() for p in text.split(",")]
    if any(not p for p in parts):
        raise ValueError(f"empty entry in list {text!r}")
    values = [float(p) for p in parts]
    if size is not None and len(values) != size:
        raise ValueError(f"expected {size} values, got {len(values)} in {text!r}")
    return values


def parse_vector_list(text: str, size: int) -> List[List[float]]:
    """Parse ';' separated vectors of ``size`` comma separated numbers each."""
    return [parse_float_list(chunk, size) for chunk in text.split(";") if chunk.strip()]


def parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def format_duration(seconds: float) -> str:
    """
    Format a duration in seconds to a human-readable string.

    Args:
        seconds: Time duration in seconds

    Returns:
        Formatted duration string (e.g., "1h 2m 5s", "0.42s")
    """
    minutes, seconds = divmod(seconds, 60)
    hours, minutes = divmod(minutes, 60)

    parts = []
    if hours > 0:
        parts.append(f"{int(hours)}h")
    if minutes > 0 or hours > 0:
        parts.append(f"{int(minutes)}m")
    if parts:
        parts.append(f"{seconds:.0f}s")
    else:
        parts.append(f"{seconds:.2f}s")

    return " ".join(parts)
