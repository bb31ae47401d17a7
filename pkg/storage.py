"""Persistence of simulation logs and run summaries."""
import csv
import logging
import os
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterator, List, Optional, TextIO, Union

import numpy as np
from dotenv import dotenv_values

from downwash import pair_indices
from sim import SimLog, SimRecord

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
NUMBER_FORMAT = ".10g"


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), NUMBER_FORMAT)
    return str(value)


def parse_value(text: str) -> Union[str, int, float, bool]:
    if text in ("true", "false"):
        return text == "true"
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text


def log_columns(n: int) -> List[str]:
    """Column order of the CSV log for an N-generator platform."""
    gens = range(1, n + 1)
    cols = ["t"]
    for prefix in ("", "ref_"):
        cols += [f"{prefix}{c}" for c in ("x", "y", "z")]
        cols += [f"{prefix}{c}" for c in ("roll", "pitch", "yaw")]
        if not prefix:
            cols += ["vx", "vy", "vz", "p", "q", "r"]
    cols += [f"ud_{c}" for c in ("fx", "fy", "fz", "tx", "ty", "tz")]
    for prefix in ("cmd_", ""):
        cols += [f"{prefix}{name}_{i}" for name in ("alpha", "beta", "thrust") for i in gens]
    cols += [f"force_{i}_{c}" for i in gens for c in "xyz"]
    cols += [f"slack_{k}" for k in range(1, 3 * n + 1)]
    cols += ["efficiency"]
    pairs = pair_indices(n)
    cols += [f"o_{i + 1}_{j + 1}" for i, j in pairs]
    cols += [f"o_min_{i + 1}_{j + 1}" for i, j in pairs]
    cols += [f"ext_{c}" for c in ("fx", "fy", "fz", "tx", "ty", "tz")]
    cols += [f"prop_thrust_{i}_{j}" for i in gens for j in range(1, 5)]
    cols += ["qp_status", "qp_iterations", "allocation_tick", "saturated"]
    return cols


def record_row(record: SimRecord) -> List[str]:
    numbers = np.concatenate((
        [record.t],
        record.position, record.attitude, record.velocity, record.angular_velocity,
        record.ref_position, record.ref_attitude,
        record.u_d, record.x_cmd, record.x_actual, record.forces, record.slack,
        [record.efficiency],
        record.o_values, record.o_bound, record.ext_u, record.prop_thrusts,
    ))
    row = [format(float(v), NUMBER_FORMAT) for v in numbers]
    row += [record.qp_status, str(record.qp_iterations), format_value(record.allocation_tick),
            str(record.saturated)]
    return row


class SimLogRepository:
    """Writes logs and summaries below one output directory."""

    def __init__(self, output_dir: Union[str, Path]):
        self.output_dir = Path(output_dir)

    def log_path(self, run_name: str) -> Path:
        return self.output_dir / f"{run_name}.log.csv"

    def summary_path(self, run_name: str) -> Path:
        return self.output_dir / f"{run_name}.summary"

    @contextmanager
    def open_for_write(self, path: Path) -> Iterator[TextIO]:
        """Write to a temporary file and move it into place only on success."""
        self.output_dir.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        handle = open(tmp, "w", encoding="utf-8", newline="")
        try:
            yield handle
            handle.close()
            os.replace(tmp, path)
        except Exception:
            handle.close()
            tmp.unlink(missing_ok=True)
            raise

    def save_log(self, log: SimLog, run_name: str, timestamp: bool = True) -> Path:
        path = self.log_path(run_name)
        with self.open_for_write(path) as handle:
            handle.write(f"# schema_version={SCHEMA_VERSION}\n")
            if timestamp:
                handle.write(f"# generated={datetime.now(timezone.utc).isoformat(timespec='seconds')}\n")
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(log_columns(log.n_generators))
            for record in log.records:
                writer.writerow(record_row(record))
        logger.info(f"Wrote {len(log.records)} rows to {path}")
        return path

    def save_summary(self, summary: Dict[str, object], run_name: str) -> Path:
        path = self.summary_path(run_name)
        with self.open_for_write(path) as handle:
            for key, value in summary.items():
                handle.write(f"{key}={format_value(value)}\n")
        logger.info(f"Wrote summary to {path}")
        return path


def load_summary(path: Union[str, Path]) -> Dict[str, object]:
    """Read a summary written by :meth:`SimLogRepository.save_summary`."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"summary file not found: {path}")
    raw = dotenv_values(path)
    return {key: parse_value(value or "") for key, value in raw.items()}


def read_log(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    """Numeric columns of a CSV log keyed by column name."""
    with open(path, encoding="utf-8", newline="") as handle:
        lines = [line for line in handle if not line.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    rows = list(reader)
    columns: Dict[str, np.ndarray] = {}
    for k, name in enumerate(header):
        values = [row[k] for row in rows]
        try:
            columns[name] = np.array(values, dtype=float)
        except ValueError:
            columns[name] = np.array(values)
    return columns


def write_table(rows: List[List[str]], handle: Optional[TextIO] = None) -> str:
    """Plain-text table with left-aligned columns."""
    widths = [max(len(row[c]) for row in rows) for c in range(len(rows[0]))]
    text = "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows) + "\n"
    if handle is not None:
        handle.write(text)
    return text
