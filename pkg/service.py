"""Service layer: running scenarios, persisting results and comparing runs."""
import asyncio
import logging
import time
from typing import Dict, List, Optional, Tuple

from exceptions import IntegrationDiverged, ScenarioMismatch
from sim import AllocatorMode, Scenario, metrics, run
from storage import SimLogRepository, format_value
from utils import format_duration

logger = logging.getLogger(__name__)

COMPARED_METRICS = (
    'rms_position_error_m',
    'max_position_error_m',
    'rms_attitude_error_rad',
    'min_efficiency',
    'mean_efficiency',
    'max_z_drop_m',
    'max_z_error_m',
    'violation_count',
    'total_impulse_ns',
)


class SimulationService:
    """Runs scenarios and stores their logs and summaries."""

    def __init__(self, repository: SimLogRepository, timestamp: bool = True):
        """
        Initialize the simulation service.

        Args:
            repository: Where logs and summaries are written
            timestamp: Whether CSV logs carry a generation timestamp line
        """
        self.repository = repository
        self.timestamp = timestamp

    def run_scenario(self, scenario: Scenario, run_name: str) -> Dict[str, object]:
        """
        Run one scenario and persist its log and summary.

        A diverged run still writes the partial log and its summary before
        the IntegrationDiverged error is re-raised.

        Returns:
            The summary metrics
        """
        start_time = time.time()
        try:
            log = run(scenario)
        except IntegrationDiverged as e:
            if e.log is not None and len(e.log):
                self.repository.save_log(e.log, run_name, self.timestamp)
                self.repository.save_summary(metrics(e.log), run_name)
            logger.error(f"Run {run_name} diverged after {format_duration(time.time() - start_time)}: {e}")
            raise

        summary = metrics(log)
        self.repository.save_log(log, run_name, self.timestamp)
        self.repository.save_summary(summary, run_name)
        logger.info(
            f"Run {run_name} completed in {format_duration(time.time() - start_time)}. "
            f"RMS position error: {summary['rms_position_error_m']:.4f} m, "
            f"violations: {summary['violation_count']}"
        )
        return summary


class ComparisonRunner:
    """Runs the conventional and the downwash-aware allocator side by side."""

    def __init__(self, service: SimulationService):
        self.service = service

    async def _run_mode(self, scenario: Scenario, run_name: str) -> Tuple[Dict[str, object], bool]:
        try:
            summary = await asyncio.to_thread(self.service.run_scenario, scenario, run_name)
            return summary, False
        except IntegrationDiverged as e:
            if e.log is not None and len(e.log):
                return metrics(e.log), True
            raise

    async def compare(self, scenario: Scenario, run_name: str) -> Tuple[Dict[str, object], Dict[str, object]]:
        """
        Run both modes concurrently in worker threads.

        Returns:
            (conventional summary, downwash-aware summary)
        """
        modes = (AllocatorMode.CONVENTIONAL, AllocatorMode.DOWNWASH_AWARE)
        results = await asyncio.gather(
            *(self._run_mode(scenario.with_mode(mode), f"{run_name}-{mode.value}") for mode in modes)
        )
        for mode, (_, diverged) in zip(modes, results):
            if diverged:
                logger.warning(f"{mode.value} run of {run_name} diverged; comparing its partial log")
        return results[0][0], results[1][0]


def compare_summaries(first: Dict[str, object], second: Dict[str, object],
                      metric_names: Optional[Tuple[str, ...]] = None) -> List[List[str]]:
    """
    Side-by-side table of two summaries of the same scenario.

    Returns:
        Rows [metric, first, second, second - first], header first
    """
    if first.get('scenario_id') != second.get('scenario_id'):
        raise ScenarioMismatch(
            f"summaries describe different scenarios: {first.get('scenario_id')!r} vs {second.get('scenario_id')!r}"
        )
    rows = [['metric', str(first.get('mode', 'first')), str(second.get('mode', 'second')), 'delta']]
    for name in metric_names or COMPARED_METRICS:
        a, b = first.get(name), second.get(name)
        if isinstance(a, (int, float)) and isinstance(b, (int, float)) and not isinstance(a, bool):
            delta_text = format_value(b - a)
        else:
            delta_text = ''
        rows.append([name, format_value(a), format_value(b), delta_text])
    return rows
