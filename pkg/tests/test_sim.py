from pathlib import Path

import numpy as np
import pytest

from allocation import AllocatorWeights
from config import load_scenario
from downwash import count_violations
from exceptions import ConfigError, EmptyLog, IntegrationDiverged
from sim import (
    HIGH_LEVEL_DIVIDER,
    AllocatorMode,
    Scenario,
    ScenarioRunner,
    SimLog,
    SimRecord,
    metrics,
    run,
)
from trajectory import ReferenceTrajectory, Waypoint

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def hover_scenario(platform, model, **changes):
    options = dict(
        scenario_id="hover-test",
        platform=platform,
        downwash=model,
        trajectory=ReferenceTrajectory.hover((0.0, 0.0, 1.0)),
        weights=AllocatorWeights(o_min=0.12),
        duration=0.3,
    )
    options.update(changes)
    return Scenario(**options)


def make_record(t, z, ref_z=1.0, efficiency=1.0, o=(1.0,), bound=(0.0,), tick=True, status="Optimal",
                props=(0.1, 0.1)):
    zeros = np.zeros(3)
    return SimRecord(
        t=t, position=np.array([0.0, 0.0, z]), attitude=zeros, velocity=zeros, angular_velocity=zeros,
        ref_position=np.array([0.0, 0.0, ref_z]), ref_attitude=zeros, u_d=np.zeros(6), x_cmd=np.zeros(3),
        x_actual=np.zeros(3), forces=np.zeros(3), slack=np.zeros(3), efficiency=efficiency,
        o_values=np.array(o), o_bound=np.array(bound), ext_u=np.zeros(6), prop_thrusts=np.array(props),
        qp_status=status, qp_iterations=1, allocation_tick=tick, saturated=0,
    )


def test_loop_rates(four, four_model):
    runner = ScenarioRunner(hover_scenario(four, four_model))
    log = runner.run()
    assert len(log) == 300
    assert runner.allocation_count == 30
    assert runner.low_level_count == 150
    ticks = [k for k, r in enumerate(log.records) if r.allocation_tick]
    assert ticks == list(range(0, 300, HIGH_LEVEL_DIVIDER))
    assert runner.delay_steps == 20


def test_hover_holds_position(four, four_model):
    log = run(hover_scenario(four, four_model))
    summary = metrics(log)
    assert summary["max_position_error_m"] < 1e-4
    assert summary["min_efficiency"] >= 0.999
    assert summary["violation_count"] == 0
    assert not summary["diverged"]
    np.testing.assert_allclose(log.records[-1].ext_u, 0.0, atol=1e-9)


def test_runs_are_deterministic(four, four_model):
    scenario = hover_scenario(four, four_model, noise_position=0.002, noise_attitude=0.002, seed=11)
    first, second = run(scenario), run(scenario)
    np.testing.assert_array_equal(first.column("position"), second.column("position"))
    np.testing.assert_array_equal(first.column("x_cmd"), second.column("x_cmd"))
    other = run(hover_scenario(four, four_model, noise_position=0.002, noise_attitude=0.002, seed=12))
    assert not np.array_equal(first.column("position"), other.column("position"))


def test_zero_delay_runs(four, four_model):
    log = run(hover_scenario(four, four_model, delay=0.0, duration=0.05))
    assert len(log) == 50


def test_divergence_keeps_partial_log(four, four_model):
    trajectory = ReferenceTrajectory([Waypoint(0.0, (0.0, 0.0, 1.0)), Waypoint(0.2, (1.0, 0.0, 1.0))])
    scenario = hover_scenario(four, four_model, trajectory=trajectory, divergence_position=0.05, duration=1.0)
    with pytest.raises(IntegrationDiverged) as info:
        run(scenario)
    log = info.value.log
    assert log.diverged
    assert 0 < len(log) < 1000
    assert metrics(log)["diverged"] is True


def test_scenario_validation(four, four_model):
    with pytest.raises(ConfigError):
        hover_scenario(four, four_model, duration=0.0)
    with pytest.raises(ConfigError):
        hover_scenario(four, four_model, delay=-0.01)
    scenario = hover_scenario(four, four_model)
    assert scenario.with_mode("conventional").mode is AllocatorMode.CONVENTIONAL
    assert scenario.o_min == 0.12


def test_log_timestamps_increase():
    log = SimLog("s", "conventional", 1, 0.0)
    log.append(make_record(0.0, 1.0))
    with pytest.raises(ValueError):
        log.append(make_record(0.0, 1.0))


def test_metrics_on_synthetic_log():
    log = SimLog("synthetic", "downwash-aware", 1, 0.1, dt=0.5, transient=1.0, violation_tol=1e-4)
    log.append(make_record(0.0, 1.0, o=(0.0,), bound=(0.01,)))
    log.append(make_record(0.5, 0.9, efficiency=0.5, tick=False))
    log.append(make_record(1.0, 1.0, efficiency=0.8, o=(0.0,), bound=(0.01,), status="Relaxed"))
    log.append(make_record(1.5, 1.1, efficiency=0.9, o=(0.02,), bound=(0.01,)))
    summary = metrics(log)
    assert summary["rms_position_error_m"] == pytest.approx(np.sqrt(0.005))
    assert summary["max_position_error_m"] == pytest.approx(0.1)
    assert summary["rms_attitude_error_rad"] == pytest.approx(0.0, abs=1e-7)
    assert summary["min_efficiency"] == pytest.approx(0.8)
    assert summary["mean_efficiency"] == pytest.approx(0.9)
    assert summary["max_z_drop_m"] == pytest.approx(0.1)
    assert summary["max_z_error_m"] == pytest.approx(0.1)
    assert summary["violation_count"] == 1
    assert summary["relaxed_ticks"] == 1
    assert summary["total_impulse_ns"] == pytest.approx(0.4)
    assert summary["end_time_s"] == 1.5


def test_metrics_of_empty_log():
    with pytest.raises(EmptyLog):
        metrics(SimLog("empty", "conventional", 4, 0.0))


def run_logged(scenario, mode):
    try:
        return run(scenario.with_mode(mode))
    except IntegrationDiverged as e:
        return e.log


@pytest.fixture(scope="module")
def pitch6_runs():
    scenario = load_scenario(SCENARIOS / "pitch6.cfg")
    return {mode: run_logged(scenario, mode) for mode in AllocatorMode}


@pytest.fixture(scope="module")
def twoevent4_runs():
    scenario = load_scenario(SCENARIOS / "twoevent4.cfg")
    return {mode: run_logged(scenario, mode) for mode in AllocatorMode}


def violating_tick_times(log):
    return [r.t for r in log.allocation_records()
            if r.t >= log.transient and count_violations(r.o_values, r.o_bound, log.violation_tol) > 0]


@pytest.mark.slow
def test_conventional_roll_falls_into_the_wake(pitch6_runs):
    summary = metrics(pitch6_runs[AllocatorMode.CONVENTIONAL])
    assert summary["violation_count"] > 0
    assert summary["max_z_drop_m"] >= 0.1


@pytest.mark.slow
def test_aware_roll_keeps_clear_of_the_wake(pitch6_runs):
    conventional = metrics(pitch6_runs[AllocatorMode.CONVENTIONAL])
    aware = metrics(pitch6_runs[AllocatorMode.DOWNWASH_AWARE])
    assert not aware["diverged"]
    assert aware["violation_count"] == 0
    assert aware["max_z_error_m"] <= 0.3 * conventional["max_z_drop_m"]
    assert aware["mean_efficiency"] >= 0.9


@pytest.mark.slow
def test_aware_survives_both_events(twoevent4_runs):
    aware = metrics(twoevent4_runs[AllocatorMode.DOWNWASH_AWARE])
    assert not aware["diverged"]
    assert aware["rms_position_error_m"] <= 0.05


@pytest.mark.slow
def test_conventional_degrades_after_the_second_event(twoevent4_runs):
    log = twoevent4_runs[AllocatorMode.CONVENTIONAL]
    if log.diverged:
        return
    late = [np.linalg.norm(r.position - r.ref_position) for r in log.records if r.t >= 13.0]
    assert max(late) > 0.15


@pytest.mark.slow
def test_conventional_meets_both_events(twoevent4_runs):
    times = violating_tick_times(twoevent4_runs[AllocatorMode.CONVENTIONAL])
    assert any(5.0 <= t < 13.0 for t in times)
    if not twoevent4_runs[AllocatorMode.CONVENTIONAL].diverged:
        assert any(13.0 <= t <= 21.0 for t in times)
