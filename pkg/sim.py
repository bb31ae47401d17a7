"""Closed-loop scenario runner.

Physics runs at 1 kHz with RK4. Every 10 physics steps the high-level
controller computes u^d and the allocator turns it into gimbal and thrust
commands, which reach the platform through a fixed-latency FIFO. Every 2
physics steps the low-level loop tracks the latest command with the gimbal
PID and the quad mixer. The downwash disturbance is recomputed from the
actual propeller thrusts and gimbal angles on every physics step.
"""
from __future__ import annotations

import enum
import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Deque, Dict, List, Tuple

import numpy as np

from allocation import AllocationResult, AllocatorWeights, NullspaceAllocator
from control import GimbalPid, GimbalPidGains, QuadMixer, TrackingController, TrackingGains, gimbal_accelerations, joint_torques
from core_types import AllocationVector, PlatformConfig, PlatformState, Wrench, rotation_body_to_world
from downwash import DownwashModel, count_violations, disturbance_wrench, thrust_decrements
from dynamics import DynamicsParams, actuation_wrench, step
from exceptions import AttitudeSingular, ConfigError, EmptyLog, IntegrationDiverged
from trajectory import ReferenceTrajectory

logger = logging.getLogger(__name__)

PHYSICS_DT = 1e-3
HIGH_LEVEL_DIVIDER = 10
LOW_LEVEL_DIVIDER = 2


class AllocatorMode(str, enum.Enum):
    CONVENTIONAL = "conventional"
    DOWNWASH_AWARE = "downwash-aware"


@dataclass(frozen=True, eq=False)
class Scenario:
    scenario_id: str
    platform: PlatformConfig
    downwash: DownwashModel
    trajectory: ReferenceTrajectory
    mode: AllocatorMode = AllocatorMode.DOWNWASH_AWARE
    weights: AllocatorWeights = field(default_factory=AllocatorWeights)
    duration: float = 10.0
    seed: int = 0
    downwash_enabled: bool = True
    delay: float = 0.02
    noise_position: float = 0.0
    noise_attitude: float = 0.0
    thrust_time_constant: float = 0.01
    tracking_gains: TrackingGains = field(default_factory=TrackingGains)
    gimbal_gains: GimbalPidGains = field(default_factory=GimbalPidGains)
    divergence_position: float = 2.0
    transient: float = 1.0
    violation_tol: float = 1e-4

    def __post_init__(self) -> None:
        if not self.duration > 0:
            raise ConfigError(f"duration must be positive, got {self.duration}")
        if self.delay < 0 or self.thrust_time_constant < 0:
            raise ConfigError("delay and thrust time constant must be non-negative")
        if self.noise_position < 0 or self.noise_attitude < 0:
            raise ConfigError("noise standard deviations must be non-negative")
        if not self.divergence_position > 0:
            raise ConfigError(f"divergence_position must be positive, got {self.divergence_position}")
        object.__setattr__(self, "mode", AllocatorMode(self.mode))

    @property
    def o_min(self) -> float:
        return self.weights.o_min

    def with_mode(self, mode: AllocatorMode) -> "Scenario":
        return replace(self, mode=AllocatorMode(mode))


@dataclass(frozen=True, eq=False)
class SimRecord:
    """One physics tick. Allocation fields hold the latest allocation output."""

    t: float
    position: np.ndarray
    attitude: np.ndarray
    velocity: np.ndarray
    angular_velocity: np.ndarray
    ref_position: np.ndarray
    ref_attitude: np.ndarray
    u_d: np.ndarray
    x_cmd: np.ndarray
    x_actual: np.ndarray
    forces: np.ndarray
    slack: np.ndarray
    efficiency: float
    o_values: np.ndarray
    o_bound: np.ndarray
    ext_u: np.ndarray
    prop_thrusts: np.ndarray
    qp_status: str
    qp_iterations: int
    allocation_tick: bool
    saturated: int


@dataclass(eq=False)
class SimLog:
    scenario_id: str
    mode: str
    n_generators: int
    o_min: float
    dt: float = PHYSICS_DT
    transient: float = 1.0
    violation_tol: float = 1e-4
    records: List[SimRecord] = field(default_factory=list)
    diverged: bool = False

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: SimRecord) -> None:
        if self.records and record.t <= self.records[-1].t:
            raise ValueError(f"timestamps must increase, got {record.t} after {self.records[-1].t}")
        self.records.append(record)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def allocation_records(self) -> List[SimRecord]:
        return [r for r in self.records if r.allocation_tick]


class ActuatorBank:
    """Gimbal joints and propellers of all generators.

    Gimbal angles follow the module torques through the inverse joint-torque
    map; propeller thrusts follow their commands through a first-order lag.
    """

    def __init__(self, config: PlatformConfig, gains: GimbalPidGains, thrust_time_constant: float):
        self.config = config
        self.mixer = QuadMixer.from_config(config)
        self.pid = GimbalPid(config.n_generators, gains)
        self.thrust_time_constant = thrust_time_constant
        hover = AllocationVector.hover(config)
        n = config.n_generators
        self.alpha = np.zeros(n)
        self.beta = np.zeros(n)
        self.alpha_rate = np.zeros(n)
        self.beta_rate = np.zeros(n)
        self.prop_thrusts = np.tile(hover.thrust[:, None] / 4.0, (1, 4))
        self.prop_commands = self.prop_thrusts.copy()
        self.saturated = 0

    @property
    def allocation(self) -> AllocationVector:
        return AllocationVector(self.alpha, self.beta, self.prop_thrusts.sum(axis=1))

    def low_level(self, command: AllocationVector, dt: float) -> None:
        """Gimbal PID, joint torques and mixing for the current command."""
        alpha_acc, beta_acc = self.pid.update(command.alpha - self.alpha, command.beta - self.beta, dt)
        moments = joint_torques(alpha_acc, beta_acc, self.beta, self.config.module_inertia)
        mixed = self.mixer.mix(command.thrust, moments, log_saturation=False)
        self.prop_commands = mixed.prop_thrusts
        self.saturated = int(np.count_nonzero(mixed.saturated))

    def advance(self, delta_moment: np.ndarray, dt: float) -> None:
        """Integrate propeller lag and gimbal joints over one physics step."""
        if self.thrust_time_constant > 0:
            blend = 1.0 - math.exp(-dt / self.thrust_time_constant)
            self.prop_thrusts = self.prop_thrusts + blend * (self.prop_commands - self.prop_thrusts)
        else:
            self.prop_thrusts = self.prop_commands.copy()

        moments = self.mixer.forward(self.prop_thrusts)[:, 1:] + delta_moment
        alpha_acc, beta_acc = gimbal_accelerations(moments, self.beta, self.config.module_inertia)
        self.alpha_rate = self.alpha_rate + alpha_acc * dt
        self.beta_rate = self.beta_rate + beta_acc * dt
        self.alpha, self.alpha_rate = self._limit(self.alpha + self.alpha_rate * dt, self.alpha_rate,
                                                  self.config.tilt_limits)
        self.beta, self.beta_rate = self._limit(self.beta + self.beta_rate * dt, self.beta_rate,
                                                self.config.twist_limits)

    @staticmethod
    def _limit(angle: np.ndarray, rate: np.ndarray, limits: Tuple[float, float]):
        clipped = np.clip(angle, limits[0], limits[1])
        return clipped, np.where(clipped != angle, 0.0, rate)


class ScenarioRunner:
    """Runs one scenario; not reusable across runs."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        cfg = scenario.platform
        self.params = DynamicsParams.from_config(cfg)
        self.controller = TrackingController(scenario.tracking_gains, self.params)
        self.allocator = NullspaceAllocator(cfg, scenario.weights)
        self.actuators = ActuatorBank(cfg, scenario.gimbal_gains, scenario.thrust_time_constant)
        self.rng = np.random.default_rng(scenario.seed)
        self.delay_steps = int(round(scenario.delay / PHYSICS_DT))
        self.pending: Deque[Tuple[int, AllocationVector]] = deque()
        self.allocation_count = 0
        self.low_level_count = 0

        start = scenario.trajectory.sample(0.0)
        self.state = PlatformState.at_rest(cfg, start.position, start.attitude)
        self.command = AllocationVector.hover(cfg)
        self.published = self.command
        self.log = SimLog(scenario.scenario_id, scenario.mode.value, cfg.n_generators, scenario.o_min,
                          PHYSICS_DT, scenario.transient, scenario.violation_tol)

    def _measure(self, state: PlatformState) -> PlatformState:
        s = self.scenario
        position, attitude = state.position, state.attitude
        if s.noise_position > 0:
            position = position + self.rng.normal(0.0, s.noise_position, 3)
        if s.noise_attitude > 0:
            attitude = attitude + self.rng.normal(0.0, s.noise_attitude, 3)
        return PlatformState(position, attitude, state.velocity, state.angular_velocity, state.actuators)

    def _allocate(self, t: float):
        ref = self.scenario.trajectory.sample(t)
        u_d = self.controller.update(ref, self._measure(self.state), PHYSICS_DT * HIGH_LEVEL_DIVIDER)
        if self.scenario.mode is AllocatorMode.CONVENTIONAL:
            result = self.allocator.allocate_conventional(u_d, self.command)
        else:
            result = self.allocator.allocate(u_d, self.command)
        self.command = result.x
        self.allocation_count += 1
        return ref, u_d, result

    def _diverged(self, message: str) -> IntegrationDiverged:
        self.log.diverged = True
        logger.warning(f"Scenario {self.scenario.scenario_id} ({self.scenario.mode.value}) diverged: {message}")
        return IntegrationDiverged(message, log=self.log)

    def run(self) -> SimLog:
        s = self.scenario
        cfg = s.platform
        steps = int(round(s.duration / PHYSICS_DT))
        ref = u_d = result = None
        logger.info(f"Running {s.scenario_id} ({s.mode.value}, {cfg.n_generators} generators, {s.duration:g} s)")

        for k in range(steps):
            t = k * PHYSICS_DT
            allocation_tick = k % HIGH_LEVEL_DIVIDER == 0
            try:
                if allocation_tick:
                    ref, u_d, result = self._allocate(t)
                    self.pending.append((k + self.delay_steps, result.x))
            except AttitudeSingular as exc:
                raise self._diverged(str(exc)) from exc

            while self.pending and self.pending[0][0] <= k:
                self.published = self.pending.popleft()[1]
            if k % LOW_LEVEL_DIVIDER == 0:
                self.actuators.low_level(self.published, PHYSICS_DT * LOW_LEVEL_DIVIDER)
                self.low_level_count += 1

            actual = self.actuators.allocation
            if s.downwash_enabled:
                delta_t = thrust_decrements(cfg, s.downwash, actual, self.actuators.prop_thrusts)
            else:
                delta_t = np.zeros_like(self.actuators.prop_thrusts)
            ext_u, delta_moment = disturbance_wrench(cfg, delta_t, self.state.attitude, actual)
            self.state = self.state.with_actuators(actual)

            self.log.append(self._record(t, ref, u_d, result, ext_u, self.actuators.prop_thrusts + delta_t,
                                         allocation_tick))

            try:
                self.state = step(self.state, actuation_wrench(cfg, actual), ext_u, PHYSICS_DT, self.params)
            except (IntegrationDiverged, AttitudeSingular) as exc:
                raise self._diverged(str(exc)) from exc
            self.actuators.advance(delta_moment, PHYSICS_DT)

            error = float(np.linalg.norm(self.state.position - s.trajectory.position(t + PHYSICS_DT)))
            if error > s.divergence_position:
                raise self._diverged(f"position error {error:.3f} m at t = {t + PHYSICS_DT:.3f} s")

        logger.info(f"Finished {s.scenario_id} ({s.mode.value}): {len(self.log)} records, "
                    f"{self.allocation_count} allocations")
        return self.log

    def _record(self, t: float, ref, u_d: np.ndarray, result: AllocationResult, ext_u: Wrench,
                prop_thrusts: np.ndarray, allocation_tick: bool) -> SimRecord:
        state = self.state
        return SimRecord(
            t=t,
            position=state.position,
            attitude=state.attitude,
            velocity=state.velocity,
            angular_velocity=state.angular_velocity,
            ref_position=self.scenario.trajectory.position(t),
            ref_attitude=ref.attitude,
            u_d=np.asarray(u_d),
            x_cmd=result.x.as_array(),
            x_actual=state.actuators.as_array(),
            forces=result.forces,
            slack=result.slack,
            efficiency=result.efficiency,
            o_values=result.o_values,
            o_bound=result.o_bound,
            ext_u=ext_u.as_array(),
            prop_thrusts=np.array(prop_thrusts).reshape(-1),
            qp_status=result.qp_status,
            qp_iterations=result.qp_iterations,
            allocation_tick=allocation_tick,
            saturated=self.actuators.saturated,
        )


def run(scenario: Scenario) -> SimLog:
    return ScenarioRunner(scenario).run()


def _attitude_error(attitude: np.ndarray, ref_attitude: np.ndarray) -> float:
    """Geodesic angle between the actual and reference rotations."""
    relative = rotation_body_to_world(ref_attitude).T @ rotation_body_to_world(attitude)
    return math.acos(max(-1.0, min(1.0, 0.5 * (np.trace(relative) - 1.0))))


def metrics(log: SimLog) -> Dict[str, object]:
    """Summary scalars of a run; allocation-derived values use allocation ticks only."""
    if not log.records:
        raise EmptyLog(f"log of {log.scenario_id} has no records")
    position = log.column("position")
    ref_position = log.column("ref_position")
    position_error = np.linalg.norm(position - ref_position, axis=1)
    attitude_error = np.array([_attitude_error(r.attitude, r.ref_attitude) for r in log.records])
    z_error = ref_position[:, 2] - position[:, 2]

    ticks = log.allocation_records()
    efficiency = np.array([r.efficiency for r in ticks])
    violations = sum(
        1 for r in ticks
        if r.t >= log.transient and count_violations(r.o_values, r.o_bound, log.violation_tol) > 0
    )
    impulse = float(np.sum(log.column("prop_thrusts")) * log.dt)

    return {
        "scenario_id": log.scenario_id,
        "mode": log.mode,
        "n_generators": log.n_generators,
        "o_min_m": log.o_min,
        "end_time_s": float(log.records[-1].t),
        "diverged": log.diverged,
        "rms_position_error_m": float(np.sqrt(np.mean(position_error ** 2))),
        "max_position_error_m": float(np.max(position_error)),
        "rms_attitude_error_rad": float(np.sqrt(np.mean(attitude_error ** 2))),
        "min_efficiency": float(np.min(efficiency)) if efficiency.size else math.nan,
        "mean_efficiency": float(np.mean(efficiency)) if efficiency.size else math.nan,
        "max_z_drop_m": float(max(np.max(z_error), 0.0)),
        "max_z_error_m": float(np.max(np.abs(z_error))),
        "violation_count": violations,
        "relaxed_ticks": sum(1 for r in ticks if r.qp_status == "Relaxed"),
        "total_impulse_ns": impulse,
    }
