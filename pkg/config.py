"""Configuration: process settings from the environment, platform and scenario files.

Platform and scenario files use the KEY=value grammar of ``.env`` files.
Keys carry their unit; vectors are comma separated and lists of vectors
';' separated. Every problem is reported as ``<path>:<line>: <reason>``.
"""
import logging
import math
import os
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Tuple, TypeVar, Union

from dotenv import load_dotenv
from dotenv.parser import parse_stream

from allocation import AllocatorWeights
from control import GimbalPidGains, TrackingGains
from core_types import PlatformConfig
from downwash import AIR_DENSITY, DownwashModel, module_hover_thrust
from exceptions import ConfigError
from sim import AllocatorMode, Scenario
from trajectory import ReferenceTrajectory, Waypoint
from utils import parse_bool, parse_float_list, parse_vector_list

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)

T = TypeVar('T')
PathLike = Union[str, Path]


class Config:
    """Process-wide settings with sensible defaults."""

    @property
    def OUTPUT_DIR(self) -> str:
        """Default output directory of run/compare/field/sweep."""
        return os.getenv('DOWNWASH_OUTPUT_DIR', 'runs')

    @property
    def LOG_LEVEL(self) -> str:
        return os.getenv('DOWNWASH_LOG_LEVEL', 'INFO')


# Create a global config instance
config = Config()


PLATFORM_KEYS = {
    'n_generators', 'frame_mass_kg', 'module_mass_kg', 'frame_inertia_kgcm2', 'module_inertia_kgcm2',
    'arm_length_m', 'mount_angle_offset_deg', 'mount_positions_m', 'prop_offset_m', 'max_prop_thrust_n',
    'prop_thrust_const_ns2', 'prop_drag_const_nms2', 'com_offset_m', 'tilt_limits_rad', 'twist_limits_rad',
    'thrust_limits_n', 'rate_limit_angle_rad', 'rate_limit_thrust_n',
    'downwash_k_visc', 'downwash_z0_m', 'downwash_r0_m', 'downwash_v0_mps', 'downwash_rm0_m', 'downwash_c1',
    'downwash_c2', 'downwash_bv_spm', 'downwash_air_density_kgm3', 'downwash_zfe_length_r0',
}

SCENARIO_KEYS = {
    'scenario_id', 'platform', 'mode', 'o_min_m', 'gamma', 'q1', 'q2', 'q3', 'duration_s', 'seed',
    'downwash_enabled', 'delay_s', 'noise_position_m', 'noise_attitude_rad', 'thrust_time_constant_s',
    'position_kp', 'position_kd', 'position_ki', 'position_integral_limit_m', 'attitude_kp', 'attitude_kd',
    'tracking_design', 'lqr_q_position', 'lqr_q_velocity', 'lqr_q_attitude', 'lqr_q_rate', 'lqr_r',
    'gimbal_kp', 'gimbal_ki', 'gimbal_kd', 'gimbal_integral_limit', 'gimbal_derivative_tau_s',
    'divergence_position_m', 'transient_s', 'violation_tol_m2',
}

WAYPOINT_KEY = re.compile(r'^waypoint_(\d+)$')

_REQUIRED = object()


class KeyValueFile:
    """Bindings of one KEY=value file with their line numbers."""

    def __init__(self, path: PathLike, allowed: Iterable[str], pattern: Optional[re.Pattern] = None):
        self.path = Path(path)
        if not self.path.is_file():
            raise ConfigError(f"file not found: {self.path}")
        self.entries: Dict[str, Tuple[str, int]] = {}
        allowed = set(allowed)

        with open(self.path, encoding='utf-8') as handle:
            for binding in parse_stream(handle):
                line = binding.original.line
                if binding.error:
                    raise ConfigError(f"malformed line {binding.original.string.strip()!r}", self.path, line)
                if binding.key is None:
                    continue
                key = binding.key
                if key not in allowed and not (pattern and pattern.match(key)):
                    raise ConfigError(f"unknown key {key!r}", self.path, line)
                if key in self.entries:
                    raise ConfigError(
                        f"duplicate key {key!r} (first set on line {self.entries[key][1]})", self.path, line
                    )
                if binding.value is None or not binding.value.strip():
                    raise ConfigError(f"key {key!r} has no value", self.path, line)
                self.entries[key] = (binding.value.strip(), line)

    def line(self, key: str) -> Optional[int]:
        return self.entries[key][1] if key in self.entries else None

    def get(self, key: str, convert: Callable[[str], T], default=_REQUIRED) -> T:
        if key not in self.entries:
            if default is _REQUIRED:
                raise ConfigError(f"missing required key {key!r}", self.path)
            return default
        text, line = self.entries[key]
        try:
            return convert(text)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid value for {key!r}: {e}", self.path, line) from e

    def number(self, key: str, default=_REQUIRED) -> float:
        return self.get(key, float, default)

    def vector(self, key: str, size: int, default=_REQUIRED) -> Tuple[float, ...]:
        return self.get(key, lambda text: tuple(parse_float_list(text, size)), default)

    def matching(self, pattern: re.Pattern) -> List[Tuple[re.Match, str, int]]:
        found = []
        for key, (text, line) in self.entries.items():
            m = pattern.match(key)
            if m:
                found.append((m, text, line))
        return found


def _integer(text: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"{text!r} is not an integer")
    return int(value)


def _weight(text: str):
    values = parse_float_list(text)
    return values[0] if len(values) == 1 else values


def load_platform(path: PathLike) -> Tuple[PlatformConfig, DownwashModel]:
    """Platform geometry and the wake model of its modules."""
    f = KeyValueFile(path, PLATFORM_KEYS)
    n = f.get('n_generators', _integer)

    mounts = None
    if 'mount_positions_m' in f.entries:
        mounts = f.get('mount_positions_m', lambda text: parse_vector_list(text, 3))
        if len(mounts) != n:
            raise ConfigError(f"expected {n} mount positions, got {len(mounts)}", f.path, f.line('mount_positions_m'))

    try:
        platform = PlatformConfig(
            n_generators=n,
            frame_mass=f.number('frame_mass_kg'),
            module_mass=f.number('module_mass_kg'),
            frame_inertia_diag=f.vector('frame_inertia_kgcm2', 3),
            module_inertia_diag=f.vector('module_inertia_kgcm2', 3),
            arm_length=f.number('arm_length_m'),
            prop_offset=f.number('prop_offset_m'),
            max_prop_thrust=f.number('max_prop_thrust_n'),
            prop_thrust_const=f.number('prop_thrust_const_ns2'),
            prop_drag_const=f.number('prop_drag_const_nms2'),
            mount_positions=mounts,
            mount_angle_offset=math.radians(f.number('mount_angle_offset_deg', 0.0)),
            com_offset=f.vector('com_offset_m', 3, (0.0, 0.0, 0.0)),
            tilt_limits=f.vector('tilt_limits_rad', 2, (-math.pi, math.pi)),
            twist_limits=f.vector('twist_limits_rad', 2, (-math.pi / 2, math.pi / 2)),
            thrust_limits=f.vector('thrust_limits_n', 2, None),
            rate_limits=(f.number('rate_limit_angle_rad', 0.1), f.number('rate_limit_thrust_n', 0.05)),
        )
    except ConfigError as e:
        if e.path is not None:
            raise
        raise ConfigError(str(e), f.path) from e

    r0 = f.number('downwash_r0_m', DownwashModel.r0)
    kwargs = dict(
        k_visc=f.number('downwash_k_visc', DownwashModel.k_visc),
        z0=f.number('downwash_z0_m', DownwashModel.z0),
        rm0=f.number('downwash_rm0_m', 0.7 * r0),
        c1=f.number('downwash_c1', DownwashModel.c1),
        c2=f.number('downwash_c2', DownwashModel.c2),
        b_v=f.number('downwash_bv_spm', DownwashModel.b_v),
        zfe_length_r0=f.number('downwash_zfe_length_r0', DownwashModel.zfe_length_r0),
    )
    try:
        if 'downwash_v0_mps' in f.entries:
            model = DownwashModel(r0=r0, v0=f.number('downwash_v0_mps'), **kwargs)
        else:
            density = f.number('downwash_air_density_kgm3', AIR_DENSITY)
            model = DownwashModel.from_momentum_theory(module_hover_thrust(platform), r0, density, **kwargs)
    except ConfigError as e:
        raise ConfigError(str(e), f.path) from e

    logger.debug(f"Loaded {n}-generator platform from {f.path}")
    return platform, model


def _tracking_gains(f: KeyValueFile) -> TrackingGains:
    design = f.get('tracking_design', str, 'pd')
    ki = f.number('position_ki', 0.0)
    limit = f.number('position_integral_limit_m', 0.5)
    try:
        if design == 'lqr':
            r = f.number('lqr_r', 1.0)
            position = (f.number('lqr_q_position', 16.0), f.number('lqr_q_velocity', 8.0), r)
            attitude = (f.number('lqr_q_attitude', 1e4), f.number('lqr_q_rate', 200.0), r)
            gains = TrackingGains.from_lqr(position, attitude, ki)
            return TrackingGains(gains.position_kp, gains.position_kd, gains.attitude_kp, gains.attitude_kd,
                                 ki, limit)
        if design != 'pd':
            raise ConfigError(f"tracking_design must be 'pd' or 'lqr', got {design!r}", f.path,
                              f.line('tracking_design'))
        return TrackingGains(
            position_kp=f.number('position_kp', 4.0),
            position_kd=f.number('position_kd', 4.0),
            attitude_kp=f.number('attitude_kp', 100.0),
            attitude_kd=f.number('attitude_kd', 20.0),
            position_ki=ki,
            integral_limit=limit,
        )
    except ValueError as e:
        raise ConfigError(str(e), f.path) from e


def _gimbal_gains(f: KeyValueFile) -> GimbalPidGains:
    defaults = GimbalPidGains()
    kp = f.number('gimbal_kp', defaults.kp_alpha)
    ki = f.number('gimbal_ki', defaults.ki_alpha)
    kd = f.number('gimbal_kd', defaults.kd_alpha)
    try:
        return GimbalPidGains(kp, ki, kd, kp, ki, kd,
                              f.number('gimbal_integral_limit', defaults.integral_limit),
                              f.number('gimbal_derivative_tau_s', defaults.derivative_tau))
    except ValueError as e:
        raise ConfigError(str(e), f.path) from e


def _waypoints(f: KeyValueFile) -> List[Waypoint]:
    found = sorted(f.matching(WAYPOINT_KEY), key=lambda item: int(item[0].group(1)))
    if not found:
        raise ConfigError("scenario needs at least one waypoint_<k> entry", f.path)
    waypoints = []
    for _, text, line in found:
        try:
            waypoints.append(Waypoint.from_values(parse_float_list(text, 7)))
        except ValueError as e:
            raise ConfigError(f"invalid waypoint: {e}", f.path, line) from e
    return waypoints


def load_scenario(path: PathLike, platform_path: Optional[PathLike] = None) -> Scenario:
    """Scenario file with its platform; ``platform_path`` overrides the file's ``platform`` entry."""
    f = KeyValueFile(path, SCENARIO_KEYS, WAYPOINT_KEY)

    if platform_path is None:
        relative = f.get('platform', str)
        platform_path = f.path.parent / relative
        if not Path(platform_path).is_file():
            raise ConfigError(f"platform file not found: {platform_path}", f.path, f.line('platform'))
    platform, model = load_platform(platform_path)

    mode_text = f.get('mode', str, AllocatorMode.DOWNWASH_AWARE.value)
    try:
        mode = AllocatorMode(mode_text)
    except ValueError as e:
        raise ConfigError(f"mode must be 'conventional' or 'downwash-aware', got {mode_text!r}",
                          f.path, f.line('mode')) from e

    try:
        weights = AllocatorWeights(
            q1=f.get('q1', _weight, 1.0),
            q2=f.get('q2', _weight, 1e4),
            q3=f.get('q3', _weight, 1e-2),
            gamma=f.number('gamma', 0.1),
            o_min=f.number('o_min_m', 0.0),
        )
        weights.matrices(platform.n_generators)
    except ValueError as e:
        raise ConfigError(str(e), f.path) from e

    trajectory = ReferenceTrajectory(_waypoints(f))
    try:
        return Scenario(
            scenario_id=f.get('scenario_id', str, f.path.stem),
            platform=platform,
            downwash=model,
            trajectory=trajectory,
            mode=mode,
            weights=weights,
            duration=f.number('duration_s'),
            seed=f.get('seed', _integer, 0),
            downwash_enabled=f.get('downwash_enabled', parse_bool, True),
            delay=f.number('delay_s', 0.02),
            noise_position=f.number('noise_position_m', 0.0),
            noise_attitude=f.number('noise_attitude_rad', 0.0),
            thrust_time_constant=f.number('thrust_time_constant_s', 0.01),
            tracking_gains=_tracking_gains(f),
            gimbal_gains=_gimbal_gains(f),
            divergence_position=f.number('divergence_position_m', 2.0),
            transient=f.number('transient_s', 1.0),
            violation_tol=f.number('violation_tol_m2', 1e-4),
        )
    except ConfigError as e:
        if e.path is not None:
            raise
        raise ConfigError(str(e), f.path) from e


@dataclass(frozen=True)
class RunConfig:
    """Everything one CLI invocation needs to run a scenario."""

    scenario_path: Path
    output_dir: Path
    platform_path: Optional[Path] = None
    mode: Optional[AllocatorMode] = None
    o_min: Optional[float] = None
    gamma: Optional[float] = None
    verbosity: int = 0
    timestamp: bool = True

    def __post_init__(self) -> None:
        for name in ('scenario_path', 'platform_path'):
            value = getattr(self, name)
            if value is not None and not Path(value).is_file():
                raise ConfigError(f"file not found: {value}")
        if self.o_min is not None and self.o_min < 0:
            raise ConfigError(f"o_min must be non-negative, got {self.o_min}")
        if self.gamma is not None and self.gamma < 0:
            raise ConfigError(f"gamma must be non-negative, got {self.gamma}")

    @property
    def run_name(self) -> str:
        stem = Path(self.scenario_path).name.split('.')[0]
        return f"{stem}-{self.mode.value}" if self.mode is not None else stem

    def load(self) -> Scenario:
        """Load the scenario and apply the command-line overrides."""
        scenario = load_scenario(self.scenario_path, self.platform_path)
        weights = scenario.weights
        if self.o_min is not None or self.gamma is not None:
            weights = replace(
                weights,
                o_min=weights.o_min if self.o_min is None else self.o_min,
                gamma=weights.gamma if self.gamma is None else self.gamma,
            )
        changes = {'weights': weights}
        if self.mode is not None:
            changes['mode'] = self.mode
        return replace(scenario, **changes)


def validate_file(path: PathLike) -> str:
    """
    Fully load a platform or scenario file.

    Returns:
        'platform' or 'scenario', decided by the presence of ``n_generators``
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    with open(path, encoding='utf-8') as handle:
        keys = {binding.key for binding in parse_stream(handle) if binding.key}
    if 'n_generators' in keys:
        load_platform(path)
        return 'platform'
    load_scenario(path)
    return 'scenario'
