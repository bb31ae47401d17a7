import math

import numpy as np
import pytest

from core_types import (
    GRAVITY,
    AllocationVector,
    PlatformConfig,
    PlatformState,
    Wrench,
    actuator_rotation,
    euler_from_rotation,
    regular_mount_positions,
    rotation_body_to_world,
    skew,
    thrust_directions,
    vee,
)
from exceptions import ConfigError


def test_skew_matches_cross_product(rng):
    a, b = rng.normal(size=3), rng.normal(size=3)
    np.testing.assert_allclose(skew(a) @ b, np.cross(a, b))
    np.testing.assert_allclose(vee(skew(a)), a)


def test_euler_roundtrip(rng):
    for _ in range(20):
        attitude = rng.uniform([-3, -1.4, -3], [3, 1.4, 3])
        np.testing.assert_allclose(euler_from_rotation(rotation_body_to_world(attitude)), attitude, atol=1e-12)


def test_thrust_direction_is_rotated_z():
    for alpha, beta in [(0.0, 0.0), (0.3, -0.2), (math.pi / 2, -math.pi / 4)]:
        expected = actuator_rotation(alpha, beta) @ np.array([0.0, 0.0, 1.0])
        np.testing.assert_allclose(thrust_directions([alpha], [beta])[0], expected, atol=1e-15)


def test_four_platform_masses_and_inertia_units(four):
    assert four.total_mass == pytest.approx(0.220)
    np.testing.assert_allclose(np.diag(four.frame_inertia), [3.2e-4, 3.2e-4, 4.7e-4])
    np.testing.assert_allclose(four.module_inertia, [0.35e-4, 0.35e-4, 0.55e-4])


def test_four_platform_mounts_on_axes(four):
    np.testing.assert_allclose(
        four.mount_positions,
        [[0.21, 0, 0], [0, 0.21, 0], [-0.21, 0, 0], [0, -0.21, 0]],
        atol=1e-12,
    )


def test_six_platform_mount_offset(six):
    np.testing.assert_allclose(six.mount_positions[0], [0.18 * math.cos(math.pi / 6), 0.09, 0.0], atol=1e-12)
    assert np.allclose(np.linalg.norm(six.mount_positions, axis=1), 0.18)


def test_default_thrust_limits_from_prop_limit(four):
    assert four.thrust_limits == (0.02, pytest.approx(1.2))
    assert four.x_upper[-1] == pytest.approx(1.2)
    np.testing.assert_allclose(four.dx_upper, [0.1] * 8 + [0.05] * 4)


@pytest.mark.parametrize("field,value", [
    ("frame_mass", 0.0),
    ("module_mass", -1.0),
    ("arm_length", 0.0),
    ("max_prop_thrust", 0.0),
])
def test_non_positive_parameters_rejected(four, field, value):
    with pytest.raises(ConfigError, match=field):
        four.with_overrides(**{field: value})


def test_coincident_mounts_rejected(four):
    mounts = regular_mount_positions(4, 0.21)
    mounts[1] = mounts[0]
    with pytest.raises(ConfigError, match="coincide"):
        four.with_overrides(mount_positions=mounts)


def test_too_few_generators_rejected(four):
    with pytest.raises(ConfigError):
        PlatformConfig(2, 0.02, 0.05, (1, 1, 1), (1, 1, 1), 0.2, 0.05, 0.3, 1e-8, 1e-10)


def test_hover_allocation_shares_weight(four):
    x = AllocationVector.hover(four)
    np.testing.assert_allclose(x.thrust, four.total_mass * GRAVITY / 4)
    np.testing.assert_allclose(AllocationVector.from_array(x.as_array()).thrust, x.thrust)
    with pytest.raises(ValueError):
        AllocationVector.from_array(np.zeros(7))


def test_wrench_rejects_non_finite():
    with pytest.raises(ValueError):
        Wrench([0.0, math.nan, 0.0], np.zeros(3))
    total = Wrench.from_array([1, 2, 3, 4, 5, 6]) + Wrench.zero()
    np.testing.assert_allclose(total.as_array(), [1, 2, 3, 4, 5, 6])


def test_state_vector_layout(four):
    state = PlatformState.at_rest(four, position=(1, 2, 3), attitude=(0.1, 0.2, 0.3))
    vector = state.as_vector()
    np.testing.assert_allclose(vector[:6], [1, 2, 3, 0.1, 0.2, 0.3])
    assert vector.shape == (12,)
