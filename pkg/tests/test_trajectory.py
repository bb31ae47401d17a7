import math

import numpy as np
import pytest

from exceptions import ConfigError
from trajectory import ReferenceTrajectory, Waypoint


@pytest.fixture
def roll_ramp():
    return ReferenceTrajectory([
        Waypoint(1.0, (0.0, 0.0, 1.0)),
        Waypoint(5.0, (0.0, 0.0, 1.0), (90.0, 0.0, 0.0)),
    ])


def test_hover_holds_everywhere():
    trajectory = ReferenceTrajectory.hover((1.0, 2.0, 3.0))
    for t in (0.0, 0.5, 10.0):
        sample = trajectory.sample(t)
        np.testing.assert_allclose(sample.position, [1, 2, 3])
        np.testing.assert_allclose(sample.velocity, 0.0)
        np.testing.assert_allclose(sample.attitude, 0.0, atol=1e-15)
        np.testing.assert_allclose(sample.angular_velocity, 0.0, atol=1e-12)


def test_passes_through_waypoints():
    waypoints = [
        Waypoint(0.0, (0.0, 0.0, 1.0)),
        Waypoint(2.0, (1.0, 0.0, 1.5), (0.0, 0.0, 30.0)),
        Waypoint(4.0, (1.0, 1.0, 1.0)),
    ]
    trajectory = ReferenceTrajectory(waypoints)
    for w in waypoints:
        np.testing.assert_allclose(trajectory.position(w.time), w.position, atol=1e-12)
    assert trajectory.sample(2.0).attitude[2] == pytest.approx(math.radians(30.0))
    assert trajectory.end_time == 4.0


def test_no_overshoot_between_waypoints():
    trajectory = ReferenceTrajectory([
        Waypoint(0.0, (0.0, 0.0, 1.0)),
        Waypoint(1.0, (0.0, 0.0, 2.0)),
        Waypoint(3.0, (0.0, 0.0, 2.0)),
    ])
    heights = [trajectory.position(t)[2] for t in np.linspace(0.0, 3.0, 301)]
    assert min(heights) >= 1.0 - 1e-12
    assert max(heights) <= 2.0 + 1e-12


def test_holds_outside_the_waypoint_range(roll_ramp):
    before, after = roll_ramp.sample(0.0), roll_ramp.sample(9.0)
    np.testing.assert_allclose(before.attitude, 0.0, atol=1e-15)
    assert after.attitude[0] == pytest.approx(math.pi / 2)
    np.testing.assert_allclose(before.velocity, 0.0)
    np.testing.assert_allclose(after.angular_velocity, 0.0, atol=1e-12)


def test_body_rate_of_constant_roll(roll_ramp):
    sample = roll_ramp.sample(3.0)
    np.testing.assert_allclose(sample.angular_velocity, [math.pi / 8, 0.0, 0.0], atol=1e-9)
    assert sample.attitude[0] == pytest.approx(math.pi / 4)


def test_singular_reference_pitch_rejected():
    with pytest.raises(ConfigError, match="pitch"):
        ReferenceTrajectory([Waypoint(0.0, (0, 0, 1)), Waypoint(2.0, (0, 0, 1), (0.0, 90.0, 0.0))])


def test_waypoints_must_increase():
    with pytest.raises(ConfigError):
        ReferenceTrajectory([Waypoint(1.0, (0, 0, 1)), Waypoint(1.0, (0, 0, 2))])
    with pytest.raises(ConfigError):
        ReferenceTrajectory([])


def test_waypoint_from_values():
    w = Waypoint.from_values([2.0, 1, 2, 3, 10, 20, 30])
    assert w.time == 2.0 and w.position == (1, 2, 3) and w.rotation_deg == (10, 20, 30)
    with pytest.raises(ValueError):
        Waypoint.from_values([1.0, 2.0])
