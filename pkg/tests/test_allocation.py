import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from allocation import (
    AllocatorWeights,
    NullspaceAllocator,
    allocate,
    build_w,
    efficiency_sweep,
    forces_from_x,
    inverse_kinematics,
    jacobian_f,
    thrust_efficiency,
)
from core_types import GRAVITY, AllocationVector, Wrench
from downwash import constraint_bound, constraint_vector, count_violations
from exceptions import DegenerateGeometry, IkSingular, ZeroThrust


def hover_wrench(config):
    return np.array([0.0, 0.0, config.total_mass * GRAVITY, 0.0, 0.0, 0.0])


def tilted_hover(config):
    """Four generators tilted 30 deg outward; internal forces cancel, weight is carried."""
    t = config.total_mass * GRAVITY / (4 * math.cos(math.radians(30)))
    tilt = math.radians(30)
    return AllocationVector([0.0, tilt, 0.0, -tilt], [tilt, 0.0, -tilt, 0.0], np.full(4, t))


def test_allocation_matrix_properties(six):
    mats = build_w(six)
    assert mats.W.shape == (6, 18)
    assert mats.nullspace.shape == (18, 12)
    np.testing.assert_allclose(mats.W @ mats.W_pinv, np.eye(6), atol=1e-12)
    np.testing.assert_allclose(mats.W @ mats.nullspace, 0.0, atol=1e-12)
    np.testing.assert_allclose(mats.nullspace.T @ mats.nullspace, np.eye(12), atol=1e-12)
    assert mats.n_generators == 6


def test_collinear_mounts_are_degenerate(four):
    line = np.array([[-0.3, 0, 0], [-0.1, 0, 0], [0.1, 0, 0], [0.3, 0, 0]])
    with pytest.raises(DegenerateGeometry):
        build_w(four.with_overrides(mount_positions=line))


def test_force_jacobian_finite_difference(six, rng):
    h = 1e-6
    for _ in range(100):
        x = AllocationVector(rng.uniform(-2, 2, 6), rng.uniform(-1, 1, 6), rng.uniform(0.1, 0.6, 6))
        base = x.as_array()
        numeric = np.zeros((18, 18))
        for c in range(18):
            up, down = base.copy(), base.copy()
            up[c] += h
            down[c] -= h
            numeric[:, c] = (forces_from_x(AllocationVector.from_array(up))
                             - forces_from_x(AllocationVector.from_array(down))) / (2 * h)
        scale = np.maximum(np.abs(numeric), 1e-2)
        assert np.max(np.abs(jacobian_f(x) - numeric) / scale) <= 1e-5


def test_inverse_kinematics_roundtrip(rng):
    x = AllocationVector(rng.uniform(-3, 3, 8), rng.uniform(-1.4, 1.4, 8), rng.uniform(0.05, 1.0, 8))
    recovered, floored = inverse_kinematics(forces_from_x(x))
    np.testing.assert_allclose(recovered.as_array(), x.as_array(), atol=1e-10)
    assert not floored.any()


def test_inverse_kinematics_unwraps_alpha():
    previous = AllocationVector([3.0], [0.0], [1.0])
    target = AllocationVector([-3.0], [0.0], [1.0])
    recovered, _ = inverse_kinematics(forces_from_x(target), previous)
    assert recovered.alpha[0] == pytest.approx(-3.0 + 2 * math.pi)


def test_inverse_kinematics_floor():
    forces = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.5])
    with pytest.raises(IkSingular):
        inverse_kinematics(forces)
    previous = AllocationVector([0.2, 0.0], [0.1, 0.0], [0.3, 0.5])
    recovered, floored = inverse_kinematics(forces, previous)
    assert floored.tolist() == [True, False]
    assert recovered.thrust[0] == pytest.approx(1e-3)
    assert recovered.alpha[0] == pytest.approx(0.2)
    assert recovered.beta[0] == pytest.approx(0.1)


def test_thrust_efficiency(four):
    assert thrust_efficiency(AllocationVector.hover(four)) == pytest.approx(1.0)
    assert thrust_efficiency(tilted_hover(four)) == pytest.approx(math.cos(math.radians(30)))
    with pytest.raises(ZeroThrust):
        thrust_efficiency(AllocationVector(np.zeros(4), np.zeros(4), np.zeros(4)))


@pytest.mark.parametrize("conventional", [False, True])
def test_hover_allocation(four, conventional):
    allocator = NullspaceAllocator(four, AllocatorWeights(o_min=0.12))
    x_prev = AllocationVector.hover(four)
    run = allocator.allocate_conventional if conventional else allocator.allocate
    result = run(hover_wrench(four), x_prev)
    np.testing.assert_allclose(result.x.thrust, 0.220 * 9.81 / 4, atol=1e-3)
    np.testing.assert_allclose(result.x.alpha, 0.0, atol=1e-6)
    np.testing.assert_allclose(result.x.beta, 0.0, atol=1e-6)
    assert result.efficiency >= 0.999
    assert result.qp_status == "Optimal"
    assert result.violations == 0


def test_commanded_wrench_is_reproduced(six, rng):
    allocator = NullspaceAllocator(six, AllocatorWeights(o_min=0.07))
    mats = allocator.matrices
    x_prev = AllocationVector.hover(six)
    for _ in range(10):
        u = hover_wrench(six) + np.concatenate((rng.normal(0, 0.2, 3), rng.normal(0, 0.01, 3)))
        result = allocator.allocate(u, x_prev)
        np.testing.assert_allclose(mats.W @ result.forces, u, atol=1e-9)
        assert result.residual <= 1e-9
        x_prev = result.x


def test_result_respects_box_and_rate_limits(four):
    allocator = NullspaceAllocator(four)
    x_prev = AllocationVector.hover(four)
    u = np.array([0.8, -0.5, 3.0, 0.02, -0.02, 0.01])
    result = allocator.allocate(u, x_prev)
    x, prev = result.x.as_array(), x_prev.as_array()
    assert np.all(x >= four.x_lower - 1e-12) and np.all(x <= four.x_upper + 1e-12)
    assert np.all(np.abs(x - prev) <= four.dx_upper + 1e-12)


def test_thrust_penalty_lowers_total_thrust(four):
    u = hover_wrench(four)
    x_prev = tilted_hover(four)
    totals = []
    for gamma in (0.0, 0.01, 0.05):
        result = NullspaceAllocator(four, AllocatorWeights(gamma=gamma)).allocate(u, x_prev)
        totals.append(float(np.sum(result.x.thrust)))
    assert totals[0] == pytest.approx(float(np.sum(x_prev.thrust)), abs=1e-6)
    assert totals[1] <= totals[0] + 1e-9
    assert totals[2] <= totals[1] + 1e-9
    assert totals[0] - totals[2] > 1e-4


def test_conventional_matches_aware_without_downwash_terms(six, rng):
    weights = AllocatorWeights(gamma=0.1, o_min=0.07)
    conventional = NullspaceAllocator(six, weights)
    plain = NullspaceAllocator(six, AllocatorWeights(gamma=0.0, o_min=0.0))
    x_a = x_b = AllocationVector.hover(six)
    for _ in range(5):
        u = hover_wrench(six) + np.concatenate((rng.normal(0, 0.3, 3), rng.normal(0, 0.02, 3)))
        a = conventional.allocate_conventional(u, x_a)
        b = plain.allocate(u, x_b)
        np.testing.assert_array_equal(a.x.as_array(), b.x.as_array())
        np.testing.assert_array_equal(a.forces, b.forces)
        x_a, x_b = a.x, b.x


def test_module_level_allocate(four):
    weights = AllocatorWeights()
    mats = build_w(four)
    result = allocate(Wrench.from_array(hover_wrench(four)), AllocationVector.hover(four), weights, mats, four)
    assert result.efficiency == pytest.approx(1.0, abs=1e-3)


def test_non_finite_wrench_rejected(four):
    with pytest.raises(ValueError):
        NullspaceAllocator(four).allocate(np.array([0, 0, math.inf, 0, 0, 0]), AllocationVector.hover(four))


def test_weights_validation():
    with pytest.raises(ValueError):
        AllocatorWeights(gamma=-1.0)
    with pytest.raises(ValueError):
        AllocatorWeights(o_min=-0.1)
    with pytest.raises(ValueError):
        AllocatorWeights(q1=[1.0, 2.0]).matrices(4)
    q1, q2, q3 = AllocatorWeights(q1=np.arange(1.0, 13.0)).matrices(4)
    assert q1.shape == (12, 12) and q1[11, 11] == 12.0
    assert q3.shape == (6, 6)


def test_sweep_starts_at_pseudoinverse(four):
    samples = efficiency_sweep(four, hover_wrench(four), 0.12, samples=50, scale=0.5, seed=3)
    assert 0 < len(samples) <= 50
    first = samples[0]
    assert first.nullspace_norm == 0.0
    assert first.efficiency == pytest.approx(1.0)
    assert first.downwash_free
    assert all(0.0 < s.efficiency <= 1.0 + 1e-12 for s in samples)
    assert efficiency_sweep(four, hover_wrench(four), 0.12, samples=50, scale=0.5, seed=3) == samples


@pytest.mark.parametrize("platform, o_min", [("four", 0.12), ("five", 0.07), ("six", 0.07)])
def test_sweep_under_a_quarter_roll(request, platform, o_min):
    config = request.getfixturevalue(platform)
    wrench = body_hover_wrench(config, [math.pi / 2, 0.0, 0.0])
    share = config.total_mass * GRAVITY / config.n_generators
    samples = efficiency_sweep(config, wrench, o_min, samples=500, scale=share, seed=11)
    first = samples[0]
    # the pseudoinverse points every wake along the frame plane
    assert first.efficiency == pytest.approx(1.0)
    assert not first.downwash_free
    free = [s.efficiency for s in samples if s.downwash_free]
    assert free and max(free) < 1.0


def body_hover_wrench(config, rotvec):
    weight = np.array([0.0, 0.0, config.total_mass * GRAVITY])
    return np.concatenate((Rotation.from_rotvec(rotvec).inv().apply(weight), np.zeros(3)))


@pytest.mark.slow
def test_roll_sequence_keeps_wakes_clear(six):
    weights = AllocatorWeights(o_min=0.07)
    allocator = NullspaceAllocator(six, weights)
    aware = conventional = AllocationVector.hover(six)
    for angle in np.linspace(0.0, 90.0, 91):
        u = body_hover_wrench(six, [math.radians(angle), 0.0, 0.0])
        for _ in range(3):
            aware_result = allocator.allocate(u, aware)
            conventional_result = allocator.allocate_conventional(u, conventional)
            aware, conventional = aware_result.x, conventional_result.x
    for _ in range(30):
        aware_result = allocator.allocate(u, aware)
        conventional_result = allocator.allocate_conventional(u, conventional)
        aware, conventional = aware_result.x, conventional_result.x

    assert count_violations(aware_result.o_values, aware_result.o_bound, tol=1e-4) == 0
    assert conventional_result.violations > 0
    assert aware_result.residual <= 1e-9


def test_modules_are_pushed_out_of_a_lined_up_wake(four):
    """Start just off the event-one alignment: pairs 3->2 and 4->1 share a wake axis."""
    tilt = np.array([-1.0, 1.0, 0.0]) / math.sqrt(2.0) * (math.pi / 2)
    u = body_hover_wrench(four, tilt)
    share = four.total_mass * GRAVITY / 4
    x = AllocationVector(math.pi / 2 + np.array([0.02, -0.01, 0.015, -0.02]),
                         -math.pi / 4 + np.array([0.01, 0.02, -0.015, 0.0]), np.full(4, share))
    allocator = NullspaceAllocator(four, AllocatorWeights(o_min=0.12))
    start = count_violations(constraint_vector(four, x), constraint_bound(four, x, 0.12))
    assert start == 2

    cleared_at = None
    for tick in range(60):
        result = allocator.allocate(u, x)
        assert np.all(result.row_slack >= 0.0)
        assert result.row_slack.size > 0
        assert result.residual <= 1e-9
        x = result.x
        if count_violations(result.o_values, result.o_bound, tol=1e-4) == 0:
            cleared_at = tick
            break
    assert cleared_at is not None

    # once clear, the rows hold without slack
    for _ in range(20):
        result = allocator.allocate(u, result.x)
    assert not result.relaxed
    assert count_violations(result.o_values, result.o_bound, tol=1e-4) == 0


def test_wide_margin_keeps_rows_soft(four):
    allocator = NullspaceAllocator(four, AllocatorWeights(o_min=0.25))
    x = AllocationVector(np.full(4, math.pi / 2 + 0.01), np.full(4, -math.pi / 4), np.full(4, 0.55))
    tilt = np.array([-1.0, 1.0, 0.0]) / math.sqrt(2.0) * (math.pi / 2)
    result = allocator.allocate(body_hover_wrench(four, tilt), x)
    assert result.row_slack.size > 0
    assert np.all(result.row_slack >= 0.0)
    assert result.residual <= 1e-9


@pytest.mark.slow
@pytest.mark.parametrize("platform, o_min", [("four", 0.12), ("five", 0.07), ("six", 0.07)])
def test_wrench_reconstruction_over_many_calls(request, platform, o_min, rng):
    config = request.getfixturevalue(platform)
    allocator = NullspaceAllocator(config, AllocatorWeights(o_min=o_min))
    mats = allocator.matrices
    x = AllocationVector.hover(config)
    worst = 0.0
    for k in range(3400):
        if k % 100 == 0:
            rotvec = rng.normal(0, 0.6, 3)
        u = body_hover_wrench(config, rotvec) + np.concatenate((rng.normal(0, 0.2, 3), rng.normal(0, 0.01, 3)))
        result = allocator.allocate(u, x)
        worst = max(worst, float(np.linalg.norm(mats.W @ result.forces - u)) / max(1.0, float(np.linalg.norm(u))))
        x = result.x
    assert worst <= 1e-9


@pytest.mark.slow
def test_plain_weights_match_conventional_on_many_sequences(six, rng):
    weights = AllocatorWeights(gamma=0.1, o_min=0.07)
    conventional = NullspaceAllocator(six, weights)
    plain = NullspaceAllocator(six, AllocatorWeights(gamma=0.0, o_min=0.0))
    for _ in range(1000):
        x_a = x_b = AllocationVector.hover(six)
        for _ in range(3):
            u = hover_wrench(six) + np.concatenate((rng.normal(0, 0.3, 3), rng.normal(0, 0.02, 3)))
            a = conventional.allocate_conventional(u, x_a)
            b = plain.allocate(u, x_b)
            np.testing.assert_array_equal(a.x.as_array(), b.x.as_array())
            np.testing.assert_array_equal(a.forces, b.forces)
            x_a, x_b = a.x, b.x
