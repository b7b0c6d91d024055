"""
Tests for sufficient statistics, local time and realized volatility
"""

import math

import numpy as np
import pytest

from threshold_ou.core.config import DEFAULT_PARAMS
from threshold_ou.core.exceptions import SideUnvisitedError
from threshold_ou.models import InitMode, ModelParams, SimSpec, Trajectory
from threshold_ou.services.simulator import simulate
from threshold_ou.services.statistics import (
    clt_scale_constant,
    discretization_error_scale,
    local_time_approx,
    local_time_scale_constant,
    pooled_volatility,
    side_volatility,
    sufficient_stats,
    volatility_estimate,
)
from threshold_ou.utils.numerics import RngStream

BASE = ModelParams(**DEFAULT_PARAMS)


def _base_path(seed: int, T: float = 100.0, N: int = 20_000) -> Trajectory:
    spec = SimSpec(params=BASE, T=T, N=N, init=InitMode.STATIONARY)
    return simulate(spec, RngStream(seed=seed))


def test_local_time_hand_example():
    traj = Trajectory(t0=0.0, dt=1.0, values=[-1.0, 0.5, -0.25, 2.0])
    assert local_time_approx(traj, 0.0) == pytest.approx(5.5, abs=1e-15)
    assert sufficient_stats(traj, 0.0).crossings == 3


def test_landing_on_threshold_is_not_a_crossing():
    traj = Trajectory(t0=0.0, dt=1.0, values=[-1.0, 0.0, 1.0])
    stats = sufficient_stats(traj, 0.0)
    assert stats.crossings == 0
    assert stats.local_time == 0.0


def test_hand_example_sums():
    traj = Trajectory(t0=0.0, dt=1.0, values=[0.0, 1.0, 3.0, 2.0])
    stats = sufficient_stats(traj, -10.0)
    assert stats.q["plus"] == [3.0, 4.0, 10.0]
    assert stats.mm["plus"] == [2.0, -1.0]
    assert stats.q["minus"] == [0.0, 0.0, 0.0]
    assert stats.count == {"plus": 3, "minus": 0}
    assert stats.det("plus") == 14.0


def test_left_endpoint_decides_the_side():
    traj = Trajectory(t0=0.0, dt=0.5, values=[0.0, -1.0, 1.0])
    stats = sufficient_stats(traj, 0.0)
    # X_0 = r counts on the plus side
    assert stats.count == {"plus": 1, "minus": 1}
    assert stats.mm["plus"] == [-1.0, 0.0]
    assert stats.mm["minus"] == [2.0, -2.0]


@pytest.mark.parametrize("seed", [1, 2, 3, 4])
def test_occupation_and_telescoping_identities(seed):
    traj = _base_path(seed)
    stats = sufficient_stats(traj, BASE.r)
    x = traj.values
    assert stats.q["plus"][0] + stats.q["minus"][0] == pytest.approx(traj.T, rel=1e-12)
    assert stats.mm["plus"][0] + stats.mm["minus"][0] == pytest.approx(x[-1] - x[0], abs=1e-12)
    total_sq = stats.sumsq["plus"] + stats.sumsq["minus"]
    expected_m1 = 0.5 * (x[-1] ** 2 - x[0] ** 2 - total_sq)
    assert stats.mm["plus"][1] + stats.mm["minus"][1] == pytest.approx(expected_m1, abs=1e-12)
    assert stats.count["plus"] + stats.count["minus"] == traj.N


@pytest.mark.parametrize("seed", [1, 2])
def test_determinants_positive_on_visited_sides(seed):
    stats = sufficient_stats(_base_path(seed), BASE.r)
    assert stats.det("plus") > 0
    assert stats.det("minus") > 0


def test_volatility_recovers_sigma():
    spec = SimSpec(params=BASE, T=100.0, N=100_000, init=InitMode.STATIONARY)
    stats = sufficient_stats(simulate(spec, RngStream(seed=21)), BASE.r)
    sigma_plus, sigma_minus = volatility_estimate(stats)
    assert sigma_plus == pytest.approx(BASE.sigma_plus, rel=0.03)
    assert sigma_minus == pytest.approx(BASE.sigma_minus, rel=0.03)


def test_unvisited_side_raises():
    traj = Trajectory(t0=0.0, dt=1.0, values=[1.0, 2.0, 3.0])
    stats = sufficient_stats(traj, 0.0)
    assert side_volatility(stats, "plus") == pytest.approx(1.0)
    with pytest.raises(SideUnvisitedError):
        side_volatility(stats, "minus")


def test_pooled_volatility_ignores_threshold():
    traj = Trajectory(t0=0.0, dt=0.5, values=[0.0, 1.0, -1.0, 0.0])
    expected = math.sqrt((1.0 + 4.0 + 1.0) / 1.5)
    for r in (-5.0, 0.0, 0.5):
        assert pooled_volatility(sufficient_stats(traj, r)) == pytest.approx(expected)


def test_scale_constants():
    params = ModelParams(r=0.0, a_plus=0.0, a_minus=0.0, b_plus=0.0, b_minus=0.0, sigma_plus=1.0, sigma_minus=1.0)
    expected = math.sqrt(4.0 / (3.0 * math.sqrt(2.0 * math.pi)))
    assert clt_scale_constant(params) == pytest.approx(expected, rel=1e-14)
    assert local_time_scale_constant(params) == pytest.approx(2.0 * expected, rel=1e-14)


def test_discretization_error_scale_is_finite():
    stats = sufficient_stats(_base_path(5), BASE.r)
    scale = discretization_error_scale(stats, BASE)
    assert scale.shape == (4,)
    assert np.all(np.isfinite(scale))
    assert np.all(scale >= 0)


@pytest.mark.parametrize("shift", [-1.5, 0.37, 12.0])
def test_local_time_is_invariant_under_a_common_shift(shift):
    traj = _base_path(seed=21, T=50.0, N=5000)
    moved = Trajectory(t0=0.0, dt=traj.dt, values=traj.values + shift)
    r = BASE.r
    assert local_time_approx(moved, r + shift) == pytest.approx(local_time_approx(traj, r), rel=1e-9)


def test_sufficient_stats_add_up_over_concatenated_pieces():
    traj = _base_path(seed=22, T=50.0, N=5000)
    r = BASE.r
    split = 1733
    # the pieces share the point at the split so every step is counted once
    first = Trajectory(t0=0.0, dt=traj.dt, values=traj.values[:split + 1])
    second = Trajectory(t0=0.0, dt=traj.dt, values=traj.values[split:])
    whole = sufficient_stats(traj, r)
    parts = [sufficient_stats(piece, r) for piece in (first, second)]
    for side in ("plus", "minus"):
        assert whole.count[side] == sum(s.count[side] for s in parts)
        assert whole.sumsq[side] == pytest.approx(sum(s.sumsq[side] for s in parts), rel=1e-12)
        for m in range(3):
            assert whole.q[side][m] == pytest.approx(sum(s.q[side][m] for s in parts), rel=1e-12, abs=1e-15)
        for m in range(2):
            assert whole.mm[side][m] == pytest.approx(sum(s.mm[side][m] for s in parts), rel=1e-9, abs=1e-15)
    assert whole.crossings == sum(s.crossings for s in parts)
    assert whole.local_time == pytest.approx(sum(s.local_time for s in parts), rel=1e-12)
    assert whole.T == pytest.approx(sum(s.T for s in parts))
