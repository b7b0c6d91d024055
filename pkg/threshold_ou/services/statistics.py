"""
Threshold OU - Sufficient Statistics
Occupation and increment sums per side, the crossing-based local time and
realized volatility, all computed from one sampled path and one threshold.
"""

import logging
import math
from typing import Dict, Tuple

import numpy as np

from threshold_ou.core.exceptions import DegenerateSideError, SideUnvisitedError
from threshold_ou.models import SIDES, ModelParams, SufficientStats, Trajectory

logger = logging.getLogger(__name__)

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _crossing_terms(values: np.ndarray, r: float) -> Tuple[float, int]:
    centered = values - r
    crossed = centered[:-1] * centered[1:] < 0.0
    return 2.0 * float(np.sum(np.abs(centered[1:][crossed]))), int(np.count_nonzero(crossed))


def local_time_approx(traj: Trajectory, r: float) -> float:
    """2 * sum |X_{i+1} - r| over steps whose endpoints lie strictly on opposite sides of r"""
    return _crossing_terms(traj.values, r)[0]


def sufficient_stats(traj: Trajectory, r: float) -> SufficientStats:
    """All per-side sums for threshold r; the side of a step is fixed by its left endpoint"""
    left = traj.values[:-1]
    increments = np.diff(traj.values)
    plus = left >= r
    masks = {"plus": plus, "minus": ~plus}

    q: Dict[str, list] = {}
    mm: Dict[str, list] = {}
    sumsq: Dict[str, float] = {}
    count: Dict[str, int] = {}
    for side, mask in masks.items():
        x = left[mask]
        dx = increments[mask]
        # numpy reductions use pairwise summation
        q[side] = [traj.dt * x.size, traj.dt * float(np.sum(x)), traj.dt * float(np.sum(x * x))]
        mm[side] = [float(np.sum(dx)), float(np.sum(x * dx))]
        sumsq[side] = float(np.sum(dx * dx))
        count[side] = int(x.size)

    local_time, crossings = _crossing_terms(traj.values, r)
    return SufficientStats(
        threshold=r,
        T=traj.T,
        N=traj.N,
        dt=traj.dt,
        q=q,
        mm=mm,
        local_time=local_time,
        crossings=crossings,
        sumsq=sumsq,
        count=count,
    )


def side_volatility(stats: SufficientStats, side: str) -> float:
    """Realized variance over occupation time, square-rooted"""
    if stats.count[side] == 0:
        raise SideUnvisitedError(side)
    return math.sqrt(stats.sumsq[side] / stats.q[side][0])


def volatility_estimate(stats: SufficientStats) -> Tuple[float, float]:
    """(sigma_hat+, sigma_hat-)"""
    return side_volatility(stats, "plus"), side_volatility(stats, "minus")


def pooled_volatility(stats: SufficientStats) -> float:
    """One realized volatility over the whole path, ignoring the threshold"""
    return math.sqrt((stats.sumsq["plus"] + stats.sumsq["minus"]) / stats.T)


def _scale_constant(p: ModelParams, numerator: float) -> float:
    s_p, s_m = p.sigma_plus, p.sigma_minus
    return math.sqrt(numerator / (3.0 * _SQRT_2PI) * (s_m ** 2 + s_p ** 2) / (s_m + s_p))


def clt_scale_constant(p: ModelParams) -> float:
    """Prefactor of the N^(1/4) fluctuation of the drift estimator at fixed horizon"""
    return _scale_constant(p, 4.0)


def local_time_scale_constant(p: ModelParams) -> float:
    """Prefactor of the N^(1/4) fluctuation of the crossing-based local time"""
    return _scale_constant(p, 16.0)


def discretization_error_scale(stats: SufficientStats, p: ModelParams) -> np.ndarray:
    """
    Predicted standard deviation of N^(1/4) (theta_hat_{T,N} - theta_hat_T), per
    component (a+, b+, a-, b-), using the path's own sums and local time.
    """
    r = stats.threshold
    direction = []
    for side, sign in zip(SIDES, (1.0, -1.0)):
        det = stats.det(side)
        if det <= 0.0:
            raise DegenerateSideError(side, det)
        q0, q1, q2 = stats.q[side]
        direction += [sign * (q1 - r * q0) / det, sign * (q2 - r * q1) / det]
    return clt_scale_constant(p) * np.abs(np.array(direction)) * math.sqrt(stats.local_time)
