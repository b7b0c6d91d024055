"""
Threshold OU - Estimator
Closed-form drift (Q)MLE at a fixed threshold, the discretized likelihood and
quasi-likelihood, and the threshold search over a percentile grid.
"""

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from threshold_ou.core.config import get_search_config
from threshold_ou.core.exceptions import (
    DegenerateSideError,
    InvalidInputError,
    NoValidCandidateError,
    SideUnvisitedError,
)
from threshold_ou.models import (
    SIDES,
    DriftEstimate,
    FitResult,
    Method,
    SufficientStats,
    ThresholdGrid,
    Trajectory,
)
from threshold_ou.services.statistics import (
    pooled_volatility,
    sufficient_stats,
    volatility_estimate,
)

logger = logging.getLogger(__name__)

Theta = Sequence[float]


def det_eps(stats: SufficientStats, side: str, factor: Optional[float] = None) -> float:
    """Relative determinant guard 1e-12 * max(1, Q0 Q2)"""
    if factor is None:
        factor = get_search_config()["det_eps_factor"]
    q0, _, q2 = stats.q[side]
    return factor * max(1.0, q0 * q2)


def _side_estimate(stats: SufficientStats, side: str) -> Tuple[float, float, float]:
    q0, q1, q2 = stats.q[side]
    m0, m1 = stats.mm[side]
    det = stats.det(side)
    if stats.count[side] < 2 or det <= det_eps(stats, side):
        raise DegenerateSideError(side, det)
    a_hat = (m0 * q1 - q0 * m1) / det
    b_hat = (m0 * q2 - q1 * m1) / det
    return a_hat, b_hat, det


def drift_mle(stats: SufficientStats, sides: Sequence[str] = SIDES, strict: bool = True) -> DriftEstimate:
    """
    Solve the 2x2 normal equations of each requested side.

    With strict=True a degenerate side raises DegenerateSideError; otherwise it
    is reported with valid=False and no values. The result maximizes both the
    likelihood and the quasi-likelihood, whatever the volatilities.
    """
    values = {}
    dets = {side: stats.det(side) for side in SIDES}
    valid = {side: False for side in SIDES}
    for side in sides:
        try:
            a_hat, b_hat, _ = _side_estimate(stats, side)
        except DegenerateSideError:
            if strict:
                raise
            logger.debug(f"Degenerate {side} side at r={stats.threshold}")
            continue
        values[f"a_hat_{side}"] = a_hat
        values[f"b_hat_{side}"] = b_hat
        valid[side] = True
    return DriftEstimate(threshold_used=stats.threshold, det=dets, valid=valid, **values)


def mean_reversion_levels(estimate: DriftEstimate, tol: float = 1e-12) -> Tuple[Optional[float], Optional[float]]:
    """(b+/a+, b-/a-), None where a is zero or missing"""
    levels = []
    for side in SIDES:
        a_hat, b_hat = estimate.side(side)
        levels.append(None if a_hat is None or abs(a_hat) <= tol else b_hat / a_hat)
    return levels[0], levels[1]


def _side_lambda(stats: SufficientStats, side: str, a: float, b: float) -> float:
    q0, q1, q2 = stats.q[side]
    m0, m1 = stats.mm[side]
    return b * m0 - a * m1 - 0.5 * (b * b * q0 + a * a * q2 - 2.0 * a * b * q1)


def quasi_likelihood(stats: SufficientStats, theta: Theta) -> float:
    """Lambda_{T,N} at theta = (a+, b+, a-, b-)"""
    a_p, b_p, a_m, b_m = theta
    return _side_lambda(stats, "plus", a_p, b_p) + _side_lambda(stats, "minus", a_m, b_m)


def log_likelihood(stats: SufficientStats, theta: Theta, sigma: Tuple[float, float]) -> float:
    """log G_{T,N}: each side's Lambda term divided by its variance"""
    sigma_p, sigma_m = sigma
    if not (sigma_p > 0 and sigma_m > 0):
        raise InvalidInputError(f"sigma must be positive, got {sigma}")
    a_p, b_p, a_m, b_m = theta
    return (
        _side_lambda(stats, "plus", a_p, b_p) / sigma_p ** 2
        + _side_lambda(stats, "minus", a_m, b_m) / sigma_m ** 2
    )


def percentiles(traj: Trajectory, delta: float, method: str = "nearest_rank") -> Tuple[float, float]:
    """(c, d): the delta and 1-delta empirical percentiles of the observed values"""
    if not 0.0 < delta < 0.5:
        raise InvalidInputError(f"delta must lie in (0, 0.5), got {delta}")
    if method == "linear":
        c, d = np.percentile(traj.values, [100.0 * delta, 100.0 * (1.0 - delta)])
        return float(c), float(d)
    if method != "nearest_rank":
        raise InvalidInputError(f"Unknown percentile method {method!r}")
    ordered = np.sort(traj.values)
    n = ordered.size

    def rank(prob: float) -> int:
        # round first so that 0.85 * 100 lands on 85, not 86
        return min(max(int(math.ceil(round(prob * n, 9))), 1), n)

    return float(ordered[rank(delta) - 1]), float(ordered[rank(1.0 - delta) - 1])


def grid_candidates(traj: Trajectory, grid: ThresholdGrid) -> List[float]:
    """Explicit candidates, or n_points evenly spaced values on [c, d]"""
    if grid.candidates is not None:
        return list(grid.candidates)
    c, d = percentiles(traj, grid.delta, grid.percentile_method)
    if grid.n_points == 1 or c == d:
        return [c]
    return np.linspace(c, d, grid.n_points).tolist()


def _score(stats: SufficientStats, estimate: DriftEstimate, method: Method) -> float:
    if method == Method.QMLE:
        return quasi_likelihood(stats, estimate.theta)
    return log_likelihood(stats, estimate.theta, volatility_estimate(stats))


def fit_at_threshold(
    traj: Trajectory,
    r: float,
    method: Method = Method.MLE,
    threshold_estimated: bool = False,
    profile: Optional[List[Tuple[float, float]]] = None,
) -> FitResult:
    """Drift, volatility and likelihood values with the threshold held at r"""
    method = Method(method)
    stats = sufficient_stats(traj, r)
    estimate = drift_mle(stats)
    if method == Method.MLE:
        sigma_hat = volatility_estimate(stats)
    else:
        pooled = pooled_volatility(stats)
        sigma_hat = (pooled, pooled)
    return FitResult(
        method=method,
        threshold=r,
        estimate=estimate,
        sigma_hat=sigma_hat,
        loglik=log_likelihood(stats, estimate.theta, sigma_hat),
        quasi_lik=quasi_likelihood(stats, estimate.theta),
        stats=stats,
        mean_reversion_levels=mean_reversion_levels(estimate),
        threshold_estimated=threshold_estimated,
        profile=profile or [],
    )


def threshold_search(traj: Trajectory, grid: ThresholdGrid, method: Method = Method.MLE) -> FitResult:
    """
    Maximize the likelihood (MLE) or the quasi-likelihood (QMLE) over the
    candidate thresholds. Degenerate candidates are skipped; ties go to the
    smallest candidate.
    """
    method = Method(method)
    candidates = sorted(grid_candidates(traj, grid))
    best_r: Optional[float] = None
    best_score = -math.inf
    profile: List[Tuple[float, float]] = []
    skipped = 0

    for r in candidates:
        stats = sufficient_stats(traj, r)
        try:
            estimate = drift_mle(stats)
            score = _score(stats, estimate, method)
        except (DegenerateSideError, SideUnvisitedError) as e:
            skipped += 1
            logger.debug(f"Skipping candidate r={r}: {e.message}")
            continue
        if not math.isfinite(score):
            skipped += 1
            continue
        profile.append((r, score))
        logger.debug(f"Candidate r={r:.6g} score={score:.6g}")
        if score > best_score:
            best_r, best_score = r, score

    if best_r is None:
        raise NoValidCandidateError(f"All {len(candidates)} threshold candidates were degenerate")
    if skipped:
        logger.warning(f"Skipped {skipped} of {len(candidates)} degenerate threshold candidates")
    logger.info(f"{method.value} threshold search over {len(candidates)} candidates chose r={best_r:.6g}")
    return fit_at_threshold(traj, best_r, method, threshold_estimated=True, profile=profile)
