"""
Threshold OU - Inference
Empirical information matrices, the CLT confidence ellipsoid for the drift and
the heuristic test of H0: (a+, b+) = (a-, b-).
"""

import logging
import math
from typing import Tuple

import numpy as np
from numpy.linalg import LinAlgError, cholesky, inv, solve

from threshold_ou.core.exceptions import DegenerateSideError, SingularCovarianceError
from threshold_ou.models import (
    ConfidenceRegion,
    CovModel,
    FitResult,
    ProjectionEllipse,
    SufficientStats,
    TestResult,
)
from threshold_ou.services.estimator import det_eps
from threshold_ou.utils.numerics import chi2_quantile

logger = logging.getLogger(__name__)

# (v1, v2, v3, v4) = (u1, u2, u1, u2) parametrizes the null subspace
NULL_BASIS = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
PLANES = {"a": (0, 2), "b": (1, 3)}


def q_level(p: float) -> float:
    """Radius q_p of the confidence ellipsoid: sqrt of the chi2(4) p-quantile"""
    return math.sqrt(chi2_quantile(p, 4))


def gamma_empirical_side(stats: SufficientStats, side: str) -> np.ndarray:
    """Gamma_hat on one side from the Riemann sums Q^{side,i}/T"""
    det = stats.det(side)
    if stats.count[side] < 2 or det <= det_eps(stats, side):
        raise DegenerateSideError(side, det)
    q0, q1, q2 = stats.q[side]
    return np.array([[q2, -q1], [-q1, q0]]) / stats.T


def gamma_empirical(stats: SufficientStats) -> Tuple[np.ndarray, np.ndarray]:
    """(Gamma_hat+, Gamma_hat-); both sides must be non-degenerate"""
    return gamma_empirical_side(stats, "plus"), gamma_empirical_side(stats, "minus")


def cov_model(fit: FitResult) -> CovModel:
    """cov4 = (1/T) blockdiag(sigma+^2 Gamma+^-1, sigma-^2 Gamma-^-1)"""
    gamma_plus, gamma_minus = gamma_empirical(fit.stats)
    T = fit.stats.T
    cov4 = np.zeros((4, 4))
    try:
        for k, (gamma, sigma) in enumerate(zip((gamma_plus, gamma_minus), fit.sigma_hat)):
            cov4[2 * k:2 * k + 2, 2 * k:2 * k + 2] = sigma ** 2 * inv(gamma) / T
    except LinAlgError:
        raise SingularCovarianceError("Empirical Gamma is singular")
    return CovModel(
        gamma_hat_plus=gamma_plus.tolist(),
        gamma_hat_minus=gamma_minus.tolist(),
        sigma_hat=fit.sigma_hat,
        T=T,
        cov4=cov4.tolist(),
    )


def inverse_sqrt_factor(gamma: np.ndarray) -> np.ndarray:
    """Lower-triangular U with U U^T = Gamma^-1"""
    try:
        return cholesky(inv(gamma))
    except LinAlgError:
        raise SingularCovarianceError("Gamma is not positive definite")


def confidence_region(fit: FitResult, p: float) -> ConfidenceRegion:
    """Ellipsoid theta_hat + (q_p/sqrt(T)) blockdiag(sigma+ U+, sigma- U-) B^4"""
    gamma_plus, gamma_minus = gamma_empirical(fit.stats)
    q_p = q_level(p)
    shape = np.zeros((4, 4))
    for k, (gamma, sigma) in enumerate(zip((gamma_plus, gamma_minus), fit.sigma_hat)):
        shape[2 * k:2 * k + 2, 2 * k:2 * k + 2] = sigma * inverse_sqrt_factor(gamma)
    shape *= q_p / math.sqrt(fit.stats.T)
    return ConfidenceRegion(center=list(fit.estimate.theta), shape=shape.tolist(), q_p=q_p, p=p)


def min_mahalanobis_to_null(theta: np.ndarray, cov4: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Smallest Mahalanobis distance from theta to {v1 = v3, v2 = v4} and the
    point attaining it (weighted least squares in the null parametrization).
    """
    theta = np.asarray(theta, dtype=float)
    try:
        lower = cholesky(np.asarray(cov4, dtype=float))
    except LinAlgError:
        raise SingularCovarianceError("Drift covariance is not positive definite")
    # whiten: W = cov4^-1 = L^-T L^-1
    white_basis = solve(lower, NULL_BASIS)
    white_theta = solve(lower, theta)
    u, *_ = np.linalg.lstsq(white_basis, white_theta, rcond=None)
    residual = white_theta - white_basis @ u
    return float(math.sqrt(max(float(residual @ residual), 0.0))), NULL_BASIS @ u


def projection_ellipses(theta: np.ndarray, cov4: np.ndarray, q_p: float):
    """Marginal ellipses in the (a+, a-) and (b+, b-) planes"""
    ellipses = []
    for plane, (i, j) in PLANES.items():
        cov = cov4[np.ix_([i, j], [i, j])]
        spread = cov[0, 0] + cov[1, 1] - 2.0 * cov[0, 1]
        gap = abs(theta[i] - theta[j])
        distance = gap / math.sqrt(spread) if spread > 0 else math.inf
        ellipses.append(ProjectionEllipse(
            plane=plane,
            center=(float(theta[i]), float(theta[j])),
            covariance=cov.tolist(),
            radius=q_p,
            diagonal_distance=distance,
            crosses_diagonal=bool(distance <= q_p),
        ))
    return ellipses


def test_threshold(fit: FitResult, p: float = 0.95) -> TestResult:
    """Reject H0 when the confidence ellipsoid misses the null subspace"""
    theta = np.array(fit.estimate.theta, dtype=float)
    cov4 = np.array(cov_model(fit).cov4)
    q_p = q_level(p)
    distance, nearest = min_mahalanobis_to_null(theta, cov4)
    reject = bool(distance > q_p)
    if fit.threshold_estimated:
        logger.warning("Threshold was estimated on the same data; CLT applied as if it were known")
    logger.info(f"Threshold test at p={p}: D={distance:.4f} vs q_p={q_p:.4f} -> {'reject' if reject else 'accept'} H0")
    return TestResult(
        p=p,
        q_p=q_p,
        min_mahalanobis=distance,
        reject=reject,
        nearest_null_point=nearest.tolist(),
        projection_ellipses=projection_ellipses(theta, cov4, q_p),
        threshold_estimated=fit.threshold_estimated,
    )


# not a test case
test_threshold.__test__ = False
