"""
Short-rate series ingestion and the full estimation pipeline on rate data
"""

import logging
import math
from datetime import date
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd
from pydantic import BaseModel, Field, model_validator

from threshold_ou.core.exceptions import RateSeriesError
from threshold_ou.models import SCHEMA_VERSION, Method, ThresholdGrid, Trajectory
from threshold_ou.services.estimator import threshold_search
from threshold_ou.services.inference import test_threshold

logger = logging.getLogger(__name__)

MISSING_MARKERS = {"", ".", "na", "nan", "null", "none"}


class RateSeries(BaseModel):
    """Daily rate observations in percent"""
    dates: List[date]
    values: List[float]
    dt_months: float = Field(0.046, gt=0.0, description="Time step between observations, in months")
    dropped: int = Field(0, ge=0, description="Rows dropped for missing values")

    @model_validator(mode="after")
    def _consistent(self):
        if len(self.dates) != len(self.values):
            raise ValueError("dates and values must have equal lengths")
        if any(later <= earlier for earlier, later in zip(self.dates, self.dates[1:])):
            raise ValueError("dates must be strictly increasing")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("values must be finite")
        return self

    def to_trajectory(self) -> Trajectory:
        return Trajectory(t0=0.0, dt=self.dt_months, values=self.values)

    def last(self, k: int) -> "RateSeries":
        return RateSeries(dates=self.dates[-k:], values=self.values[-k:], dt_months=self.dt_months, dropped=self.dropped)


def parse_rate_series(path: str, dt_months: float = 0.046) -> RateSeries:
    """Read a `date,value` CSV; rows with a missing value are dropped and counted"""
    if not Path(path).exists():
        raise RateSeriesError(f"Rate file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise RateSeriesError(f"Cannot parse {path}: {e}")

    columns = [c.strip().lower() for c in frame.columns]
    if columns != ["date", "value"]:
        raise RateSeriesError(f"Expected header 'date,value', got {','.join(frame.columns)}", line=1)

    dates: List[date] = []
    values: List[float] = []
    dropped = 0
    for offset, (raw_date, raw_value) in enumerate(zip(frame.iloc[:, 0], frame.iloc[:, 1])):
        line = offset + 2
        if raw_value.strip().lower() in MISSING_MARKERS:
            dropped += 1
            continue
        try:
            value = float(raw_value)
        except ValueError:
            raise RateSeriesError(f"value {raw_value!r} is not a number", line=line)
        if not math.isfinite(value):
            raise RateSeriesError(f"value {raw_value!r} is not finite", line=line)
        try:
            day = date.fromisoformat(raw_date.strip())
        except ValueError:
            raise RateSeriesError(f"date {raw_date!r} is not ISO-8601", line=line)
        if dates and day <= dates[-1]:
            raise RateSeriesError(f"date {day} does not follow {dates[-1]}", line=line)
        dates.append(day)
        values.append(value)

    if dropped:
        logger.warning(f"Dropped {dropped} rows with missing values from {path}")
    if len(values) < 2:
        raise RateSeriesError(f"{path} holds fewer than two usable observations")
    logger.info(f"Loaded {len(values)} rate observations from {path}")
    return RateSeries(dates=dates, values=values, dt_months=dt_months, dropped=dropped)


def _method_report(series: RateSeries, grid: ThresholdGrid, method: Method, p: float) -> Dict[str, Any]:
    fit = threshold_search(series.to_trajectory(), grid, method)
    test = test_threshold(fit, p)
    est = fit.estimate
    level_plus, level_minus = fit.mean_reversion_levels
    return {
        "r": fit.threshold,
        "b_minus": est.b_hat_minus,
        "b_plus": est.b_hat_plus,
        "a_minus": est.a_hat_minus,
        "a_plus": est.a_hat_plus,
        "level_minus": level_minus,
        "level_plus": level_plus,
        "sigma_minus": fit.sigma_hat[1],
        "sigma_plus": fit.sigma_hat[0],
        "loglik": fit.loglik,
        "quasi_lik": fit.quasi_lik,
        "test": test.model_dump(mode="json"),
    }


def run_rates_pipeline(
    series: RateSeries,
    grid: ThresholdGrid,
    p: float = 0.95,
    methods: Sequence[Method] = (Method.MLE, Method.QMLE),
    last: Optional[int] = None,
) -> Dict[str, Any]:
    """Threshold search, drift and volatility estimates and the threshold test, per method"""
    if last:
        series = series.last(last)
    report: Dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "kind": "rates_report",
        "n_observations": len(series.values),
        "first_date": series.dates[0].isoformat(),
        "last_date": series.dates[-1].isoformat(),
        "dt_months": series.dt_months,
        "dropped_rows": series.dropped,
        "delta": grid.delta,
        "p": p,
        "methods": {},
    }
    for method in methods:
        method = Method(method)
        report["methods"][method.value] = _method_report(series, grid, method, p)
    return report
