"""
Tests for rate-series parsing and the rate pipeline
"""

import logging
import os

import pandas as pd
import pytest

from threshold_ou.cli.rates import RateSeries, parse_rate_series, run_rates_pipeline
from threshold_ou.core.exceptions import RateSeriesError
from threshold_ou.models import InitMode, Method, ModelParams, SimSpec, ThresholdGrid
from threshold_ou.services.estimator import percentiles
from threshold_ou.services.simulator import simulate
from threshold_ou.utils.numerics import RngStream

RATES_CSV = os.getenv("THRESHOLD_OU_RATES_CSV")


def _write(tmp_path, text: str):
    path = tmp_path / "rates.csv"
    path.write_text(text, encoding="utf-8")
    return str(path)


@pytest.fixture
def synthetic_rates(tmp_path):
    params = ModelParams(r=5.0, a_plus=0.02, a_minus=0.03, b_plus=0.14, b_minus=0.12,
                         sigma_plus=0.3, sigma_minus=0.2)
    spec = SimSpec(params=params, T=0.046 * 6000, N=6000, init=InitMode.STATIONARY)
    values = simulate(spec, RngStream(seed=77)).values
    frame = pd.DataFrame({
        "date": pd.date_range("1990-01-02", periods=values.size, freq="D").strftime("%Y-%m-%d"),
        "value": values,
    })
    path = tmp_path / "synthetic.csv"
    frame.to_csv(path, index=False)
    return str(path)


def test_two_row_file(tmp_path):
    series = parse_rate_series(_write(tmp_path, "date,value\n2001-01-02,5.1\n2001-01-03,5.2\n"))
    assert len(series.values) == 2
    assert series.values == [5.1, 5.2]
    assert series.dt_months == 0.046
    assert series.dropped == 0


def test_missing_value_is_dropped(tmp_path, caplog):
    text = "date,value\n2001-01-02,5.1\n2001-01-03,.\n2001-01-04,5.3\n"
    with caplog.at_level(logging.WARNING):
        series = parse_rate_series(_write(tmp_path, text))
    assert series.values == [5.1, 5.3]
    assert series.dropped == 1
    assert "Dropped 1 rows" in caplog.text


def test_empty_value_is_dropped(tmp_path):
    series = parse_rate_series(_write(tmp_path, "date,value\n2001-01-02,5.1\n2001-01-03,\n2001-01-04,5.3\n"))
    assert series.dropped == 1


def test_out_of_order_dates_name_the_line(tmp_path):
    text = "date,value\n2001-01-03,5.1\n2001-01-02,5.2\n"
    with pytest.raises(RateSeriesError) as info:
        parse_rate_series(_write(tmp_path, text))
    assert info.value.line == 3
    assert "line 3" in str(info.value)


def test_malformed_value_names_the_line(tmp_path):
    text = "date,value\n2001-01-02,5.1\n2001-01-03,5.2\n2001-01-04,abc\n"
    with pytest.raises(RateSeriesError) as info:
        parse_rate_series(_write(tmp_path, text))
    assert info.value.line == 4


def test_malformed_date_names_the_line(tmp_path):
    with pytest.raises(RateSeriesError) as info:
        parse_rate_series(_write(tmp_path, "date,value\n2001-01-02,5.1\n01/03/2001,5.2\n"))
    assert info.value.line == 3


def test_wrong_header(tmp_path):
    with pytest.raises(RateSeriesError):
        parse_rate_series(_write(tmp_path, "day,rate\n2001-01-02,5.1\n2001-01-03,5.2\n"))


def test_missing_file(tmp_path):
    with pytest.raises(RateSeriesError):
        parse_rate_series(str(tmp_path / "absent.csv"))


def test_rate_series_invariants():
    with pytest.raises(ValueError):
        RateSeries(dates=["2001-01-02"], values=[1.0, 2.0])


def test_series_window():
    series = RateSeries(dates=["2001-01-02", "2001-01-03", "2001-01-04"], values=[1.0, 2.0, 3.0])
    window = series.last(2)
    assert window.values == [2.0, 3.0]
    assert window.to_trajectory().dt == 0.046


def test_pipeline_reports_both_methods(synthetic_rates):
    series = parse_rate_series(synthetic_rates)
    grid = ThresholdGrid(delta=0.15, n_points=40)
    report = run_rates_pipeline(series, grid, p=0.95)
    assert report["kind"] == "rates_report"
    assert report["schema_version"] == "1.0"
    assert report["n_observations"] == 6001
    c, d = percentiles(series.to_trajectory(), 0.15)
    for method in ("MLE", "QMLE"):
        entry = report["methods"][method]
        assert c <= entry["r"] <= d
        assert entry["test"]["kind"] == "test_report"
        assert entry["sigma_plus"] > 0
    assert report["methods"]["QMLE"]["sigma_plus"] == report["methods"]["QMLE"]["sigma_minus"]


def test_pipeline_last_window(synthetic_rates):
    series = parse_rate_series(synthetic_rates)
    report = run_rates_pipeline(series, ThresholdGrid(n_points=20), methods=[Method.QMLE], last=4000)
    assert report["n_observations"] == 4000
    assert list(report["methods"]) == ["QMLE"]
    assert report["first_date"] == series.dates[-4000].isoformat()


@pytest.mark.skipif(not RATES_CSV, reason="set THRESHOLD_OU_RATES_CSV to a date,value T-bill file")
def test_tbill_series_thresholds():
    series = parse_rate_series(RATES_CSV)
    grid = ThresholdGrid(delta=0.15, n_points=200)
    report = run_rates_pipeline(series, grid)
    c, d = percentiles(series.to_trajectory(), grid.delta)
    cell = (d - c) / (grid.n_points - 1)
    assert report["methods"]["QMLE"]["r"] == pytest.approx(6.73, abs=cell + 0.005)
    assert report["methods"]["MLE"]["r"] == pytest.approx(0.919, abs=cell + 0.005)

    recent = run_rates_pipeline(series, grid, last=4000)
    assert recent["methods"]["MLE"]["r"] == recent["methods"]["QMLE"]["r"]
