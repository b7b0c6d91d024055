"""
Tests for the command-line surface and the experiment drivers
"""

import json
import os

import numpy as np
import pandas as pd
import pytest

from threshold_ou.cli.experiments import (
    cmd_invariant_density,
    cmd_mc_clt,
    cmd_rate_study,
    load_experiment_config,
    load_trajectory,
)
from threshold_ou.cli.main import build_parser, main
from threshold_ou.core.config import DEFAULT_PARAMS, DEFAULT_X0
from threshold_ou.core.exceptions import InvalidInputError
from threshold_ou.models import FitResult, ModelParams, TestResult
from threshold_ou.services.estimator import log_likelihood
from threshold_ou.services.stationary import gamma_theoretical


def _simulate(tmp_path, name="paths.csv", *extra):
    out = tmp_path / name
    code = main(["simulate", "--T", "50", "--N", "2000", "--seed", "3", "--out", str(out), "--quiet", *extra])
    return code, out


def test_parser_lists_subcommands():
    parser = build_parser()
    for command in ("simulate", "estimate", "mc-clt", "invariant-density", "rate-study", "rates", "serve"):
        args = parser.parse_args([command] if command != "rates" else [command, "--input", "x.csv"])
        assert args.command == command


def test_simulate_writes_one_row_per_grid_point(tmp_path):
    code, out = _simulate(tmp_path)
    assert code == 0
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["t", "path_id", "x"]
    assert len(frame) == 2001
    assert frame["x"].iloc[0] == DEFAULT_X0


def test_simulate_several_paths(tmp_path):
    code, out = _simulate(tmp_path, "paths.csv", "--n-paths", "3", "--path-chunk", "2")
    assert code == 0
    frame = pd.read_csv(out)
    assert len(frame) == 3 * 2001
    assert sorted(frame["path_id"].unique()) == [0, 1, 2]


def test_simulate_is_byte_identical_on_rerun(tmp_path):
    _, first = _simulate(tmp_path, "a.csv")
    _, second = _simulate(tmp_path, "b.csv")
    assert first.read_bytes() == second.read_bytes()


def test_diverging_simulation_exit_code(tmp_path):
    out = tmp_path / "boom.csv"
    code = main(["simulate", "--a-plus", "-5", "--x0", "1", "--T", "100", "--N", "10000",
                 "--out", str(out), "--quiet"])
    assert code == 4


def test_estimate_from_simulated_csv(tmp_path):
    _, paths = _simulate(tmp_path)
    out = tmp_path / "fit.json"
    profile = tmp_path / "profile.csv"
    code = main(["estimate", "--input", str(paths), "--n-points", "30", "--out", str(out),
                 "--profile", str(profile), "--quiet"])
    assert code == 0
    fit = FitResult.model_validate_json(out.read_text())
    assert fit.kind == "fit_result"
    assert fit.threshold_estimated is True
    assert fit.stats.N == 2000
    assert fit.stats.dt == pytest.approx(50 / 2000)
    rows = pd.read_csv(profile)
    assert list(rows.columns) == ["r", "score"]
    assert len(rows) == len(fit.profile)


def test_estimate_fixed_threshold_and_round_trip(tmp_path):
    _, paths = _simulate(tmp_path)
    mle_out, qmle_out = tmp_path / "mle.json", tmp_path / "qmle.json"
    for method, out in (("MLE", mle_out), ("QMLE", qmle_out)):
        code = main(["estimate", "--input", str(paths), "--threshold", "0.01", "--method", method,
                     "--out", str(out), "--quiet"])
        assert code == 0
    mle = FitResult.model_validate_json(mle_out.read_text())
    qmle = FitResult.model_validate_json(qmle_out.read_text())
    assert mle.threshold == 0.01
    assert mle.threshold_estimated is False
    assert mle.estimate.theta == qmle.estimate.theta
    rescored = log_likelihood(mle.stats, mle.estimate.theta, mle.sigma_hat)
    assert rescored == pytest.approx(mle.loglik, abs=1e-9)
    raw = json.loads(mle_out.read_text())
    assert set(raw["mean_reversion_levels"]) != {None}


def test_estimate_with_test_report(tmp_path):
    out = tmp_path / "fit.json"
    code = main(["estimate", "--T", "100", "--N", "5000", "--init", "stationary", "--threshold", "0.01", "--test",
                 "--out", str(out), "--quiet"])
    assert code == 0
    report = TestResult.model_validate_json((tmp_path / "fit_test.json").read_text())
    assert report.p == 0.95


def test_estimate_missing_input_exit_code(tmp_path):
    assert main(["estimate", "--input", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "f.json"), "-q"]) == 2


def test_estimate_without_candidates_exit_code(tmp_path):
    paths = tmp_path / "flat.csv"
    pd.DataFrame({"t": np.arange(10.0), "x": np.ones(10)}).to_csv(paths, index=False)
    assert main(["estimate", "--input", str(paths), "--out", str(tmp_path / "f.json"), "-q"]) == 5


def test_load_trajectory_picks_the_path(tmp_path):
    _, paths = _simulate(tmp_path, "paths.csv", "--n-paths", "2")
    first = load_trajectory(str(paths), path_id=0)
    second = load_trajectory(str(paths), path_id=1)
    assert first.N == second.N == 2000
    assert not np.array_equal(first.values, second.values)


def test_config_precedence(tmp_path):
    config_file = tmp_path / "config.json"
    config_file.write_text(json.dumps({"T": 5.0, "N": 10, "params": {"a_plus": 0.5}}))
    config = load_experiment_config("simulate", str(config_file), {"N": 20, "params": {"a_plus": None}})
    assert config.T == 5.0
    assert config.N == 20
    assert config.params.a_plus == 0.5
    assert config.params.a_minus == DEFAULT_PARAMS["a_minus"]


def test_command_defaults_apply():
    config = load_experiment_config("mc-clt")
    assert (config.T, config.N, config.n_paths) == (5000.0, 500_000, 200)
    assert config.init.value == "stationary"


@pytest.mark.parametrize("command", ["mc-clt", "invariant-density", "rate-study"])
def test_monte_carlo_commands_default_to_all_cores(command):
    assert load_experiment_config(command).n_workers == (os.cpu_count() or 1)
    assert load_experiment_config(command, None, {"n_workers": 1}).n_workers == 1


def test_invalid_config_raises(tmp_path):
    with pytest.raises(InvalidInputError):
        load_experiment_config("simulate", None, {"T": -1.0})
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(InvalidInputError):
        load_experiment_config("simulate", str(bad))


def test_invalid_flag_exit_code(tmp_path):
    assert main(["simulate", "--T", "-1", "--out", str(tmp_path / "x.csv"), "-q"]) == 2


def test_mc_clt_small_run(tmp_path):
    out = tmp_path / "mc.csv"
    config = load_experiment_config("mc-clt", None, {
        "T": 50.0, "N": 2000, "n_paths": 12, "out": str(out), "quiet": True, "seed": 9,
    })
    summary = cmd_mc_clt(config)
    assert summary["kind"] == "mc_clt_summary"
    assert set(summary["ks"]) == {"a_plus", "b_plus", "a_minus", "b_minus"}
    constants = gamma_theoretical(ModelParams(**DEFAULT_PARAMS))
    assert summary["theoretical_cov"]["plus"] == constants.clt_cov_plus
    assert summary["theoretical_cov"]["minus"] == constants.clt_cov_minus
    frame = pd.read_csv(out)
    assert len(frame) == summary["n_used"]
    assert json.loads(out.with_suffix(".json").read_text()) == summary


def test_mc_clt_seeds_change_the_numbers(tmp_path):
    base = {"T": 50.0, "N": 1000, "n_paths": 8, "quiet": True}
    a = cmd_mc_clt(load_experiment_config("mc-clt", None, {**base, "seed": 1, "out": str(tmp_path / "a.csv")}))
    b = cmd_mc_clt(load_experiment_config("mc-clt", None, {**base, "seed": 2, "out": str(tmp_path / "b.csv")}))
    assert a["empirical_cov4"] != b["empirical_cov4"]


def test_mc_clt_workers_do_not_change_the_numbers(tmp_path):
    base = {"T": 20.0, "N": 500, "n_paths": 6, "path_chunk": 2, "quiet": True, "seed": 4}
    serial = cmd_mc_clt(load_experiment_config("mc-clt", None, {**base, "n_workers": 1, "out": str(tmp_path / "s.csv")}))
    pooled = cmd_mc_clt(load_experiment_config("mc-clt", None, {**base, "n_workers": 2, "out": str(tmp_path / "p.csv")}))
    assert serial["empirical_cov4"] == pooled["empirical_cov4"]
    assert serial["n_used"] == pooled["n_used"]


def test_mc_clt_requires_ergodic_params(tmp_path):
    code = main(["mc-clt", "--a-plus", "0", "--b-plus", "0", "--n-paths", "4", "--T", "1", "--N", "10",
                 "--out", str(tmp_path / "mc.csv"), "-q"])
    assert code == 3


def test_invariant_density_small_run(tmp_path):
    out = tmp_path / "density.csv"
    config = load_experiment_config("invariant-density", None, {
        "T": 20.0, "N": 400, "n_paths": 60, "bins": 15, "out": str(out), "quiet": True,
    })
    summary = cmd_invariant_density(config)
    assert summary["kind"] == "invariant_density_summary"
    assert summary["histogram_mass"] == pytest.approx(1.0, abs=1e-12)
    assert summary["bimodal"] is True
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["x", "mu", "empirical", "bin_left", "bin_right"]
    assert len(frame) == 15


def test_rate_study_small_run(tmp_path):
    out = tmp_path / "rate.csv"
    config = load_experiment_config("rate-study", None, {
        "n_ref": 2 ** 12, "ladder": [2 ** 8, 2 ** 10], "n_paths": 6, "out": str(out), "quiet": True,
    })
    summary = cmd_rate_study(config)
    assert summary["kind"] == "rate_study_summary"
    assert summary["ladder"] == [2 ** 8, 2 ** 10, 2 ** 12]
    assert "estimator_slope_mean" in summary
    frame = pd.read_csv(out)
    assert {"median_estimator_gap", "mean_estimator_gap", "median_local_time_gap"} <= set(frame.columns)
    finest = frame[frame["N"] == 2 ** 12].iloc[0]
    assert finest["mean_local_time_gap"] == 0.0
    assert finest["median_local_time_gap"] == 0.0
    assert finest["median_estimator_gap"] == 0.0 or finest["n_estimator_paths"] == 0
    coarse = frame[frame["N"] < 2 ** 12]
    assert (coarse["mean_local_time_gap"] >= 0.0).all()
    assert (coarse["predicted_estimator_scale"].diff().dropna() < 0.0).all()


def test_rate_study_median_ignores_one_wild_path(monkeypatch, tmp_path):
    from threshold_ou.cli import experiments

    def fake_gaps(params, dt, ladder, n_ref, indices, block):
        gaps = []
        for index in indices:
            wild = 1e6 if index == 0 else 1.0
            gaps.append(experiments.PathGaps(
                local_time=[n ** -0.25 for n in ladder],
                predicted_local_time=[0.0] * len(ladder),
                estimator=[wild * n ** -0.25 if n < n_ref else 0.0 for n in ladder],
            ))
        return gaps

    monkeypatch.setattr(experiments, "_rate_gaps", fake_gaps)
    config = load_experiment_config("rate-study", None, {
        "n_ref": 2 ** 8, "ladder": [2 ** 4, 2 ** 6], "n_paths": 5, "n_workers": 1,
        "out": str(tmp_path / "r.csv"), "quiet": True,
    })
    summary = cmd_rate_study(config)
    assert summary["estimator_slope"] == pytest.approx(-0.25)
    assert summary["local_time_slope"] == pytest.approx(-0.25)
    frame = pd.read_csv(tmp_path / "r.csv")
    coarse = frame[frame["N"] == 2 ** 4].iloc[0]
    assert coarse["median_estimator_gap"] == pytest.approx(0.5)
    assert coarse["mean_estimator_gap"] > 1e4


def test_rate_study_rejects_non_dividing_ladder(tmp_path):
    code = main(["rate-study", "--n-ref", "1000", "--ladder", "300", "--n-paths", "2",
                 "--out", str(tmp_path / "r.csv"), "-q"])
    assert code == 2


def test_rates_command(tmp_path):
    values = 5.0 + np.sin(np.linspace(0.0, 40.0, 600)) + 0.1 * np.cos(np.arange(600) * 1.7)
    frame = pd.DataFrame({
        "date": pd.date_range("2000-01-03", periods=600, freq="D").strftime("%Y-%m-%d"),
        "value": values,
    })
    rates = tmp_path / "rates.csv"
    frame.to_csv(rates, index=False)
    out = tmp_path / "report.json"
    code = main(["rates", "--input", str(rates), "--n-points", "25", "--out", str(out), "-q"])
    assert code == 0
    report = json.loads(out.read_text())
    assert report["kind"] == "rates_report"
    assert set(report["methods"]) == {"MLE", "QMLE"}
    assert report["dt_months"] == 0.046


def test_rates_parse_error_exit_code(tmp_path):
    rates = tmp_path / "rates.csv"
    rates.write_text("date,value\n2001-01-03,5\n2001-01-02,6\n", encoding="utf-8")
    assert main(["rates", "--input", str(rates), "--out", str(tmp_path / "r.json"), "-q"]) == 2


@pytest.mark.slow
def test_clt_reproduction(tmp_path):
    config = load_experiment_config("mc-clt", None, {"out": str(tmp_path / "mc.csv"), "quiet": True})
    summary = cmd_mc_clt(config)
    assert all(entry["passes_1pct"] for entry in summary["ks"].values())
    assert summary["max_rel_diag_diff"] <= 0.25


@pytest.mark.slow
def test_invariant_density_reproduction(tmp_path):
    config = load_experiment_config("invariant-density", None, {"out": str(tmp_path / "d.csv"), "quiet": True})
    summary = cmd_invariant_density(config)
    assert summary["ks_statistic"] < 0.06
    assert summary["bimodal"] is True


@pytest.mark.slow
def test_discretization_rate(tmp_path):
    config = load_experiment_config("rate-study", None, {"out": str(tmp_path / "r.csv"), "quiet": True})
    summary = cmd_rate_study(config)
    assert -0.45 <= summary["local_time_slope"] <= -0.10
    assert -0.45 <= summary["estimator_slope"] <= -0.10
