"""
Threshold OU - Experiment Drivers
Monte Carlo and data-driven commands behind the CLI. Every driver takes an
ExperimentConfig, writes CSV/JSON outputs and returns its summary.
"""

import json
import logging
import math
import os
from functools import partial
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, ValidationError, field_validator
from scipy import stats as sps
from tqdm import tqdm

from threshold_ou.cli.rates import parse_rate_series, run_rates_pipeline
from threshold_ou.core.config import (
    DEFAULT_PARAMS,
    DEFAULT_X0,
    get_search_config,
    get_settings,
    get_simulation_config,
    merge_overrides,
    read_config_file,
)
from threshold_ou.core.exceptions import DegenerateSideError, InvalidInputError, NoValidCandidateError
from threshold_ou.models import (
    SCHEMA_VERSION,
    SIDES,
    InitMode,
    Method,
    ModelParams,
    SimSpec,
    ThresholdGrid,
    Trajectory,
)
from threshold_ou.services.estimator import drift_mle, fit_at_threshold, threshold_search
from threshold_ou.services.inference import test_threshold
from threshold_ou.services.simulator import BlockReducer, iter_batch_blocks
from threshold_ou.services.stationary import gamma_theoretical, local_maxima, stationary_dist
from threshold_ou.services.statistics import (
    discretization_error_scale,
    local_time_scale_constant,
    sufficient_stats,
)

logger = logging.getLogger(__name__)

THETA_NAMES = ("a_plus", "b_plus", "a_minus", "b_minus")

# Monte Carlo drivers use every core unless a worker count is given
MC_WORKERS = os.cpu_count() or 1

# Per-command defaults, applied between the global defaults and the config file.
# With a+- near 0.1, sqrt(T)(a_hat - a) is close to normal only for T in the thousands.
COMMAND_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "simulate": {"out": "trajectories.csv"},
    "estimate": {"out": "fit.json"},
    "mc-clt": {
        "out": "mc_clt.csv",
        "T": 5000.0,
        "N": 500_000,
        "n_paths": 200,
        "init": InitMode.STATIONARY.value,
        "path_chunk": 10,
        "n_workers": MC_WORKERS,
    },
    "invariant-density": {
        "out": "invariant_density.csv",
        "T": 200.0,
        "N": 20_000,
        "n_paths": 500,
        "init": InitMode.STATIONARY.value,
        "n_workers": MC_WORKERS,
    },
    "rate-study": {
        "out": "rate_study.csv",
        "T": 1.0,
        "n_paths": 300,
        "n_ref": 2 ** 20,
        "ladder": [2 ** k for k in range(10, 17)],
        "x0": 0.0,
        "path_chunk": 16,
        "n_workers": MC_WORKERS,
        "params": {
            "r": 0.0,
            "a_plus": 0.0,
            "a_minus": 0.0,
            "b_plus": 0.0,
            "b_minus": 0.0,
            "sigma_plus": 1.0,
            "sigma_minus": 2.0,
        },
    },
    "rates": {"out": "rates_report.json"},
}


class ExperimentConfig(BaseModel):
    """Everything a driver needs; built by load_experiment_config"""
    params: ModelParams
    x0: Optional[float] = Field(DEFAULT_X0, description="Deterministic start (also the burn-in start)")
    init: InitMode = InitMode.DETERMINISTIC
    T: float = Field(100.0, gt=0.0)
    N: int = Field(10_000, ge=1)
    n_paths: int = Field(1, ge=1)
    seed: int = Field(..., ge=0)
    substeps: int = Field(1, ge=1)
    burn_in: float = Field(0.0, ge=0.0)
    grid: ThresholdGrid = Field(default_factory=ThresholdGrid)
    p: float = Field(0.95, gt=0.0, lt=1.0)
    method: Optional[Method] = Field(None, description="MLE or QMLE; rates runs both when absent")
    threshold: Optional[float] = Field(None, description="Fixed threshold; skips the grid search")
    run_test: bool = False
    input: Optional[str] = None
    path_id: int = Field(0, ge=0)
    dt_months: float = Field(0.046, gt=0.0)
    last: Optional[int] = Field(None, ge=2)
    ladder: List[int] = Field(default_factory=lambda: [2 ** k for k in range(10, 17)])
    n_ref: int = Field(2 ** 20, ge=1)
    bins: int = Field(50, ge=1)
    out: Optional[str] = None
    profile: Optional[str] = None
    n_workers: Optional[int] = Field(None, ge=1)
    path_chunk: Optional[int] = Field(None, ge=1)
    quiet: bool = False

    @field_validator("ladder")
    @classmethod
    def _positive_ladder(cls, value):
        if not value or any(n < 1 for n in value):
            raise ValueError("ladder must hold positive step counts")
        return sorted(set(value))

    def sim_spec(self, N: Optional[int] = None) -> SimSpec:
        x0 = self.x0 if self.x0 is not None else self.params.r
        return SimSpec(
            params=self.params,
            T=self.T,
            N=N or self.N,
            init=self.init,
            x0=x0,
            substeps=self.substeps,
            burn_in=self.burn_in,
        )


def default_config_layer() -> Dict[str, Any]:
    """Global defaults from the settings layer"""
    settings = get_settings()
    search = get_search_config()
    return {
        "params": dict(DEFAULT_PARAMS),
        "x0": DEFAULT_X0,
        "seed": settings["SEED"],
        "p": settings["P_LEVEL"],
        "dt_months": settings["DT_MONTHS"],
        "grid": {
            "delta": search["delta"],
            "n_points": search["n_points"],
            "percentile_method": search["percentile_method"],
        },
    }


def load_experiment_config(
    command: str,
    path: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> ExperimentConfig:
    """defaults -> command defaults -> JSON config file -> explicit flags"""
    merged = merge_overrides(
        default_config_layer(),
        COMMAND_DEFAULTS.get(command, {}),
        read_config_file(path),
        overrides or {},
    )
    try:
        return ExperimentConfig.model_validate(merged)
    except ValidationError as e:
        raise InvalidInputError(f"Invalid configuration for {command}: {e}")


def write_json(path: Union[str, Path], payload: Union[BaseModel, Dict[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(payload, BaseModel):
        text = payload.model_dump_json(indent=2)
    else:
        text = json.dumps(payload, indent=2)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def summary_path(out: Union[str, Path]) -> Path:
    """Companion JSON next to a CSV output"""
    return Path(out).with_suffix(".json")


def _blocks(
    config: ExperimentConfig,
    spec: SimSpec,
    desc: str,
    reducer: Optional[BlockReducer] = None,
) -> Iterator[Tuple[List[int], Any]]:
    chunk = config.path_chunk or get_simulation_config()["path_chunk"]
    total = math.ceil(config.n_paths / chunk)
    blocks = iter_batch_blocks(
        spec,
        config.n_paths,
        config.seed,
        path_chunk=chunk,
        n_workers=config.n_workers,
        reducer=reducer,
    )
    return tqdm(blocks, total=total, desc=desc, unit="block", disable=config.quiet)


def _terminal_values(indices: List[int], block: np.ndarray) -> np.ndarray:
    return block[:, -1].copy()


def _drift_estimates(params: ModelParams, dt: float, indices: List[int], block: np.ndarray) -> List[Optional[List[float]]]:
    """theta_hat at the true threshold per row, None where a side is degenerate"""
    estimates: List[Optional[List[float]]] = []
    for row in block:
        stats = sufficient_stats(Trajectory(t0=0.0, dt=dt, values=row), params.r)
        try:
            estimates.append(list(drift_mle(stats).theta))
        except DegenerateSideError:
            estimates.append(None)
    return estimates


class PathGaps(BaseModel):
    """Per-path gaps to the finest grid, one entry per ladder level"""
    local_time: List[float]
    predicted_local_time: List[float]
    estimator: List[float] = Field(..., description="NaN where either fit is degenerate")
    scale_norm: Optional[float] = None


def _rate_gaps(
    params: ModelParams,
    dt: float,
    ladder: List[int],
    n_ref: int,
    indices: List[int],
    block: np.ndarray,
) -> List[PathGaps]:
    lt_const = local_time_scale_constant(params)
    mean_abs_normal = math.sqrt(2.0 / math.pi)
    gaps = []
    for row in block:
        finest = Trajectory(t0=0.0, dt=dt, values=row)
        stats_ref = sufficient_stats(finest, params.r)
        ref = drift_mle(stats_ref, strict=False)
        ref_ok = all(ref.valid.values())
        try:
            scale_norm = float(np.linalg.norm(discretization_error_scale(stats_ref, params)))
        except DegenerateSideError:
            scale_norm = None
        local_time, predicted, estimator = [], [], []
        for n in ladder:
            stats_n = sufficient_stats(finest.subsample(n_ref // n), params.r)
            local_time.append(abs(stats_n.local_time - stats_ref.local_time))
            predicted.append(mean_abs_normal * lt_const * math.sqrt(stats_ref.local_time) * n ** -0.25)
            est = drift_mle(stats_n, strict=False) if ref_ok else None
            if est is not None and all(est.valid.values()):
                estimator.append(float(np.linalg.norm(np.array(est.theta) - np.array(ref.theta))))
            else:
                estimator.append(math.nan)
        gaps.append(PathGaps(
            local_time=local_time,
            predicted_local_time=predicted,
            estimator=estimator,
            scale_norm=scale_norm,
        ))
    return gaps


def cmd_simulate(config: ExperimentConfig) -> Dict[str, Any]:
    """Write trajectories as CSV `t,path_id,x`, N + 1 rows per path"""
    spec = config.sim_spec()
    out = Path(config.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    times = spec.dt * np.arange(spec.N + 1)
    first = True
    for indices, block in _blocks(config, spec, "simulate"):
        frame = pd.DataFrame({
            "t": np.tile(times, len(indices)),
            "path_id": np.repeat(indices, spec.N + 1),
            "x": block.ravel(),
        })
        frame.to_csv(out, mode="w" if first else "a", header=first, index=False, float_format="%.17g")
        first = False
    logger.info(f"Wrote {config.n_paths} path(s) of {spec.N + 1} points to {out}")
    return {"out": str(out), "n_paths": config.n_paths, "rows_per_path": spec.N + 1}


def load_trajectory(path: str, path_id: int = 0, dt_months: float = 0.046) -> Trajectory:
    """Read one path from a `t,path_id,x`, `t,x` or `date,value` CSV"""
    if not Path(path).exists():
        raise InvalidInputError(f"Input file not found: {path}")
    try:
        header = pd.read_csv(path, nrows=0).columns
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise InvalidInputError(f"Cannot parse {path}: {e}")
    columns = [c.strip().lower() for c in header]
    if columns == ["date", "value"]:
        return parse_rate_series(path, dt_months).to_trajectory()
    if "t" not in columns or "x" not in columns:
        raise InvalidInputError(f"{path} must have columns t,x (optionally path_id) or date,value")

    try:
        frame = pd.read_csv(path)
        frame.columns = columns
        if "path_id" in columns:
            frame = frame[frame["path_id"] == path_id]
        t = frame["t"].to_numpy(dtype=float)
        x = frame["x"].to_numpy(dtype=float)
    except (ValueError, pd.errors.ParserError) as e:
        raise InvalidInputError(f"Cannot parse {path}: {e}")
    if x.size < 2:
        raise InvalidInputError(f"{path} holds fewer than two observations for path {path_id}")
    steps = np.diff(t)
    if not np.all(steps > 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
        raise InvalidInputError(f"{path}: times must be increasing on a uniform grid")
    return Trajectory(t0=float(t[0]), dt=float(steps[0]), values=x)


def cmd_estimate(config: ExperimentConfig) -> Dict[str, Any]:
    """FitResult JSON for a CSV path, or for one path simulated from the config"""
    if config.input:
        traj = load_trajectory(config.input, config.path_id, config.dt_months)
    else:
        spec = config.sim_spec()
        _, block = next(iter_batch_blocks(spec, 1, config.seed, first_index=config.path_id, path_chunk=1, n_workers=1))
        traj = Trajectory(t0=0.0, dt=spec.dt, values=block[0])

    method = config.method or Method.MLE
    if config.threshold is not None:
        fit = fit_at_threshold(traj, config.threshold, method)
    else:
        fit = threshold_search(traj, config.grid, method)
    out = write_json(config.out, fit)

    if config.profile:
        profile = pd.DataFrame(fit.profile, columns=["r", "score"])
        profile.to_csv(config.profile, index=False, float_format="%.17g")

    summary = {"out": str(out), "threshold": fit.threshold, "method": method.value}
    if config.run_test:
        result = test_threshold(fit, config.p)
        test_out = write_json(out.with_name(f"{out.stem}_test.json"), result)
        summary.update({"test_out": str(test_out), "reject": result.reject})
    return summary


def cmd_mc_clt(config: ExperimentConfig) -> Dict[str, Any]:
    """
    sqrt(T)(theta_hat - theta) over stationary paths, estimated at the true
    threshold, against the normal law with covariance sigma^2 Gamma^-1.
    """
    if config.n_paths < 2:
        raise InvalidInputError("mc-clt needs at least two paths")
    constants = gamma_theoretical(config.params)
    cov4 = constants.clt_cov4()
    theta = np.array(config.params.theta)
    spec = config.sim_spec()
    root_T = math.sqrt(spec.T)

    path_ids: List[int] = []
    errors: List[np.ndarray] = []
    degenerate = 0
    reducer = partial(_drift_estimates, config.params, spec.dt)
    for indices, estimates in _blocks(config, spec, "mc-clt", reducer):
        for index, estimate in zip(indices, estimates):
            if estimate is None:
                degenerate += 1
                continue
            path_ids.append(index)
            errors.append(root_T * (np.array(estimate) - theta))
    if len(errors) < 2:
        raise NoValidCandidateError(f"Only {len(errors)} of {config.n_paths} paths gave a drift estimate")

    errors = np.vstack(errors)
    scale = np.sqrt(np.diag(cov4))
    standardized = errors / scale
    frame = pd.DataFrame(standardized, columns=[f"z_{name}" for name in THETA_NAMES])
    frame.insert(0, "path_id", path_ids)
    for k, name in enumerate(THETA_NAMES):
        frame[f"e_{name}"] = errors[:, k]
    out = Path(config.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out, index=False, float_format="%.17g")

    empirical = np.cov(errors, rowvar=False)
    ks = {}
    for k, name in enumerate(THETA_NAMES):
        result = sps.kstest(standardized[:, k], "norm")
        ks[name] = {
            "statistic": float(result.statistic),
            "pvalue": float(result.pvalue),
            "passes_1pct": bool(result.pvalue >= 0.01),
        }
    diag_rel = np.abs(np.diag(empirical) - np.diag(cov4)) / np.diag(cov4)
    summary = {
        "schema_version": SCHEMA_VERSION,
        "kind": "mc_clt_summary",
        "params": config.params.model_dump(),
        "T": spec.T,
        "N": spec.N,
        "n_paths": config.n_paths,
        "n_used": len(path_ids),
        "n_degenerate": degenerate,
        "seed": config.seed,
        "theoretical_cov": {side: constants.clt_cov(side).tolist() for side in SIDES},
        "theoretical_cov4": cov4.tolist(),
        "empirical_cov4": empirical.tolist(),
        "max_rel_diag_diff": float(diag_rel.max()),
        "ks": ks,
    }
    write_json(summary_path(out), summary)
    logger.info(f"mc-clt: {len(path_ids)} paths, min KS p-value {min(v['pvalue'] for v in ks.values()):.4f}")
    return summary


def cmd_invariant_density(config: ExperimentConfig) -> Dict[str, Any]:
    """Terminal values of n_paths paths against the stationary law"""
    dist = stationary_dist(config.params)
    spec = config.sim_spec()
    terminal = np.empty(config.n_paths)
    for indices, values in _blocks(config, spec, "invariant-density", _terminal_values):
        terminal[np.asarray(indices)] = values

    ks = sps.kstest(terminal, dist.cdf)
    hist, edges = np.histogram(terminal, bins=config.bins, density=True)
    centers = 0.5 * (edges[:-1] + edges[1:])
    frame = pd.DataFrame({
        "x": centers,
        "mu": np.asarray(dist.density(centers)),
        "empirical": hist,
        "bin_left": edges[:-1],
        "bin_right": edges[1:],
    })
    out = Path(config.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out, index=False, float_format="%.17g")

    maxima = local_maxima(dist)
    summary = {
        "schema_version": SCHEMA_VERSION,
        "kind": "invariant_density_summary",
        "params": config.params.model_dump(),
        "T": spec.T,
        "N": spec.N,
        "n_paths": config.n_paths,
        "seed": config.seed,
        "ks_statistic": float(ks.statistic),
        "ks_pvalue": float(ks.pvalue),
        "weight_plus": dist.weight_plus,
        "local_maxima": maxima,
        "bimodal": len(maxima) >= 2,
        "histogram_mass": float(np.sum(hist * np.diff(edges))),
    }
    write_json(summary_path(out), summary)
    logger.info(f"invariant-density: KS={ks.statistic:.4f}, {len(maxima)} local maxima")
    return summary


def _loglog_slope(ns: List[int], gaps: List[float]) -> Optional[float]:
    points = [(n, g) for n, g in zip(ns, gaps) if g > 0 and math.isfinite(g)]
    if len(points) < 2:
        return None
    x, y = np.log(np.array(points)).T
    return float(np.polyfit(x, y, 1)[0])


def cmd_rate_study(config: ExperimentConfig) -> Dict[str, Any]:
    """
    Gaps between estimators on subsampled grids and on the finest grid, as a
    function of N, with fitted log-log slopes.
    """
    n_ref = config.n_ref
    ladder = [n for n in config.ladder if n <= n_ref]
    bad = [n for n in ladder if n_ref % n]
    if bad or not ladder:
        raise InvalidInputError(f"Every ladder level must divide n_ref={n_ref}; offending: {bad or config.ladder}")
    if ladder[-1] != n_ref:
        ladder.append(n_ref)

    spec = config.sim_spec(N=n_ref)
    reducer = partial(_rate_gaps, config.params, spec.dt, ladder, n_ref)
    paths: List[PathGaps] = []
    for _, gaps in _blocks(config, spec, "rate-study", reducer):
        paths.extend(gaps)

    # (n_paths, len(ladder)) arrays
    lt_gap = np.array([g.local_time for g in paths])
    lt_pred = np.array([g.predicted_local_time for g in paths])
    est_gap = np.array([g.estimator for g in paths])
    scales = np.array([g.scale_norm for g in paths if g.scale_norm is not None])

    rows = []
    for k, n in enumerate(ladder):
        usable = est_gap[:, k][np.isfinite(est_gap[:, k])]
        rows.append({
            "N": n,
            "median_estimator_gap": float(np.median(usable)) if usable.size else math.nan,
            "mean_estimator_gap": float(usable.mean()) if usable.size else math.nan,
            "median_local_time_gap": float(np.median(lt_gap[:, k])),
            "mean_local_time_gap": float(lt_gap[:, k].mean()),
            "predicted_local_time_gap": float(lt_pred[:, k].mean()),
            "predicted_estimator_scale": float(scales.mean()) * n ** -0.25 if scales.size else math.nan,
            "n_estimator_paths": int(usable.size),
        })
    frame = pd.DataFrame(rows)
    out = Path(config.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out, index=False, float_format="%.17g")

    coarse_rows = [row for row in rows if row["N"] < n_ref]
    ns = [row["N"] for row in coarse_rows]
    summary = {
        "schema_version": SCHEMA_VERSION,
        "kind": "rate_study_summary",
        "params": config.params.model_dump(),
        "T": spec.T,
        "n_ref": n_ref,
        "ladder": ladder,
        "n_paths": config.n_paths,
        "seed": config.seed,
        "local_time_slope": _loglog_slope(ns, [row["mean_local_time_gap"] for row in coarse_rows]),
        "estimator_slope": _loglog_slope(ns, [row["median_estimator_gap"] for row in coarse_rows]),
        "estimator_slope_mean": _loglog_slope(ns, [row["mean_estimator_gap"] for row in coarse_rows]),
        "theory_slope": -0.25,
    }
    write_json(summary_path(out), summary)
    logger.info(f"rate-study: local-time slope {summary['local_time_slope']}, estimator slope {summary['estimator_slope']}")
    return summary


def cmd_rates(config: ExperimentConfig) -> Dict[str, Any]:
    """Full pipeline on a `date,value` rate file"""
    if not config.input:
        raise InvalidInputError("rates needs --input pointing to a date,value CSV")
    series = parse_rate_series(config.input, config.dt_months)
    methods = [config.method] if config.method else [Method.MLE, Method.QMLE]
    report = run_rates_pipeline(series, config.grid, config.p, methods, config.last)
    write_json(config.out, report)
    return report
