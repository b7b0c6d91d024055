"""
Threshold OU - Configuration
Default settings, environment overrides and experiment configuration loading
"""

import json
import os
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv

from threshold_ou.core.exceptions import InvalidInputError

load_dotenv()

ENV_PREFIX = "THRESHOLD_OU_"

# Default Settings
DEFAULT_SETTINGS: Dict[str, Any] = {
    # Random streams
    "SEED": 20240101,

    # Threshold search
    "DELTA": 0.15,
    "N_POINTS": 200,
    "PERCENTILE_METHOD": "nearest_rank",
    "DET_EPS_FACTOR": 1e-12,

    # Testing
    "P_LEVEL": 0.95,

    # Rate data
    "DT_MONTHS": 0.046,

    # Simulation
    "DIVERGENCE_BOUND": 1e12,
    "NOISE_CHUNK": 4096,
    "PATH_CHUNK": 50,
    "N_WORKERS": 1,

    # Quadrature
    "QUAD_ABS_TOL": 1e-10,
    "QUAD_MAX_SUBDIVISIONS": 200,

    # Logging
    "LOG_LEVEL": "INFO",
}

# Simulation parameters used throughout the Monte Carlo experiments
DEFAULT_PARAMS: Dict[str, float] = {
    "r": 0.01,
    "b_minus": -0.002,
    "b_plus": 0.003,
    "a_minus": 0.1,
    "a_plus": 0.11,
    "sigma_minus": 0.011,
    "sigma_plus": 0.01,
}
DEFAULT_X0 = -0.02


def _coerce(value: str, default: Any) -> Any:
    """Convert an environment string to the type of the default"""
    if isinstance(default, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def get_settings() -> Dict[str, Any]:
    """Get the merged settings: defaults overridden by THRESHOLD_OU_* environment variables"""
    settings = dict(DEFAULT_SETTINGS)
    for key, default in DEFAULT_SETTINGS.items():
        raw = os.getenv(ENV_PREFIX + key)
        if raw is None:
            continue
        try:
            settings[key] = _coerce(raw, default)
        except ValueError:
            raise InvalidInputError(f"Environment variable {ENV_PREFIX + key}={raw!r} is not a valid {type(default).__name__}")
    validate_settings(settings)
    return settings


def validate_settings(settings: Dict[str, Any]) -> None:
    """Reject settings outside their legal ranges"""
    if not 0.0 < settings["DELTA"] < 0.5:
        raise InvalidInputError(f"DELTA must lie in (0, 0.5), got {settings['DELTA']}")
    if settings["N_POINTS"] < 1:
        raise InvalidInputError("N_POINTS must be at least 1")
    if not 0.0 < settings["P_LEVEL"] < 1.0:
        raise InvalidInputError(f"P_LEVEL must lie in (0, 1), got {settings['P_LEVEL']}")
    if settings["PERCENTILE_METHOD"] not in ("nearest_rank", "linear"):
        raise InvalidInputError(f"Unknown PERCENTILE_METHOD {settings['PERCENTILE_METHOD']!r}")
    if settings["QUAD_ABS_TOL"] <= 0:
        raise InvalidInputError("QUAD_ABS_TOL must be positive")
    if settings["QUAD_MAX_SUBDIVISIONS"] < 1:
        raise InvalidInputError("QUAD_MAX_SUBDIVISIONS must be at least 1")
    if settings["N_WORKERS"] < 1 or settings["PATH_CHUNK"] < 1 or settings["NOISE_CHUNK"] < 1:
        raise InvalidInputError("N_WORKERS, PATH_CHUNK and NOISE_CHUNK must be positive")


def get_search_config() -> Dict[str, Any]:
    """Get threshold search configuration"""
    settings = get_settings()
    return {
        "delta": settings["DELTA"],
        "n_points": settings["N_POINTS"],
        "percentile_method": settings["PERCENTILE_METHOD"],
        "det_eps_factor": settings["DET_EPS_FACTOR"],
    }


def get_quadrature_config() -> Dict[str, Any]:
    """Get default tolerances for half-line quadrature"""
    settings = get_settings()
    return {
        "abs_tol": settings["QUAD_ABS_TOL"],
        "max_subdivisions": settings["QUAD_MAX_SUBDIVISIONS"],
    }


def get_simulation_config() -> Dict[str, Any]:
    """Get simulation engine configuration"""
    settings = get_settings()
    return {
        "divergence_bound": settings["DIVERGENCE_BOUND"],
        "noise_chunk": settings["NOISE_CHUNK"],
        "path_chunk": settings["PATH_CHUNK"],
        "n_workers": settings["N_WORKERS"],
    }


def read_config_file(path: Optional[str]) -> Dict[str, Any]:
    """Read a JSON config file; missing path means no overrides"""
    if not path:
        return {}
    config_path = Path(path)
    if not config_path.exists():
        raise InvalidInputError(f"Config file not found: {path}")
    try:
        with config_path.open("r", encoding="utf-8") as handle:
            data = json.load(handle)
    except json.JSONDecodeError as e:
        raise InvalidInputError(f"Config file {path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise InvalidInputError(f"Config file {path} must hold a JSON object")
    return data


def merge_overrides(base: Dict[str, Any], *layers: Dict[str, Any]) -> Dict[str, Any]:
    """Merge override layers left to right, skipping None values (later layers win)"""
    merged = dict(base)
    for layer in layers:
        for key, value in layer.items():
            if value is None:
                continue
            if isinstance(value, dict) and isinstance(merged.get(key), dict):
                merged[key] = merge_overrides(merged[key], value)
            else:
                merged[key] = value
    return merged


if __name__ == "__main__":
    print("Threshold OU - Configuration")
    print("=" * 50)
    for key, value in get_settings().items():
        print(f"{key}: {value}")
