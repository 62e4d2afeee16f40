# Path: subtrack/settings.py
# Purpose: Env-file loading and SUBTRACK_* knob helpers.
# Version: 0.4.0

import os
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv

ENV_PREFIX = "SUBTRACK_"
_loaded = False


def load_env(force: bool = False) -> Optional[str]:
    """Load ENV_FILE, else .env.subtrack, else .env. Returns the file used."""
    global _loaded
    if _loaded and not force:
        return None
    _loaded = True
    env_file = os.getenv("ENV_FILE", "")
    if env_file and Path(env_file).exists():
        load_dotenv(env_file, override=True)
        return env_file
    for candidate in (".env.subtrack", ".env"):
        if Path(candidate).exists():
            load_dotenv(candidate, override=True)
            return candidate
    return None


def _env_first(*keys: str, default: Optional[str] = None) -> Optional[str]:
    for k in keys:
        v = os.getenv(k)
        if v is not None and str(v).strip() != "":
            return v
    return default


def _env_true(name: str, default: bool = False) -> bool:
    raw = _env_first(name)
    if raw is None:
        return bool(default)
    return raw.strip().lower() in ("1", "true", "yes", "y", "on")


def _env_int(name: str, default: Optional[int] = None) -> Optional[int]:
    raw = _env_first(name)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        return default


def _env_float(name: str, default: Optional[float] = None) -> Optional[float]:
    raw = _env_first(name)
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError:
        return default


# field name -> (env suffix, parser)
_HYPER_KNOBS = {
    "lambda": ("LAMBDA", _env_float),
    "C": ("C", _env_float),
    "eta_max": ("ETA_MAX", _env_float),
    "eta_min": ("ETA_MIN", _env_float),
    "eta0": ("ETA0", _env_float),
    "f": ("F", _env_float),
    "sigmoid_slope": ("SIGMOID_SLOPE", _env_float),
    "inner_tol": ("INNER_TOL", _env_float),
    "inner_max_iters": ("INNER_MAX_ITERS", _env_int),
    "reorthonormalize_every": ("REORTH_EVERY", _env_int),
    "rank_tol": ("RANK_TOL", _env_float),
}


def hyperparam_env_overrides() -> Dict[str, Any]:
    """Hyperparams fields set through SUBTRACK_* variables."""
    out: Dict[str, Any] = {}
    for field, (suffix, parse) in _HYPER_KNOBS.items():
        v = parse(ENV_PREFIX + suffix)
        if v is not None:
            out[field] = v
    mode = _env_first(ENV_PREFIX + "SIGMOID")
    if mode:
        out["sigmoid_mode"] = mode.strip().lower()
    for field, suffix in (("warm_start", "WARM_START"), ("skip_on_rank_fail", "SKIP_ON_RANK_FAIL")):
        if _env_first(ENV_PREFIX + suffix) is not None:
            out[field] = _env_true(ENV_PREFIX + suffix)
    return out


def log_level_from_env(default: str = "WARNING") -> str:
    return (_env_first(ENV_PREFIX + "LOG_LEVEL", default=default) or default).upper()
