"""Experiment configuration: one JSON file with strict schema checking.

Unknown keys are rejected by dotted path; values are type-checked against
the defaults. `apply_overrides` implements the CLI's `--set key=value`
mechanism with JSON-parsed values.
"""

import copy
import json
from pathlib import Path

# Desk-scale defaults. The paper-scale experiment (64x64 images, 1000
# samples/frame, 5000 frames/class, 50000 rounds, batch 64) remains
# reachable through overrides.
DEFAULTS = {
    "seed": 12345,
    "dataset": {
        "gamma_data_db": 10.0,
        "frames_per_class": 300,
        "test_frames_per_class": 60,
        "samples_per_frame": 256,
        "grid": 32,
        "half_range": 1.5,
        "f0t": 0.0,
        "phase_jitter_std": 0.0,
        "fading": "none",
        "normalize": True,
        "normalize_mean": 0.5,
        "normalize_variance": 0.5,
    },
    "train": {
        "method": "splitamc",
        "num_clients": 2,
        "batch_size": 32,
        "rounds": 2000,
        "eta": 0.004,
        "cut": 1,
        "local_steps": 1,
        "eval_every": 0,
        "inference_mode": "local_full_model",
    },
    "link": {
        "transmit_power_w": 0.1,
        "distance_m": 100.0,
        "pathloss_alpha": 2.0,
        "snr_db": 10.0,  # sets noise variance; None: use noise_variance_w directly
        "noise_variance_w": None,
        "fading_mode": "fixed",
        "ul_noisy": True,
        "dl_noisy": False,
    },
    "latency": {
        "bandwidth_hz": 1.0e7,
        "gamma_ul_db": 10.0,
        "gamma_dl_db": None,  # None: R_DL = dl_rate_factor * R_UL
        "dl_rate_factor": 10.0,
        "bits_per_param": 32.0,
        "tau_comp_s": 1e-3,
        "ratios": ["10:1", "1:1", "1:10"],
        "cuts": [1],
        "rounds": None,  # None: train.rounds
    },
    "compare": {
        "methods": ["splitamc", "fedeamc", "centamc"],
        "gamma_data_db": [10.0, 15.0],
        "channel_snr_db": [-10.0, 10.0],
        "fading_modes": ["fixed"],
        "seeds": 3,
    },
}

# keys whose value may be null / replaced by a scalar
_NULLABLE = {
    "link.snr_db",
    "link.noise_variance_w",
    "latency.gamma_dl_db",
    "latency.rounds",
}


class ConfigError(ValueError):
    """Configuration file or override is invalid."""


def _check_value(path: str, value, default):
    if value is None:
        if path in _NULLABLE:
            return value
        raise ConfigError(f"config key '{path}' must not be null")
    if default is None:  # nullable key given a value: accept numbers
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key '{path}' must be a number or null")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"config key '{path}' must be a boolean")
    elif isinstance(default, (int, float)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key '{path}' must be a number")
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"config key '{path}' must be a string")
    elif isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"config key '{path}' must be a list")
    return value


def _merge(base: dict, override: dict, prefix: str = "") -> dict:
    out = {}
    for key, default in base.items():
        path = f"{prefix}{key}"
        if key not in override:
            out[key] = copy.deepcopy(default)
        elif isinstance(default, dict):
            if not isinstance(override[key], dict):
                raise ConfigError(f"config key '{path}' must be an object")
            out[key] = _merge(default, override[key], prefix=f"{path}.")
        else:
            out[key] = _check_value(path, override[key], default)
    for key in override:
        if key not in base:
            raise ConfigError(f"unknown config key: '{prefix}{key}'")
    return out


def resolve(user_cfg: dict) -> dict:
    """Deep-merge a user config over the defaults, rejecting unknown keys."""
    if not isinstance(user_cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return _merge(DEFAULTS, user_cfg)


def load_config(path) -> dict:
    try:
        raw = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        user_cfg = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return resolve(user_cfg)


def apply_overrides(cfg: dict, assignments) -> dict:
    """Apply `--set dotted.key=value` pairs on top of a resolved config."""
    out = copy.deepcopy(cfg)
    for assignment in assignments:
        key, sep, raw = assignment.partition("=")
        if not sep:
            raise ConfigError(f"override '{assignment}' is not of the form key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw  # bare strings allowed
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"unknown config key: '{key}'")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key: '{key}'")
        node[parts[-1]] = value
    return resolve(out)  # revalidates types


def dump_config(cfg: dict, path) -> None:
    Path(path).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
