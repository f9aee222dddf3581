"""Flat key=value mission configuration.

Every tunable constant of the pipeline lives in one dictionary so a run
manifest can dump the complete effective configuration. Values are coerced
to the type of their default; unknown keys are rejected.
"""

from __future__ import annotations

import hashlib
import json

from .field import FieldSpec
from .sim import MissionParams, SimConfig


class ConfigError(ValueError):
    pass


DEFAULTS = {
    # field generation
    "n_rows": 4,
    "row_orientation": 0.3,
    "row_length": 15.0,
    "inter_row_spacing": 1.5,
    "plant_radius_min": 0.15,
    "plant_radius_max": 0.30,
    "plant_spacing": 0.75,
    "hole_probability": 0.0,
    "curvature": 0.0,
    "resolution": 0.1,
    "geo_lat": 45.0,
    "geo_lon": 7.6,
    "grid_margin": 8.0,
    # waypoint map
    "k": 8,
    "c_thr": 0.9,
    "d_thr": 8.0,
    # predictor-noise model (zero = exact oracle)
    "conf_noise": 0.0,
    "offset_noise": 0.0,
    "spurious_rate": 0.0,
    "dropout_rate": 0.0,
    # planner
    "d_er": 20.0,          # px
    "d_safe": 4.0,         # px
    "path_step": 0.1,      # m
    # row controller
    "window": 4,
    "d_depth": 5.0,
    "ema_alpha": 0.18,
    "omega_gain": 0.01,
    "ctl_v_max": 1.0,
    # navigation
    "waypoint_th": 0.5,
    "lookahead": 1.0,
    "v_ref": 0.5,
    "ekf_sigma_xy": 0.02,
    "ekf_sigma_yaw": 0.01,
    # simulator
    "dt": 1.0 / 30.0,
    "img_size": 224,
    "fov": 1.2,
    "cam_range": 10.0,
    "plant_height": 1.8,
    "sigma_gnss_open": 0.08,
    "sigma_gnss_row": 1.0,
    "sigma_compass": 0.01,
    "wheel_noise": 0.01,
    "sim_v_max": 0.5,
    "omega_max": 1.5,
    "gnss_every": 3,
    # run
    "policy": "hybrid",
    "seed": 0,
}

_RANGES = {
    "c_thr": (0.0, 1.0),
    "hole_probability": (0.0, 1.0),
    "ema_alpha": (1e-9, 1.0),
    "dropout_rate": (0.0, 1.0),
    "spurious_rate": (0.0, 1.0),
}


def parse_config_file(path) -> dict:
    """Read `key = value` lines; '#' starts a comment, blanks ignored."""
    out = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def _coerce(key: str, value):
    if key not in DEFAULTS:
        raise ConfigError(f"unknown config key {key!r}")
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            return str(value).lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return str(value)


def effective_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the config file, then explicit overrides."""
    cfg = dict(DEFAULTS)
    if path is not None:
        for k, v in parse_config_file(path).items():
            cfg[k] = _coerce(k, v)
    for k, v in (overrides or {}).items():
        if v is not None:
            cfg[k] = _coerce(k, v)
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    for key, (lo, hi) in _RANGES.items():
        if not lo <= cfg[key] <= hi:
            raise ConfigError(f"{key}={cfg[key]} outside [{lo}, {hi}]")
    if cfg["policy"] not in ("hybrid", "gnss_only"):
        raise ConfigError(f"policy must be hybrid or gnss_only, "
                          f"got {cfg['policy']!r}")
    if cfg["plant_radius_min"] > cfg["plant_radius_max"]:
        raise ConfigError("plant_radius_min > plant_radius_max")
    for key in ("n_rows", "row_length", "inter_row_spacing", "plant_spacing",
                "resolution", "dt", "img_size", "v_ref", "lookahead"):
        if cfg[key] <= 0:
            raise ConfigError(f"{key} must be positive")


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def field_spec_from(cfg: dict, seed: int | None = None) -> FieldSpec:
    spec = FieldSpec(
        n_rows=cfg["n_rows"],
        row_orientation=cfg["row_orientation"],
        row_length=cfg["row_length"],
        inter_row_spacing=cfg["inter_row_spacing"],
        plant_radius_range=(cfg["plant_radius_min"], cfg["plant_radius_max"]),
        plant_spacing=cfg["plant_spacing"],
        hole_probability=cfg["hole_probability"],
        curvature=cfg["curvature"],
        resolution=cfg["resolution"],
        geo_origin=(cfg["geo_lat"], cfg["geo_lon"]),
        rng_seed=cfg["seed"] if seed is None else seed,
    )
    return spec.fitted(margin=cfg["grid_margin"])


def sim_config_from(cfg: dict, seed: int | None = None) -> SimConfig:
    return SimConfig(
        dt=cfg["dt"], img_size=cfg["img_size"], fov=cfg["fov"],
        cam_range=cfg["cam_range"], plant_height=cfg["plant_height"],
        sigma_gnss_open=cfg["sigma_gnss_open"],
        sigma_gnss_row=cfg["sigma_gnss_row"],
        sigma_compass=cfg["sigma_compass"], wheel_noise=cfg["wheel_noise"],
        v_max=cfg["sim_v_max"], omega_max=cfg["omega_max"],
        gnss_every=cfg["gnss_every"],
        seed=cfg["seed"] if seed is None else seed,
    )


def mission_params_from(cfg: dict) -> MissionParams:
    return MissionParams(
        waypoint_th=cfg["waypoint_th"], lookahead=cfg["lookahead"],
        v_ref=cfg["v_ref"], ekf_sigma_xy=cfg["ekf_sigma_xy"],
        ekf_sigma_yaw=cfg["ekf_sigma_yaw"], ctl_window=cfg["window"],
        ctl_depth_gate=cfg["d_depth"], ctl_ema_alpha=cfg["ema_alpha"],
        ctl_v_max=cfg["ctl_v_max"], ctl_omega_gain=cfg["omega_gain"],
    )
