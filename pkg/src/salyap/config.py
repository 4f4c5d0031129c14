"""Experiment configuration: one INI file per experiment, flat sections named
after the module whose knobs they hold.

Scalars are plain text (floats serialized with repr, so a save/load cycle is
lossless), vectors and parameter blocks are JSON.  Unknown sections or keys
are rejected: a typo should fail loudly, not silently fall back to a
default.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .core import SampleGrid, make_comparator, make_field
from .lyapunov import make_lyapunov
from .sa_engine import NoiseModel, StepSchedule

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "save_config",
    "build_field",
    "build_noise",
    "build_schedule",
    "build_bounded_schedule",
    "build_V",
    "build_comparator",
    "build_grid",
]


class ConfigError(Exception):
    """Malformed configuration or a reference to an unregistered name."""


@dataclass
class ExperimentConfig:
    """Typed view of one experiment file; every field has a serializable
    default so partial files are valid."""

    # [core]
    field_name: str = "linear"
    field_params: dict = dc_field(default_factory=dict)
    theta_star: list | None = None

    # [sa_engine]
    theta0: list = dc_field(default_factory=lambda: [0.0])
    schedule: str = "power_law"
    c: float = 0.5
    t0: float = 1.0
    p: float = 1.0
    p_bounded: float | None = None
    custom_values: list | None = None
    noise: str = "zero"
    sigma: float = 0.0
    T_steps: int = 1000
    n_seeds: int = 1
    stride: int | None = None
    record_v: bool = True

    # [lyapunov]
    V: str | None = None
    V_params: dict = dc_field(default_factory=dict)
    phi: str | None = None
    phi_params: dict = dc_field(default_factory=dict)
    eta: str | None = None
    eta_params: dict = dc_field(default_factory=dict)
    psi: str | None = None
    psi_params: dict = dc_field(default_factory=dict)
    checks: list = dc_field(default_factory=list)
    sandwich_a: float | None = None
    sandwich_b: float | None = None
    hessian_M: float | None = None
    f4_K: float | None = None
    grad_L: float | None = None
    kappa: float | None = None
    horizon: float | None = None
    mu: float | None = None
    gamma: float | None = None
    quad_nodes: int = 256
    grid_r_min: float = 0.01
    grid_r_max: float = 100.0
    grid_shells: int = 16
    grid_points_per_shell: int = 8
    grid_seed: int = 714025

    # [analysis]
    mode: str = "single"
    checkpoints: int = 20
    n_resamples: int = 1000
    rs_paths: int = 0
    cap_factor: float = 1e6
    M_scale: float = 1.0

    # [cli]
    output_dir: str = "out"
    master_seed: int = 0
    sweep_p: list = dc_field(default_factory=list)
    sweep_sigma: list = dc_field(default_factory=list)


# key -> (section, codec); codecs: str/int/float/bool plain, json for blocks
_SECTIONS = {
    "core": {
        "field": ("field_name", "str"),
        "field_params": ("field_params", "json"),
        "theta_star": ("theta_star", "json"),
    },
    "sa_engine": {
        "theta0": ("theta0", "json"),
        "schedule": ("schedule", "str"),
        "c": ("c", "float"),
        "t0": ("t0", "float"),
        "p": ("p", "float"),
        "p_bounded": ("p_bounded", "float"),
        "custom_values": ("custom_values", "json"),
        "noise": ("noise", "str"),
        "sigma": ("sigma", "float"),
        "t_steps": ("T_steps", "int"),
        "n_seeds": ("n_seeds", "int"),
        "stride": ("stride", "int"),
        "record_v": ("record_v", "bool"),
    },
    "lyapunov": {
        "v": ("V", "str"),
        "v_params": ("V_params", "json"),
        "phi": ("phi", "str"),
        "phi_params": ("phi_params", "json"),
        "eta": ("eta", "str"),
        "eta_params": ("eta_params", "json"),
        "psi": ("psi", "str"),
        "psi_params": ("psi_params", "json"),
        "checks": ("checks", "list"),
        "sandwich_a": ("sandwich_a", "float"),
        "sandwich_b": ("sandwich_b", "float"),
        "hessian_m": ("hessian_M", "float"),
        "f4_k": ("f4_K", "float"),
        "grad_l": ("grad_L", "float"),
        "kappa": ("kappa", "float"),
        "horizon": ("horizon", "float"),
        "mu": ("mu", "float"),
        "gamma": ("gamma", "float"),
        "quad_nodes": ("quad_nodes", "int"),
        "grid_r_min": ("grid_r_min", "float"),
        "grid_r_max": ("grid_r_max", "float"),
        "grid_shells": ("grid_shells", "int"),
        "grid_points_per_shell": ("grid_points_per_shell", "int"),
        "grid_seed": ("grid_seed", "int"),
    },
    "analysis": {
        "mode": ("mode", "str"),
        "checkpoints": ("checkpoints", "int"),
        "n_resamples": ("n_resamples", "int"),
        "rs_paths": ("rs_paths", "int"),
        "cap_factor": ("cap_factor", "float"),
        "m_scale": ("M_scale", "float"),
    },
    "cli": {
        "output_dir": ("output_dir", "str"),
        "master_seed": ("master_seed", "int"),
        "sweep_p": ("sweep_p", "json"),
        "sweep_sigma": ("sweep_sigma", "json"),
    },
}

_VALID_MODES = ("single", "division_of_labor")
_VALID_CHECKS = ("sandwich", "generalized_sandwich", "decay", "hessian_bound",
                 "F4", "gradient_linear_bound")


def _decode(raw: str, codec: str, where: str):
    raw = raw.strip()
    try:
        if codec == "str":
            return raw
        if codec == "int":
            return int(raw)
        if codec == "float":
            return float(raw)
        if codec == "bool":
            if raw.lower() in ("true", "yes", "1", "on"):
                return True
            if raw.lower() in ("false", "no", "0", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if codec == "json":
            return json.loads(raw)
        if codec == "list":
            return [tok.strip() for tok in raw.split(",") if tok.strip()]
    except (ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r} ({exc})") from None
    raise AssertionError(f"unknown codec {codec}")


def _encode(value, codec: str) -> str:
    if codec == "str":
        return str(value)
    if codec == "int":
        return str(int(value))
    if codec == "float":
        return repr(float(value))
    if codec == "bool":
        return "true" if value else "false"
    if codec == "json":
        return json.dumps(value)
    if codec == "list":
        return ", ".join(value)
    raise AssertionError(f"unknown codec {codec}")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such config file: {path}")
    cp = configparser.ConfigParser()
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None

    cfg = ExperimentConfig()
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(
                f"{path}: unknown section [{section}]; expected {sorted(_SECTIONS)}")
        keymap = _SECTIONS[section]
        for key, raw in cp.items(section):
            if key not in keymap:
                raise ConfigError(
                    f"{path}: unknown key {key!r} in [{section}]; "
                    f"expected one of {sorted(keymap)}")
            attr, codec = keymap[key]
            setattr(cfg, attr, _decode(raw, codec, f"{path} [{section}] {key}"))
    _validate(cfg, path)
    return cfg


def _validate(cfg: ExperimentConfig, path) -> None:
    if cfg.mode not in _VALID_MODES:
        raise ConfigError(f"{path}: mode must be one of {_VALID_MODES}")
    bad = [c for c in cfg.checks if c not in _VALID_CHECKS]
    if bad:
        raise ConfigError(f"{path}: unknown checks {bad}; expected {_VALID_CHECKS}")
    for name in ("T_steps", "n_seeds", "checkpoints", "n_resamples", "quad_nodes",
                 "grid_shells", "grid_points_per_shell"):
        if getattr(cfg, name) < 1:
            raise ConfigError(f"{path}: {name} must be >= 1")
    if cfg.rs_paths < 0:
        raise ConfigError(f"{path}: rs_paths must be >= 0")
    if not cfg.cap_factor > 0:
        raise ConfigError(f"{path}: cap_factor must be > 0")
    if cfg.mode == "division_of_labor" and cfg.p_bounded is None:
        raise ConfigError(f"{path}: division_of_labor mode needs p_bounded")


def save_config(cfg: ExperimentConfig, path) -> None:
    """Write every field in canonical section order; None fields are omitted
    and fall back to defaults on reload, so load(save(load(f))) == load(f)."""
    cp = configparser.ConfigParser()
    for section, keymap in _SECTIONS.items():
        cp.add_section(section)
        for key, (attr, codec) in keymap.items():
            value = getattr(cfg, attr)
            if value is None:
                continue
            cp.set(section, key, _encode(value, codec))
    with open(path, "w") as fh:
        cp.write(fh)


# ---------------------------------------------------------------------------
# builders: registry lookups with config-level error reporting

def build_field(cfg: ExperimentConfig):
    try:
        return make_field(cfg.field_name, cfg.field_params)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def build_noise(cfg: ExperimentConfig) -> NoiseModel:
    try:
        return NoiseModel(kind=cfg.noise, sigma=cfg.sigma)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_schedule(cfg: ExperimentConfig, p: float | None = None) -> StepSchedule:
    try:
        if cfg.schedule == "power_law":
            return StepSchedule.power_law(cfg.c, cfg.t0, cfg.p if p is None else p)
        if cfg.schedule == "constant":
            return StepSchedule.constant(cfg.c)
        if cfg.schedule == "custom":
            if not cfg.custom_values:
                raise ConfigError("custom schedule needs custom_values")
            return StepSchedule.custom(cfg.custom_values)
        raise ConfigError(f"unknown schedule family {cfg.schedule!r}")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_bounded_schedule(cfg: ExperimentConfig) -> StepSchedule:
    if cfg.p_bounded is None:
        raise ConfigError("p_bounded is not set")
    return build_schedule(cfg, p=cfg.p_bounded)


def build_V(cfg: ExperimentConfig, dim: int, theta_star):
    if cfg.V is None:
        return None
    try:
        return make_lyapunov(cfg.V, cfg.V_params, dim, theta_star)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def build_comparator(name: str | None, params: dict):
    if name is None:
        return None
    try:
        return make_comparator(name, params)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def build_grid(cfg: ExperimentConfig, center) -> SampleGrid:
    if not 0.0 < cfg.grid_r_min <= cfg.grid_r_max:
        raise ConfigError("need 0 < grid_r_min <= grid_r_max")
    radii = np.geomspace(cfg.grid_r_min, cfg.grid_r_max, cfg.grid_shells)
    return SampleGrid(center=np.asarray(center, dtype=float), radii=tuple(radii),
                      points_per_shell=cfg.grid_points_per_shell,
                      rng_seed=cfg.grid_seed)
