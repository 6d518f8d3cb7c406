"""Run configuration: one JSON file with nested sections.

Every "auto" policy is resolved to a concrete value before use and echoed
in the report header, so a run is reproducible from its own output.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from .hilbert import StieltjesKernel
from .models import build_preset, preset_names
from .semigroup import LinearDelayModel

__all__ = ["ConfigError", "load_config", "model_from_config", "DEFAULTS"]


class ConfigError(ValueError):
    pass


DEFAULTS: Dict[str, Any] = {
    "m": 2,
    "discretization": {"n_grid": 100, "dt": None},
    "spectrum": {"window": {"re_min": -4.0, "re_max": 1.0, "im_max": 60.0}, "max_roots": 64, "floor": 0.0},
    "sweep": {
        "nu0": "auto",
        "omega_max": "auto",
        "delta_omega": 0.25,
        "n_control": 8,
        "n_measure": 8,
        "horizon": 120.0,
        "lambda": "auto-from-preset",
        "safety_factor": 2.0,
    },
    "simulate": {"t_end": 10.0, "initial": "ones", "offset": 0.1, "with_gain": True},
    "structural": {"t_final": 2.0, "grids": [50, 100, 200], "nu": 0.0},
    "oracle": {"n_grid": 64, "horizon": 80.0, "p_re": -0.05, "p_im": 1.0, "break_trace_coupling": False},
    "output": {"csv": True, "json": True, "plots": True},
    "jobs": 1,
    "seed": 0,
}


def _merge(base: dict, extra: dict, path: str = "") -> dict:
    out = dict(base)
    for key, val in extra.items():
        if key in out and isinstance(out[key], dict) and isinstance(val, dict):
            out[key] = _merge(out[key], val, f"{path}{key}.")
        else:
            out[key] = val
    return out


def load_config(path: str | Path) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    cfg = _merge(DEFAULTS, raw)
    if "model" not in cfg:
        raise ConfigError(f"{path}: missing required section 'model'")
    _validate(cfg, path)
    return cfg


def _require_positive(cfg_val, name, path):
    try:
        v = float(cfg_val)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: {name} must be a number, got {cfg_val!r}")
    if v <= 0:
        raise ConfigError(f"{path}: {name} must be positive, got {v}")
    return v


def _validate(cfg: dict, path) -> None:
    model = cfg["model"]
    if "preset" in model:
        if model["preset"] not in preset_names():
            raise ConfigError(f"{path}: model.preset {model['preset']!r} unknown; choose from {preset_names()}")
    elif "raw" not in model:
        raise ConfigError(f"{path}: model must contain 'preset' or 'raw'")
    m = cfg["m"]
    if not isinstance(m, int) or not 1 <= m <= 3:
        raise ConfigError(f"{path}: m must be an integer in 1..3, got {m!r}")
    _require_positive(cfg["discretization"]["n_grid"], "discretization.n_grid", path)
    sweep = cfg["sweep"]
    if sweep["nu0"] != "auto":
        _require_positive(sweep["nu0"], "sweep.nu0", path)
    if sweep["omega_max"] != "auto":
        _require_positive(sweep["omega_max"], "sweep.omega_max", path)
    _require_positive(sweep["delta_omega"], "sweep.delta_omega", path)
    for key in ("n_control", "n_measure"):
        if int(sweep[key]) < 1:
            raise ConfigError(f"{path}: sweep.{key} must be >= 1")
    if sweep["lambda"] != "auto-from-preset":
        lam = float(sweep["lambda"])
        if lam < 0:
            raise ConfigError(f"{path}: sweep.lambda must be nonnegative")
    if int(cfg["jobs"]) < 1:
        raise ConfigError(f"{path}: jobs must be >= 1")


def _kernel_from_config(spec: dict, tau: float, out_dim: int, in_dim: int, where: str) -> StieltjesKernel:
    atoms = []
    for entry in spec.get("atoms", []):
        try:
            atoms.append((float(entry["theta"]), np.atleast_2d(np.asarray(entry["matrix"], dtype=float))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: malformed atom entry {entry!r}: {exc}")
    density = None
    if "density" in spec and spec["density"] is not None:
        table = spec["density"]
        thetas = np.asarray(table["thetas"], dtype=float)
        values = np.asarray(table["values"], dtype=float)
        if values.ndim == 1:
            values = values[:, None, None]
        if len(thetas) != len(values):
            raise ConfigError(f"{where}: density table lengths differ")
        order = np.argsort(thetas)
        thetas, values = thetas[order], values[order]

        def density(theta, thetas=thetas, values=values):
            idx = int(np.clip(np.searchsorted(thetas, theta, side="right") - 1, 0, len(thetas) - 1))
            return values[idx]

    return StieltjesKernel(tuple(atoms), out_dim, in_dim, tau, density)


def model_from_config(cfg: dict):
    """Build (model, preset_report) from the config model section."""
    section = cfg["model"]
    if "preset" in section:
        params = dict(section.get("params", {}))
        model, report = build_preset(section["preset"], **params)
        overrides = section.get("overrides", {})
        if "lambda" in overrides:
            model = LinearDelayModel(
                model.n, model.tau, model.alpha, model.b_tilde, model.c_kernel,
                float(overrides["lambda"]), model.gain, model.name,
            )
            report["lambda_gain"] = float(overrides["lambda"])
        return model, report
    raw = section["raw"]
    try:
        n = int(raw["n"])
        tau = float(raw["tau"])
        alpha = _kernel_from_config(raw["alpha"], tau, n, n, "model.raw.alpha")
        b_tilde = np.atleast_2d(np.asarray(raw.get("b_tilde", [[1.0]]), dtype=float))
        r2 = len(np.atleast_2d(raw["c"]["atoms"][0]["matrix"])) if raw.get("c", {}).get("atoms") else 1
        c_kernel = _kernel_from_config(raw.get("c", {"atoms": []}), tau, r2, n, "model.raw.c")
        lam = float(raw.get("lambda", 0.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"model.raw: {exc}")
    gain = None
    if "gain_constant" in raw:
        g = np.atleast_2d(np.asarray(raw["gain_constant"], dtype=float))
        gain = lambda t: g
    model = LinearDelayModel(n, tau, alpha, b_tilde, c_kernel, lam, gain, raw.get("name", "raw"))
    return model, {"preset": None, "lambda_gain": lam, "tau": tau}
