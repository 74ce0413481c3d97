"""JSON run configuration: defaults, validation and object construction.

One file drives the whole pipeline. Every key has an explicit default (see
``DEFAULTS``); unknown keys are rejected with their dotted path.
"""

from __future__ import annotations

import copy
import json

import numpy as np

from vimpc.errors import UsageError
from vimpc.models import Box, SystemModel, linear_model, orbital_rendezvous
from vimpc.value_iteration import InnerMinConfig, ViConfig

DEFAULTS = {
    "seed": 0,
    "model": {
        "name": "orbital_rendezvous",
        "dt": 0.05,
        "q_diag": [50.0, 50.0, 50.0, 50.0],
        "r_diag": [1.0, 1.0],
        "state_bound": 0.5,
        "input_bound": 2.0,
        "literal_r": False,
        "A": None,
        "B": None,
        "Q": None,
        "R": None,
    },
    "vi": {
        "domain_half_width": 0.12,
        "n_train": 80,
        "n_eval": 1000,
        "max_iterations": 500,
        "target_c_delta": 0.01,
        "origin_guard": 1e-8,
        "degrees": [2, 3],
        "resample_each_iteration": False,
        "inner": {"n_starts": 5, "max_inner_iterations": 200, "grad_tol": 1e-9},
    },
    "certificate": {
        "N_roll": 50,
        "gamma_samples": 200,
        "epsilon_points": 1000,
        "region_grid_density": 11,
        "gamma": None,
        "epsilon": None,
        "V_bar": None,
        "c_e": None,
        "c_delta": None,
        "sweep": True,
        "sweep_lo": 0.01,
        "sweep_hi": 0.97,
        "sweep_steps": 25,
    },
    "mpc": {
        "N": 10,
        "controller": "ADP_MPC",
        "mu": 1e4,
        "tol": 1e-7,
        "max_iter": 2000,
        "warm_start": True,
    },
    "simulate": {"x0": [0.1, 0.1, 0.0, 0.0], "steps": 100},
    "compare": {"runs": []},
    "output": {"directory": "out", "plots": False},
}

# keys whose value may be any JSON (no nested key checking)
_OPAQUE = {"model.A", "model.B", "model.Q", "model.R", "compare.runs"}


def _merge(defaults: dict, user: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    if not isinstance(user, dict):
        raise UsageError(f"{path or 'config'}: expected an object")
    for key, value in user.items():
        kpath = f"{path}.{key}" if path else key
        if key not in defaults:
            raise UsageError(f"unknown config key: {kpath}")
        if isinstance(defaults[key], dict) and kpath not in _OPAQUE:
            out[key] = _merge(defaults[key], value, kpath)
        else:
            out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    user = {}
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from exc
    cfg = _merge(DEFAULTS, user)
    if overrides:
        cfg = _merge(DEFAULTS, _deep_update(cfg, overrides))
    validate(cfg)
    return cfg


def _deep_update(base: dict, upd: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in upd.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_update(out[k], v)
        else:
            out[k] = v
    return out


def _require(cond, keypath, message):
    if not cond:
        raise UsageError(f"{keypath}: {message}")


def validate(cfg: dict):
    _require(isinstance(cfg["seed"], int), "seed", "must be an integer")
    vi = cfg["vi"]
    for key in ("n_train", "n_eval", "max_iterations"):
        _require(isinstance(vi[key], int) and vi[key] > 0, f"vi.{key}", "must be a positive integer")
    _require(vi["target_c_delta"] > 0, "vi.target_c_delta", "must be positive")
    _require(vi["origin_guard"] > 0, "vi.origin_guard", "must be positive")
    mpc = cfg["mpc"]
    _require(isinstance(mpc["N"], int) and mpc["N"] >= 1, "mpc.N", "must be an integer >= 1")
    _require(mpc["controller"] in ("ADP_MPC", "NO_TERMINAL", "LQR_TERMINAL", "RAW_POLICY"),
             "mpc.controller", "unknown controller")
    sim = cfg["simulate"]
    _require(isinstance(sim["steps"], int) and sim["steps"] >= 1, "simulate.steps", "must be >= 1")
    model = build_model(cfg)
    _require(len(sim["x0"]) == model.n, "simulate.x0", f"must have length {model.n}")
    basis_size = _feature_count(model.n, vi["degrees"])
    _require(vi["n_train"] >= basis_size, "vi.n_train",
             f"must be at least the feature count ({basis_size}) of the monomial basis")


def _feature_count(n, degrees):
    from math import comb

    return sum(comb(n + d - 1, d) for d in set(degrees))


def build_model(cfg: dict) -> SystemModel:
    m = cfg["model"]
    if m["name"] == "orbital_rendezvous":
        return orbital_rendezvous(dt=m["dt"], q_diag=m["q_diag"], r_diag=m["r_diag"],
                                  state_bound=m["state_bound"], input_bound=m["input_bound"],
                                  literal_r=m["literal_r"])
    if m["name"] == "linear":
        for key in ("A", "B", "Q", "R"):
            _require(m[key] is not None, f"model.{key}", "required for a linear model")
        B = np.atleast_2d(np.asarray(m["B"], dtype=float))
        n, k = B.shape
        return linear_model(m["A"], B, m["Q"], m["R"], Box.symmetric(m["state_bound"], n),
                            Box.symmetric(m["input_bound"], k))
    raise UsageError(f"model.name: unknown model {m['name']!r}")


def build_vi_config(cfg: dict, model: SystemModel) -> ViConfig:
    vi = cfg["vi"]
    return ViConfig(
        domain=Box.symmetric(vi["domain_half_width"], model.n),
        n_train=vi["n_train"], n_eval=vi["n_eval"], max_iterations=vi["max_iterations"],
        target_c_delta=vi["target_c_delta"], origin_guard=vi["origin_guard"],
        rng_seed=cfg["seed"], degrees=tuple(vi["degrees"]),
        resample_each_iteration=vi["resample_each_iteration"],
    )


def build_inner_config(cfg: dict) -> InnerMinConfig:
    inner = cfg["vi"]["inner"]
    return InnerMinConfig(n_starts=inner["n_starts"],
                          max_inner_iterations=inner["max_inner_iterations"],
                          grad_tol=inner["grad_tol"], seed=cfg["seed"])


def dumps(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True)
