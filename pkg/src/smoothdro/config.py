"""Run configuration: a single strict JSON document, with data-scaled
defaults for the knobs the theory leaves free (sigma2, kappa, rho, lambda_max).

Precedence is flag > file > default; flag overrides are applied by the CLI
before `resolve` fills the remaining defaults.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ValidationError
from .model import (ColumnSchema, CostParams, Dataset, ParamBox,
                    RobustnessConfig, load_dataset)
from .losses import (growth_certificate, lambda_min_for_dataset, make_loss)
from .optimizer import StepSchedule

_DATASET_DEFAULTS = {
    "path": None,
    "label_column": "y",
    "feature_columns": None,
    "target_column": None,
    "num_labels": None,
}

_BOX_DEFAULTS = {
    "theta_lo": -1.0,
    "theta_hi": 1.0,
    "lambda_max": None,
}

_SWEEP_DEFAULTS = {
    "betas": [1.0, 0.1, 0.01],
    "ms": [256, 1024, 4096],
    "grid_resolution": 9,
    "eps": 0.1,
}

_ORACLE_DEFAULTS = {
    "grid": 101,
    "crit_resolution": 21,
    "crit_tol": 0.01,
    "eps": 0.1,
}

_DEFAULTS = {
    "loss": "logistic",
    "mlp_widths": None,
    "dataset": _DATASET_DEFAULTS,
    "box": _BOX_DEFAULTS,
    "rho": 0.1,
    "beta": 0.1,
    "m": 512,
    "sigma2": None,
    "kappa": 1.0,
    "requested_lambda_growth": None,
    "schedule": {"alpha0": 0.1, "k0": 100.0},
    "iters": 10000,
    "seed": 0,
    "bank_seed": 12345,
    "eval_every": 100,
    "thin": 10,
    "sweep": _SWEEP_DEFAULTS,
    "oracle": _ORACLE_DEFAULTS,
    "out_dir": None,
}


def _merge_strict(defaults, doc, path=""):
    out = copy.deepcopy(defaults)
    for key, val in doc.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(defaults[key], dict) and defaults[key] is not None:
            if not isinstance(val, dict):
                raise ConfigError(f"config key {here!r} must be an object")
            out[key] = _merge_strict(defaults[key], val, here)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(path):
    """Parse the JSON config file; malformed JSON reports line and column."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"malformed JSON in {path} at line {exc.lineno}, column {exc.colno}: "
            f"{exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    return _merge_strict(_DEFAULTS, doc)


def default_sigma2(X):
    """0.25 * (median pairwise feature distance)^2, falling back to 1.0 when
    the dataset is a single point or fully degenerate."""
    n = X.shape[0]
    if n < 2:
        return 1.0
    diffs = X[:, None, :] - X[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diffs, diffs))
    med = float(np.median(dist[np.triu_indices(n, k=1)]))
    return 0.25 * med * med if med > 0 else 1.0


@dataclass
class RunContext:
    """Fully resolved ingredients of one experiment."""

    config: dict
    dataset: Dataset
    model: object
    box: ParamBox
    cp: CostParams
    rob: RobustnessConfig
    certs: list
    lambda_min: float
    schedule: StepSchedule


def build_context(cfg: dict) -> RunContext:
    """Validate the merged config and assemble every run ingredient.

    Fills sigma2, the requested growth rate and lambda_max; the returned
    context's `config` is the fully resolved snapshot used for replays.
    """
    cfg = copy.deepcopy(cfg)
    ds_cfg = cfg["dataset"]
    if not ds_cfg["path"]:
        raise ConfigError("dataset.path is required")
    schema = ColumnSchema(
        label_column=ds_cfg["label_column"],
        feature_columns=tuple(ds_cfg["feature_columns"]) if ds_cfg["feature_columns"] else None,
        target_column=ds_cfg["target_column"],
        num_labels=ds_cfg["num_labels"])
    try:
        dataset = load_dataset(ds_cfg["path"], schema)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc

    try:
        model = make_loss(cfg["loss"], dataset.d, cfg["mlp_widths"])
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg["loss"] == "linreg":
        if dataset.J != 1 or ds_cfg["target_column"] is None:
            raise ConfigError("linreg runs need J = 1 and a target column")
    elif dataset.J != 2:
        raise ConfigError(f"{cfg['loss']} runs need binary labels, got J={dataset.J}")

    lo, hi = cfg["box"]["theta_lo"], cfg["box"]["theta_hi"]
    theta_lo = np.full(model.p, lo) if np.isscalar(lo) else np.asarray(lo, dtype=float)
    theta_hi = np.full(model.p, hi) if np.isscalar(hi) else np.asarray(hi, dtype=float)
    if theta_lo.size != model.p or theta_hi.size != model.p:
        raise ConfigError(f"theta bounds must have length p={model.p}")

    for key in ("rho", "beta", "kappa", "m", "iters"):
        if not cfg[key] > 0:
            raise ConfigError(f"config key {key!r} must be positive, got {cfg[key]}")

    if cfg["sigma2"] is None:
        cfg["sigma2"] = default_sigma2(dataset.features())
    if not cfg["sigma2"] > 0:
        raise ConfigError(f"sigma2 must be positive, got {cfg['sigma2']}")
    cp = CostParams(kappa=cfg["kappa"])

    # requested growth rate for Lipschitz-in-x losses; lambda_max default is
    # 100 * lambda_min. When both are free, the growth rate defaults to 1.
    requested = cfg["requested_lambda_growth"]
    if requested is None and cfg["loss"] != "linreg":
        requested = (0.1 * cfg["box"]["lambda_max"]
                     if cfg["box"]["lambda_max"] is not None else 1.0)
        cfg["requested_lambda_growth"] = requested

    probe_box = ParamBox(theta_lo, theta_hi, lambda_min=1.0, lambda_max=1.0)
    certs = [growth_certificate(model, xi, probe_box, cp, requested_lambda=requested,
                                J=dataset.J)
             for xi in dataset.samples]
    lam_min = lambda_min_for_dataset(certs)
    if cfg["box"]["lambda_max"] is None:
        cfg["box"]["lambda_max"] = 100.0 * lam_min
    lam_max = cfg["box"]["lambda_max"]
    if lam_max < lam_min:
        from .errors import ContractError
        raise ContractError(
            f"lambda_max={lam_max} is below the certified lambda_min={lam_min}")
    box = ParamBox(theta_lo, theta_hi, lambda_min=lam_min, lambda_max=lam_max)

    sched = cfg["schedule"]
    schedule = StepSchedule(alpha0=sched["alpha0"], k0=sched["k0"])
    rob = RobustnessConfig(rho=cfg["rho"], beta=cfg["beta"])
    return RunContext(config=cfg, dataset=dataset, model=model, box=box, cp=cp,
                      rob=rob, certs=certs, lambda_min=lam_min, schedule=schedule)
