"""Shared toy problems and helpers for the test suite."""

import json
import os

import numpy as np
import pytest

from smoothdro import (CostParams, Dataset, LossModel, ParamBox, Sample,
                       compact_window, growth_certificate, make_loss)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(20260823))


def quadratic_toy():
    """1-D linear regression toy with a unique dual maximizer in closed form.

    f(theta, x, t) = (theta x - t)^2, xi = ([1], target 0), Theta = [-1, 1].
    For lam > theta^2 the dual maximizer is x* = lam / (lam - theta^2) and
    phi(theta, lam) = lam theta^2 / (lam - theta^2).
    """
    model = make_loss("linreg", 1)
    xi = Sample(np.array([1.0]), 1, target=0.0)
    data = Dataset((xi,), 1, 1)
    cp = CostParams(kappa=1.0)
    box = ParamBox(np.array([-1.0]), np.array([1.0]), 4.0, 8.0)
    cert = growth_certificate(model, xi, box, cp, J=1)
    window = compact_window(cert, model, box, cp, J=1)
    return model, xi, data, cp, box, cert, window


def quadratic_phi(theta, lam):
    """Closed-form dual value of the quadratic toy (valid for lam > theta^2)."""
    t2 = float(theta) ** 2
    return lam * t2 / (lam - t2)


def quadratic_grad_phi(theta, lam):
    """Closed-form (d phi / d theta, d phi / d lam) of the quadratic toy."""
    t = float(theta)
    den = (lam - t * t) ** 2
    return np.array([2.0 * t * lam * lam / den, -(t ** 4) / den])


def mirrored_logistic_data(n_pairs=10, d=2, jitter=0.15, seed=7):
    """Two tight mirrored clusters; mirrored pairs share identical per-sample
    logistic gradients, keeping the stochastic gradient noise small."""
    rng = np.random.Generator(np.random.PCG64(seed))
    base = np.array([1.0, 0.5])[:d]
    X, ys = [], []
    for _ in range(n_pairs):
        v = base + jitter * rng.standard_normal(d)
        X.append(v)
        ys.append(1)
        X.append(-v)
        ys.append(2)
    return Dataset.from_arrays(np.array(X), np.array(ys), J=2)


def write_csv(path, data: Dataset, target=False):
    cols = [f"x{j+1}" for j in range(data.d)]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols + (["t"] if target else []) + ["y"]) + "\n")
        for s in data.samples:
            row = [repr(float(v)) for v in s.x]
            if target:
                row.append(repr(float(s.target)))
            row.append(str(s.y))
            fh.write(",".join(row) + "\n")


def write_config(path, **overrides):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(overrides, fh)
    return str(path)


@pytest.fixture
def logistic_setup(tmp_path):
    """Small logistic dataset on disk plus a ready config file."""
    data = mirrored_logistic_data(n_pairs=2, seed=3)
    csv = tmp_path / "toy.csv"
    write_csv(csv, data)
    cfg = write_config(
        tmp_path / "cfg.json",
        loss="logistic",
        dataset={"path": str(csv)},
        box={"theta_lo": -1.0, "theta_hi": 1.0, "lambda_max": 10.0},
        requested_lambda_growth=1.0,
        sigma2=0.5,
        m=64,
        iters=200,
        eval_every=50,
        out_dir=str(tmp_path / "out"),
    )
    return data, csv, cfg, tmp_path


def fd_vector(fun, v, rel_step=1e-6):
    """Central finite differences of a scalar function of a vector."""
    v = np.asarray(v, dtype=float)
    g = np.zeros_like(v)
    for j in range(v.size):
        h = rel_step * (1.0 + abs(v[j]))
        vp, vm = v.copy(), v.copy()
        vp[j] += h
        vm[j] -= h
        g[j] = (fun(vp) - fun(vm)) / (2.0 * h)
    return g


ARTIFACT_DIR = os.path.join(os.path.dirname(__file__), "_artifacts")
