"""Smoothed per-sample dual, full sample-average objective, gradient maps and
softmax concentration diagnostics over a fixed noise bank.

Everything here is a pure function of immutable inputs; the reduction over
the bank uses numpy's fixed-order pairwise summation, so results are
bit-reproducible for a given bank.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ValidationError
from .model import (CostParams, Dataset, NoiseBank, ParamPoint,
                    RobustnessConfig, Sample)
from .losses import LossModel


@dataclass(frozen=True)
class ExponentTable:
    """Per-noise-sample exponents h_l = f(theta, x+omega_l, z_l)
    - lambda (||omega_l||^2 + kappa 1{y != z_l}) at one fixed (theta, lambda, xi)."""

    h: np.ndarray
    h_max: float

    @property
    def m(self):
        return self.h.size


@dataclass(frozen=True)
class SoftmaxWeights:
    """Normalized weights w_l proportional to exp(h_l / beta)."""

    w: np.ndarray


@dataclass(frozen=True)
class GradPair:
    """Stochastic gradient of the smoothed objective in (theta, lambda)."""

    g_theta: np.ndarray
    g_lambda: float

    def as_vector(self):
        return np.concatenate([self.g_theta, [self.g_lambda]])


def transport_terms(xi: Sample, bank: NoiseBank, cp: CostParams):
    """Exact per-sample transport prices ||omega_l||^2 + kappa 1{y != z_l},
    taken straight from the bank so objective and gradient share one table."""
    return bank.sq_norms() + cp.kappa * (bank.zs != xi.y)


def exponent_table(model: LossModel, theta, lam, xi: Sample, bank: NoiseBank,
                   cp: CostParams) -> ExponentTable:
    if not lam > 0:
        raise ValidationError(f"lambda must be positive, got {lam}")
    X = xi.x[None, :] + bank.omegas
    vals = model.value_batch(theta, X, model.eval_labels(xi, bank.zs))
    if not np.all(np.isfinite(vals)):
        bad = int(np.flatnonzero(~np.isfinite(vals))[0])
        raise NumericError(f"non-finite loss value at bank index {bad}")
    h = vals - lam * transport_terms(xi, bank, cp)
    return ExponentTable(h=h, h_max=float(np.max(h)))


def softmax_weights(table: ExponentTable, beta: float) -> SoftmaxWeights:
    """Weights from the h_max-shifted exponents; exact in real arithmetic."""
    if not beta > 0:
        raise ValidationError(f"beta must be positive, got {beta}")
    e = np.exp((table.h - table.h_max) / beta)
    return SoftmaxWeights(w=e / np.sum(e))


def phi_beta_m(table: ExponentTable, beta: float) -> float:
    """Stabilized log-sum-exp value h_max + beta log((1/m) sum exp((h - h_max)/beta)).

    Satisfies exactly h_max - beta log m <= value <= h_max.
    """
    if not beta > 0:
        raise ValidationError(f"beta must be positive, got {beta}")
    e = np.exp((table.h - table.h_max) / beta)
    return table.h_max + beta * float(np.log(np.sum(e) / table.m))


def objective_F(model: LossModel, w: ParamPoint, data: Dataset, bank: NoiseBank,
                cp: CostParams, cfg: RobustnessConfig) -> float:
    """Full smoothed objective lambda rho + (1/n) sum_i phi^{beta,m}_{xi_i}."""
    total = 0.0
    for xi in data.samples:
        total += phi_beta_m(exponent_table(model, w.theta, w.lam, xi, bank, cp),
                            cfg.beta)
    return w.lam * cfg.rho + total / data.n


def grad_pair(model: LossModel, theta, lam, xi: Sample, bank: NoiseBank,
              cp: CostParams, cfg: RobustnessConfig) -> GradPair:
    """Softmax-weighted gradient maps g_theta, g_lambda at one data point.

    g_theta = sum_l w_l grad_theta f(theta, x+omega_l, z_l)
    g_lambda = rho - sum_l w_l (||omega_l||^2 + kappa 1{y != z_l})
    """
    table = exponent_table(model, theta, lam, xi, bank, cp)
    w = softmax_weights(table, cfg.beta).w
    X = xi.x[None, :] + bank.omegas
    grads = model.grad_theta_batch(theta, X, model.eval_labels(xi, bank.zs))
    g_theta = w @ grads
    g_lambda = cfg.rho - float(w @ transport_terms(xi, bank, cp))
    if not (np.all(np.isfinite(g_theta)) and np.isfinite(g_lambda)):
        raise NumericError("non-finite gradient entry")
    return GradPair(g_theta=g_theta, g_lambda=g_lambda)


def full_gradient(model: LossModel, w: ParamPoint, data: Dataset, bank: NoiseBank,
                  cp: CostParams, cfg: RobustnessConfig) -> GradPair:
    """Gradient of objective_F: per-sample pairs averaged in index order,
    which counts the rho term exactly once."""
    g_theta = np.zeros(w.theta.size)
    g_lambda = 0.0
    for xi in data.samples:
        g = grad_pair(model, w.theta, w.lam, xi, bank, cp, cfg)
        g_theta += g.g_theta
        g_lambda += g.g_lambda
    return GradPair(g_theta=g_theta / data.n, g_lambda=g_lambda / data.n)


@dataclass(frozen=True)
class ConcentrationReport:
    """Softmax concentration diagnostics for one exponent table."""

    mass_on_eta_argmax: float
    weight_entropy: float
    ess: float


def concentration_report(table: ExponentTable, beta: float,
                         eta: float) -> ConcentrationReport:
    """Mass on the eta-argmax level set, weight entropy and effective sample size."""
    if not eta > 0:
        raise ValidationError(f"eta must be positive, got {eta}")
    w = softmax_weights(table, beta).w
    mass = float(np.sum(w[table.h >= table.h_max - eta]))
    nz = w[w > 0]
    entropy = float(-np.sum(nz * np.log(nz)))
    ess = float(1.0 / np.sum(w * w))
    return ConcentrationReport(mass_on_eta_argmax=mass, weight_entropy=entropy, ess=ess)
