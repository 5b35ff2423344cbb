"""Projected stochastic gradient descent over the parameter box with
Robbins-Monro step sizes, a deterministic full-gradient baseline,
criticality residuals, and replayable run records.

The SGD loop is strictly sequential; per-iteration reductions over the bank
happen inside numpy with a fixed order, so equal seed bundles reproduce the
trace bit-exactly regardless of any outer parallelism.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericError, ValidationError
from .model import (CostParams, Dataset, NoiseBank, ParamBox, ParamPoint,
                    RobustnessConfig, project_box)
from .losses import LossModel, lambda_min_for_dataset
from .smoothing import full_gradient, grad_pair, objective_F


@dataclass(frozen=True)
class StepSchedule:
    """alpha_k = alpha0 / (1 + k / k0); harmonic-type decay, so the sums
    sum alpha_k and sum alpha_k^2 satisfy the Robbins-Monro conditions.

    alpha0 = 0 is allowed only as a degenerate test schedule (constant run).
    """

    alpha0: float = 0.1
    k0: float = 100.0

    def __post_init__(self):
        if self.alpha0 < 0 or not self.k0 > 0:
            raise ValidationError(
                f"need alpha0 >= 0 and k0 > 0, got alpha0={self.alpha0}, k0={self.k0}")

    def alpha(self, k):
        return self.alpha0 / (1.0 + k / self.k0)


def _fmt(x):
    """17 significant digits: enough to round-trip a double exactly."""
    return f"{float(x):.17g}"


@dataclass
class RunRecord:
    """Everything needed to replay a run and audit its trajectory."""

    config: dict
    bank_seed: int
    index_seed: int | None
    iterates: list                 # of (k, parameter vector as list)
    trace: list                    # of dict rows: k, objective, residual, lam, theta_norm
    final: list

    TRACE_COLUMNS = ("k", "objective", "residual", "lam", "theta_norm")

    def final_point(self):
        return ParamPoint.from_vector(np.array(self.final))

    def trace_csv(self):
        buf = io.StringIO()
        buf.write(",".join(self.TRACE_COLUMNS) + "\n")
        for row in self.trace:
            buf.write(",".join([str(row["k"])] +
                               [_fmt(row[c]) for c in self.TRACE_COLUMNS[1:]]) + "\n")
        return buf.getvalue()

    def to_json(self):
        return json.dumps({
            "config": self.config,
            "bank_seed": self.bank_seed,
            "index_seed": self.index_seed,
            "iterates": [[k, [_fmt(v) for v in vec]] for k, vec in self.iterates],
            "final": [_fmt(v) for v in self.final],
            "trace_csv": self.trace_csv(),
        }, indent=1)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        trace = []
        lines = doc["trace_csv"].strip().split("\n")
        for line in lines[1:]:
            cells = line.split(",")
            trace.append({"k": int(cells[0]),
                          **{c: float(v) for c, v in zip(cls.TRACE_COLUMNS[1:], cells[1:])}})
        return cls(config=doc["config"], bank_seed=doc["bank_seed"],
                   index_seed=doc["index_seed"],
                   iterates=[(k, [float(v) for v in vec]) for k, vec in doc["iterates"]],
                   trace=trace, final=[float(v) for v in doc["final"]])


def _check_lambda_contract(box: ParamBox, certs):
    if certs is None:
        return
    lam_min = lambda_min_for_dataset(certs)
    if box.lambda_min < lam_min - 1e-12:
        worst = max(certs, key=lambda c: c.lambda_growth)
        raise ContractError(
            f"box lambda_min={box.lambda_min} is below the dataset requirement "
            f"{lam_min}, forced by the certificate of sample with label "
            f"{worst.sample.y} and x={worst.sample.x} "
            f"(lambda_xi={worst.lambda_growth})")


def criticality_residual(model: LossModel, w: ParamPoint, data: Dataset,
                         bank: NoiseBank, box: ParamBox, cp: CostParams,
                         cfg: RobustnessConfig, probe_step=1.0) -> float:
    """||w - Pi_box(w - t grad F)|| / t with t = probe_step; zero exactly at
    constrained stationary points of the smooth objective."""
    if not probe_step > 0:
        raise ValidationError(f"probe_step must be positive, got {probe_step}")
    g = full_gradient(model, w, data, bank, cp, cfg)
    moved = ParamPoint(w.theta - probe_step * g.g_theta,
                       w.lam - probe_step * g.g_lambda)
    proj = project_box(moved, box)
    gap = np.concatenate([w.theta - proj.theta, [w.lam - proj.lam]])
    return float(np.linalg.norm(gap)) / probe_step


def _record_iterate(iterates, k, w, thin, iters):
    tail_start = iters - max(1, iters // 100)
    if k % thin == 0 or k >= tail_start or k == iters:
        iterates.append((k, [float(v) for v in w.as_vector()]))


def _guard_finite(w, k):
    v = w.as_vector()
    if not np.all(np.isfinite(v)):
        raise NumericError(f"non-finite iterate at step {k}: {v}")


def _run_loop(model, data, bank, box, cp, cfg, schedule, iters, step_fn,
              index_seed, certs, w0, t_eval, thin, residual_tol, config):
    _check_lambda_contract(box, certs)
    if iters < 1:
        raise ValidationError(f"iters must be >= 1, got {iters}")
    w = w0 if w0 is not None else project_box(
        ParamPoint(0.5 * (box.theta_lo + box.theta_hi),
                   0.5 * (box.lambda_min + box.lambda_max)), box)
    if not box.contains(w):
        raise ValidationError("initial point lies outside the box")
    iterates, trace = [], []
    _record_iterate(iterates, 0, w, thin, iters)

    def eval_row(k):
        obj = objective_F(model, w, data, bank, cp, cfg)
        res = criticality_residual(model, w, data, bank, box, cp, cfg)
        if not (np.isfinite(obj) and np.isfinite(res)):
            raise NumericError(f"non-finite objective/residual at step {k}")
        trace.append({"k": k, "objective": obj, "residual": res, "lam": w.lam,
                      "theta_norm": float(np.linalg.norm(w.theta))})
        return res

    eval_row(0)
    stopped = False
    for k in range(iters):
        g = step_fn(k, w)
        alpha = schedule.alpha(k)
        w = project_box(ParamPoint(w.theta - alpha * g.g_theta,
                                   w.lam - alpha * g.g_lambda), box)
        _guard_finite(w, k + 1)
        _record_iterate(iterates, k + 1, w, thin, iters)
        if (k + 1) % t_eval == 0 or k + 1 == iters:
            res = eval_row(k + 1)
            if residual_tol is not None and res <= residual_tol:
                stopped = True
        if stopped:
            break
    return RunRecord(config=dict(config or {}), bank_seed=bank.seed,
                     index_seed=index_seed, iterates=iterates, trace=trace,
                     final=[float(v) for v in w.as_vector()])


def sgd_run(model: LossModel, data: Dataset, bank: NoiseBank, box: ParamBox,
            cp: CostParams, cfg: RobustnessConfig, schedule: StepSchedule,
            iters: int, index_seed: int, certs=None, w0=None, t_eval=100,
            thin=10, residual_tol=None, config=None) -> RunRecord:
    """Algorithm: projected SGD with a single uniformly sampled data index per
    step and the fixed noise bank shared across all iterations.

    The index stream has its own seed, independent of the bank seed.
    """
    rng = np.random.Generator(np.random.PCG64(index_seed))
    idx = rng.integers(0, data.n, size=iters)

    def step_fn(k, w):
        xi = data.samples[int(idx[k])]
        return grad_pair(model, w.theta, w.lam, xi, bank, cp, cfg)

    return _run_loop(model, data, bank, box, cp, cfg, schedule, iters, step_fn,
                     int(index_seed), certs, w0, t_eval, thin, residual_tol, config)


def full_gd_run(model: LossModel, data: Dataset, bank: NoiseBank, box: ParamBox,
                cp: CostParams, cfg: RobustnessConfig, schedule: StepSchedule,
                iters: int, certs=None, w0=None, t_eval=100, thin=10,
                residual_tol=None, config=None) -> RunRecord:
    """Deterministic projected descent on the same objective, as a baseline."""

    def step_fn(k, w):
        return full_gradient(model, w, data, bank, cp, cfg)

    return _run_loop(model, data, bank, box, cp, cfg, schedule, iters, step_fn,
                     None, certs, w0, t_eval, thin, residual_tol, config)


@dataclass(frozen=True)
class CertReport:
    """Tail-distance verdict of a trajectory against an oracle critical set."""

    tail_distance: float
    eps: float
    passed: bool
    tail_count: int


def certify_run(record: RunRecord, crit_points, eps: float) -> CertReport:
    """Max distance of the last 10% of recorded iterates to the critical set."""
    crit_points = list(crit_points)
    if not crit_points:
        raise ValidationError("the oracle critical set is empty")
    C = np.array([c.as_vector() for c in crit_points])
    n_tail = max(1, len(record.iterates) // 10)
    tail = record.iterates[-n_tail:]
    worst = 0.0
    for _, vec in tail:
        v = np.asarray(vec)
        worst = max(worst, float(np.min(np.linalg.norm(C - v[None, :], axis=1))))
    return CertReport(tail_distance=worst, eps=float(eps),
                      passed=worst <= eps, tail_count=n_tail)
