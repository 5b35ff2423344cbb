"""Projected stochastic gradient descent on a robust logistic toy.

Two mirrored point clouds are separated along the (1, 1) direction; with a
high label-switch price the adversary can only shift features, so the robust
optimum sits at the corner theta = (1, 1) of the parameter box with lambda
clamped at its certified lower bound. SGD with the Robbins-Monro default
schedule parks there exactly and the criticality residual drops to zero.
"""

import numpy as np

from smoothdro import (CostParams, ParamBox, RobustnessConfig, Dataset,
                       Sample, certify_run, crit_set_grid, compact_window,
                       growth_certificate, make_loss, objective_subdiff_map,
                       oracle_residual, sample_noise_bank, sgd_run)
from smoothdro.optimizer import StepSchedule

rng = np.random.Generator(np.random.PCG64(7))
base = np.array([1.0, 0.5])
samples = []
for _ in range(10):
    v = base + 0.15 * rng.normal(size=2)
    samples.append(Sample(v, 1))
    samples.append(Sample(-v, 2))
data = Dataset(tuple(samples), d=2, J=2)

model = make_loss("logistic", 2)
cp = CostParams(kappa=4.0)                      # label flips priced out
rob = RobustnessConfig(rho=2.0, beta=0.5)       # generous transport budget
box = ParamBox(-np.ones(2), np.ones(2), 1.0, 5.0)
bank = sample_noise_bank(m=256, d=2, J=2, sigma2=0.5, seed=12345)

record = sgd_run(model, data, bank, box, cp, rob, StepSchedule(),
                 iters=2000, index_seed=1, t_eval=100)
print(f"{'k':>6} {'objective':>12} {'residual':>10} {'lambda':>7}")
for row in record.trace[:8]:
    print(f"{row['k']:6d} {row['objective']:12.6f} {row['residual']:10.2e} "
          f"{row['lam']:7.3f}")
print(f"final iterate: {np.round(record.final, 6)}")

# independent certification: brute-force critical set of the true objective
certs = [growth_certificate(model, xi, box, cp, requested_lambda=1.0, J=2)
         for xi in data.samples]
windows = [compact_window(c, model, box, cp, J=2) for c in certs]
field = objective_subdiff_map(model, data, windows, cp, rho=rob.rho,
                              grid=41, top_k=1, refine_steps=40)
crit = crit_set_grid(lambda w: oracle_residual(field(w), w, box),
                     box, resolution=7, tol=0.3)
report = certify_run(record, crit, eps=0.1)
print(f"\noracle critical grid points: {len(crit)}")
print(f"certified: {report.passed} (tail distance {report.tail_distance:.4f} "
      f"over the last {report.tail_count} recorded iterates)")
