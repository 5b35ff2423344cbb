"""Soft maxima from noise banks.

The inner maximization sup_x' {f(theta, x') - lambda * cost(x, x')} is
replaced by a log-sum-exp over a fixed bank of m perturbations: as the
temperature beta shrinks, the smoothed value climbs toward the best exponent
in the bank, and the softmax weights concentrate on the near-argmax entries.
"""

import numpy as np

from smoothdro import (CostParams, Sample, concentration_report,
                       exponent_table, make_loss, phi_beta_m,
                       sample_noise_bank, softmax_weights)

# a 1-D regression point: loss (theta * x)^2 against target 0 at x = 1
model = make_loss("linreg", 1)
xi = Sample(np.array([1.0]), 1, target=0.0)
cp = CostParams(kappa=1.0)
bank = sample_noise_bank(m=4096, d=1, J=1, sigma2=1.0, seed=0)

table = exponent_table(model, np.array([0.9]), 4.0, xi, bank, cp)
print(f"bank of m={table.m}: best exponent h_max = {table.h_max:.6f}")
print(f"exact sandwich floor h_max - beta log m at beta=1: "
      f"{table.h_max - np.log(table.m):.6f}\n")

print(f"{'beta':>8} {'phi^beta,m':>12} {'mass(eta)':>10} {'ESS':>8}")
for beta in [3.0, 1.0, 0.3, 0.1, 0.03, 0.01, 0.003, 0.001]:
    phi = phi_beta_m(table, beta)
    rep = concentration_report(table, beta, eta=1e-3)
    print(f"{beta:8.3f} {phi:12.6f} {rep.mass_on_eta_argmax:10.4f} "
          f"{rep.ess:8.1f}")

# the value is squeezed between h_max - beta log m and h_max, and is
# nonincreasing in beta; the eta-argmax mass rises toward 1
w = softmax_weights(table, 0.001).w
top = np.argsort(w)[-3:][::-1]
print("\nheaviest bank entries at beta=0.001 (index, weight, perturbation):")
for i in top:
    print(f"  {i:5d}  {w[i]:.4f}  omega = {bank.omegas[i, 0]:+.4f}")
print("\nthe surviving perturbations cluster at the inner maximizer "
      "x* = lambda / (lambda - theta^2) - 1 away from the data point.")
