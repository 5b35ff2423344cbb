"""The brute-force oracle on a toy with a closed-form answer.

For f(theta, x) = (theta x)^2, data point x = 1 with target 0 and
lambda > theta^2, the inner maximization has the unique maximizer
x* = lambda / (lambda - theta^2) and value lambda theta^2 / (lambda - theta^2).
The oracle only sees the loss through function evaluations, so matching the
closed form is a real test of the certified window and the grid + ascent
refinement.
"""

import numpy as np

from smoothdro import (CostParams, Dataset, ParamBox, ParamPoint, Sample,
                       brute_force_phi, clarke_subdiff, compact_window,
                       crit_set_grid, growth_certificate, make_loss,
                       objective_subdiff_map, oracle_residual)

model = make_loss("linreg", 1)
xi = Sample(np.array([1.0]), 1, target=0.0)
data = Dataset((xi,), 1, 1)
cp = CostParams(kappa=1.0)
box = ParamBox(np.array([-1.0]), np.array([1.0]), 4.0, 8.0)

# growth certificate -> compact search window for the maximizers
cert = growth_certificate(model, xi, box, cp, J=1)
window = compact_window(cert, model, box, cp, J=1)
print(f"certified growth constants: lambda_growth={cert.lambda_growth}, "
      f"mu={cert.mu}")
print(f"search window: center {window.center[0]:.1f}, "
      f"radius {window.radius:.4f}\n")

print(f"{'theta':>6} {'lam':>4} {'phi oracle':>12} {'phi exact':>12} "
      f"{'x* oracle':>10} {'x* exact':>9}")
for theta, lam in [(0.5, 4.0), (0.9, 5.0), (1.0, 4.0), (-0.7, 8.0)]:
    phi, am = brute_force_phi(model, np.array([theta]), lam, xi, window, cp)
    exact = lam * theta ** 2 / (lam - theta ** 2)
    x_star = lam / (lam - theta ** 2) * np.sign(theta) ** 0  # always positive
    print(f"{theta:6.2f} {lam:4.1f} {phi:12.8f} {exact:12.8f} "
          f"{am.points[0][0][0]:10.6f} {x_star:9.6f}")

# subdifferential of phi at a smooth point: a singleton vertex (grad_theta, -c)
_, argmax = brute_force_phi(model, np.array([0.5]), 5.0, xi, window, cp)
sd = clarke_subdiff(model, np.array([0.5]), 5.0, xi, argmax, cp)
print(f"\nsubdifferential vertices at (0.5, 5.0): {np.round(sd.vertices, 6)}")
print("closed-form gradient:            "
      f"[{2 * 0.5 * 25 / (5 - 0.25) ** 2:.6f} {-0.5 ** 4 / (5 - 0.25) ** 2:.6f}]")

# the whole-objective critical set on the box: theta = 0 kills the theta
# gradient, and the budget term rho pins lambda at the lower face
field = objective_subdiff_map(model, data, [window], cp, rho=0.1)
crit = crit_set_grid(lambda w: oracle_residual(field(w), w, box),
                     box, resolution=21, tol=0.05)
print(f"\noracle critical set on the box: "
      f"{[list(np.round(w.as_vector(), 6)) for w in crit]}")
