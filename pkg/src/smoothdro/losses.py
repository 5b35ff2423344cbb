"""Loss catalogue with value/gradient evaluation in theta and x, plus growth
certificates (mu_xi, lambda_xi) that make the per-sample dual maximization
well posed and pin down lambda_min for a dataset.

Models are immutable and evaluation is pure, so parallel use needs no locks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CertificateError, DimensionMismatchError, ValidationError
from .model import CostParams, ParamBox, Sample


def softplus(a):
    """log(1 + e^a) via the overflow-safe branch max(0, a) + log1p(e^{-|a|})."""
    a = np.asarray(a, dtype=float)
    return np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a)))


def sigmoid(a):
    a = np.asarray(a, dtype=float)
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


class LossModel:
    """Common surface of the catalogue losses.

    `value`, `grad_theta`, `grad_x` take a parameter vector theta of length p,
    a feature vector x of length d and a label channel `y` whose meaning is
    model specific: a 1-based class label for classification, the real target
    for regression. `eval_label` maps a (sample, perturbed label) pair to the
    channel value so callers never special-case regression.
    """

    key = "abstract"
    p = 0
    d = 0
    uses_real_target = False

    def value(self, theta, x, y):
        raise NotImplementedError

    def grad_theta(self, theta, x, y):
        raise NotImplementedError

    def grad_x(self, theta, x, y):
        raise NotImplementedError

    # Batched variants over rows of X (m, d) and labels ys (m,). Subclasses
    # override with vectorized code; the fallback loops.
    def value_batch(self, theta, X, ys):
        return np.array([self.value(theta, X[i], ys[i]) for i in range(len(X))])

    def grad_theta_batch(self, theta, X, ys):
        return np.array([self.grad_theta(theta, X[i], ys[i]) for i in range(len(X))])

    def eval_label(self, sample: Sample, z: int):
        """Label-channel value for sample perturbed to discrete label z."""
        if self.uses_real_target:
            if sample.target is None:
                raise ValidationError("regression sample has no target value")
            return sample.target
        return z

    def eval_labels(self, sample: Sample, zs):
        if self.uses_real_target:
            if sample.target is None:
                raise ValidationError("regression sample has no target value")
            return np.full(len(zs), sample.target)
        return np.asarray(zs)

    def _check_dims(self, theta, x):
        theta = np.asarray(theta, dtype=float)
        x = np.asarray(x, dtype=float)
        if theta.size != self.p:
            raise DimensionMismatchError("theta", theta.size, "model parameters", self.p)
        if x.shape[-1] != self.d:
            raise DimensionMismatchError("x", x.shape[-1], "model features", self.d)
        return theta, x


class LinearRegressionLoss(LossModel):
    """Squared residual (<theta, x> - y)^2 with a real-valued target y.

    Used with J = 1: the discrete transport channel is trivial and the target
    comes from the dataset's side column.
    """

    key = "linreg"
    uses_real_target = True

    def __init__(self, d):
        self.d = int(d)
        self.p = int(d)

    def value(self, theta, x, y):
        theta, x = self._check_dims(theta, x)
        r = float(theta @ x) - y
        return r * r

    def grad_theta(self, theta, x, y):
        theta, x = self._check_dims(theta, x)
        return 2.0 * (float(theta @ x) - y) * x

    def grad_x(self, theta, x, y):
        theta, x = self._check_dims(theta, x)
        return 2.0 * (float(theta @ x) - y) * theta

    def value_batch(self, theta, X, ys):
        theta, X = self._check_dims(theta, X)
        r = X @ theta - np.asarray(ys, dtype=float)
        return r * r

    def grad_theta_batch(self, theta, X, ys):
        theta, X = self._check_dims(theta, X)
        r = X @ theta - np.asarray(ys, dtype=float)
        return 2.0 * r[:, None] * X

    def cert_constants(self, xi: Sample, theta_lo, theta_hi, cp: CostParams,
                       requested_lambda=None):
        # f(theta, (x', t)) <= 2||theta||^2 ||x'-x||^2 + 2(<theta,x>-t)^2,
        # both maxima over the box are attained at corners.
        lam = 4.0 * float(np.sum(np.maximum(theta_lo ** 2, theta_hi ** 2)))
        t = self.eval_label(xi, xi.y)
        lo_ip = float(np.sum(np.minimum(theta_lo * xi.x, theta_hi * xi.x)))
        hi_ip = float(np.sum(np.maximum(theta_lo * xi.x, theta_hi * xi.x)))
        mu = 2.0 * max((lo_ip - t) ** 2, (hi_ip - t) ** 2)
        return mu, lam


class LogisticLoss(LossModel):
    """Binary logistic loss softplus(-s <theta, x>) with labels {1, 2}.

    Label 1 maps to sign +1, label 2 to sign -1.
    """

    key = "logistic"

    def __init__(self, d):
        self.d = int(d)
        self.p = int(d)

    @staticmethod
    def _sign(y):
        y = np.asarray(y)
        if np.any((y != 1) & (y != 2)):
            raise ValidationError(f"logistic labels must be in {{1, 2}}, got {y}")
        return np.where(y == 1, 1.0, -1.0)

    def value(self, theta, x, y):
        theta, x = self._check_dims(theta, x)
        s = self._sign(y)
        return float(softplus(-s * float(theta @ x)))

    def grad_theta(self, theta, x, y):
        theta, x = self._check_dims(theta, x)
        s = float(self._sign(y))
        return -s * float(sigmoid(-s * float(theta @ x))) * x

    def grad_x(self, theta, x, y):
        theta, x = self._check_dims(theta, x)
        s = float(self._sign(y))
        return -s * float(sigmoid(-s * float(theta @ x))) * theta

    def value_batch(self, theta, X, ys):
        theta, X = self._check_dims(theta, X)
        s = self._sign(ys)
        return softplus(-s * (X @ theta))

    def grad_theta_batch(self, theta, X, ys):
        theta, X = self._check_dims(theta, X)
        s = self._sign(ys)
        return (-s * sigmoid(-s * (X @ theta)))[:, None] * X

    def cert_constants(self, xi: Sample, theta_lo, theta_hi, cp: CostParams,
                       requested_lambda=None):
        # ||grad_x f|| <= ||theta||, so f is L-Lipschitz in x with
        # L = max ||theta|| over the box; any positive lambda works.
        if requested_lambda is None or not requested_lambda > 0:
            raise ValidationError("logistic certificates need a positive requested lambda")
        L = math.sqrt(float(np.sum(np.maximum(theta_lo ** 2, theta_hi ** 2))))
        lo_ip = float(np.sum(np.minimum(theta_lo * xi.x, theta_hi * xi.x)))
        hi_ip = float(np.sum(np.maximum(theta_lo * xi.x, theta_hi * xi.x)))
        B = max(abs(lo_ip), abs(hi_ip))
        mu = float(softplus(B)) + L * L / requested_lambda
        return mu, float(requested_lambda)


class MLPLoss(LossModel):
    """Binary cross-entropy of a feedforward net with softplus hidden layers
    and a sigmoid output; labels {1, 2} map to targets {1, 0}.

    theta packs, layer by layer, the weight matrix in row-major order
    followed by the bias vector.
    """

    key = "mlp"

    def __init__(self, widths):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or widths[-1] != 1 or any(w < 1 for w in widths):
            raise ValidationError(f"widths must be [d, ..., 1] with positive entries, got {widths}")
        self.widths = tuple(widths)
        self.d = widths[0]
        self.p = sum(widths[k + 1] * (widths[k] + 1) for k in range(len(widths) - 1))

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.size != self.p:
            raise DimensionMismatchError("theta", theta.size, "architecture parameters", self.p)
        mats, offs = [], 0
        for k in range(len(self.widths) - 1):
            din, dout = self.widths[k], self.widths[k + 1]
            W = theta[offs:offs + dout * din].reshape(dout, din)
            offs += dout * din
            b = theta[offs:offs + dout]
            offs += dout
            mats.append((W, b))
        return mats

    @staticmethod
    def pack(layers):
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in layers])

    @staticmethod
    def _bce_target(y):
        y = np.asarray(y)
        if np.any((y != 1) & (y != 2)):
            raise ValidationError(f"mlp labels must be in {{1, 2}}, got {y}")
        return np.where(y == 1, 1.0, 0.0)

    def _forward(self, theta, X):
        """Returns pre-activations per layer and the final logit, batched."""
        layers = self.unpack(theta)
        acts = [X]
        h = X
        for W, b in layers[:-1]:
            a = h @ W.T + b
            h = softplus(a)
            acts.append(h)
        Wl, bl = layers[-1]
        s = (h @ Wl.T + bl)[:, 0]
        return layers, acts, s

    def value_batch(self, theta, X, ys):
        theta, X = self._check_dims(theta, X)
        yb = self._bce_target(ys)
        _, _, s = self._forward(theta, X)
        # -log h = softplus(-s), -log(1 - h) = softplus(s)
        return yb * softplus(-s) + (1.0 - yb) * softplus(s)

    def value(self, theta, x, y):
        return float(self.value_batch(theta, np.asarray(x, dtype=float)[None, :], [y])[0])

    def _backward(self, theta, X, ys):
        """Batched gradients: (dtheta of shape (m, p), dx of shape (m, d))."""
        theta, X = self._check_dims(theta, X)
        yb = self._bce_target(ys)
        layers, acts, s = self._forward(theta, X)
        m = X.shape[0]
        delta = (sigmoid(s) - yb)[:, None]            # df/ds, shape (m, 1)
        grads = [None] * len(layers)
        for k in range(len(layers) - 1, -1, -1):
            W, _ = layers[k]
            h_prev = acts[k]
            gW = np.einsum("mo,mi->moi", delta, h_prev)
            gb = delta
            grads[k] = (gW, gb)
            delta = delta @ W                          # back to h_{k-1}
            if k > 0:
                # h_prev = softplus(a); softplus'(a) = sigmoid(a) = sigmoid of
                # the pre-activation, recoverable from h since a = log(e^h - 1)
                # is ill-conditioned -- instead note sigmoid(a) = 1 - e^{-h}.
                delta = delta * (1.0 - np.exp(-h_prev))
        dx = delta
        dtheta = np.concatenate(
            [np.concatenate([gW.reshape(m, -1), gb], axis=1) for gW, gb in grads], axis=1)
        return dtheta, dx

    def grad_theta_batch(self, theta, X, ys):
        return self._backward(theta, X, ys)[0]

    def grad_theta(self, theta, x, y):
        return self._backward(theta, np.asarray(x, dtype=float)[None, :], [y])[0][0]

    def grad_x(self, theta, x, y):
        return self._backward(theta, np.asarray(x, dtype=float)[None, :], [y])[1][0]

    def _unpack_bounds(self, theta_lo, theta_hi):
        los = self.unpack(theta_lo)
        his = self.unpack(theta_hi)
        return list(zip(los, his))

    def lipschitz_x_bound(self, theta_lo, theta_hi):
        """Product of spectral-norm bounds of the entrywise-max weight
        matrices; softplus and BCE-of-sigmoid slopes are both <= 1."""
        L = 1.0
        for (Wl, _), (Wh, _) in self._unpack_bounds(theta_lo, theta_hi):
            Wmax = np.maximum(np.abs(Wl), np.abs(Wh))
            L *= float(np.linalg.norm(Wmax, 2))
        return L

    def logit_interval(self, x, theta_lo, theta_hi):
        """Interval bound on the output logit at fixed x over the theta box."""
        h_lo = np.asarray(x, dtype=float)
        h_hi = h_lo.copy()
        bounds = self._unpack_bounds(theta_lo, theta_hi)
        for k, ((Wl, bl), (Wh, bh)) in enumerate(bounds):
            cands = np.stack([Wl * h_lo, Wl * h_hi, Wh * h_lo, Wh * h_hi])
            a_lo = cands.min(axis=0).sum(axis=1) + bl
            a_hi = cands.max(axis=0).sum(axis=1) + bh
            if k < len(bounds) - 1:
                h_lo, h_hi = softplus(a_lo), softplus(a_hi)
            else:
                return float(a_lo[0]), float(a_hi[0])

    def cert_constants(self, xi: Sample, theta_lo, theta_hi, cp: CostParams,
                       requested_lambda=None):
        if requested_lambda is None or not requested_lambda > 0:
            raise ValidationError("mlp certificates need a positive requested lambda")
        L = self.lipschitz_x_bound(theta_lo, theta_hi)
        s_lo, s_hi = self.logit_interval(xi.x, theta_lo, theta_hi)
        mu0 = float(softplus(max(abs(s_lo), abs(s_hi))))
        mu = mu0 + L * L / requested_lambda
        return mu, float(requested_lambda)


LOSS_KEYS = ("linreg", "logistic", "mlp")


def make_loss(key, d, widths=None):
    if key == "linreg":
        return LinearRegressionLoss(d)
    if key == "logistic":
        return LogisticLoss(d)
    if key == "mlp":
        if widths is None:
            raise ValidationError("mlp loss needs an architecture width list")
        if widths[0] != d:
            raise DimensionMismatchError("architecture input", widths[0], "data", d)
        return MLPLoss(widths)
    raise ValidationError(f"unknown loss key {key!r}; choose from {LOSS_KEYS}")


@dataclass(frozen=True)
class GrowthCert:
    """Constants witnessing f(theta, zeta) <= mu + (lambda_growth/2) c(xi, zeta)
    for all theta in the box, validated on a probe cloud before issue."""

    mu: float
    lambda_growth: float
    sample: Sample


def _probe_cloud(model, xi, J, n_dirs, n_radii, seed):
    """Perturbed points spanning ||zeta - xi|| up to 10 data scales."""
    rng = np.random.Generator(np.random.PCG64(seed))
    scale = 10.0 * (1.0 + float(np.linalg.norm(xi.x)))
    dirs = rng.standard_normal((n_dirs, xi.d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = scale * rng.random(n_radii)
    pts = xi.x[None, None, :] + radii[None, :, None] * dirs[:, None, :]
    pts = pts.reshape(-1, xi.d)
    zs = rng.integers(1, J + 1, size=pts.shape[0])
    return pts, zs


def growth_certificate(model: LossModel, xi: Sample, box: ParamBox, cp: CostParams,
                       requested_lambda=None, J=None, validate=True,
                       probe_seed=20240901) -> GrowthCert:
    """Analytic certificate for the catalogue loss at sample xi, empirically
    validated on a random probe cloud (>= 10^4 points) before being returned.
    """
    mu, lam = model.cert_constants(xi, box.theta_lo, box.theta_hi, cp, requested_lambda)
    if validate:
        J = J or (1 if model.uses_real_target else 2)
        pts, zs = _probe_cloud(model, xi, J, n_dirs=25, n_radii=32, seed=probe_seed)
        rng = np.random.Generator(np.random.PCG64(probe_seed + 1))
        thetas = box.theta_lo + (box.theta_hi - box.theta_lo) * \
            rng.random((13, box.p))
        tol = 1e-9 * (1.0 + abs(mu))
        sq = np.einsum("kd,kd->k", pts - xi.x[None, :], pts - xi.x[None, :])
        cost = sq + cp.kappa * (zs != xi.y)
        for theta in thetas:
            vals = model.value_batch(theta, pts, model.eval_labels(xi, zs))
            slack = mu + 0.5 * lam * cost - vals
            worst = int(np.argmin(slack))
            if slack[worst] < -tol:
                raise CertificateError(
                    f"growth inequality violated at zeta=({pts[worst]}, {zs[worst]}), "
                    f"theta={theta}: f={vals[worst]:.6g} > "
                    f"mu + (lambda/2) c = {mu + 0.5 * lam * cost[worst]:.6g}")
    return GrowthCert(mu=float(mu), lambda_growth=float(lam), sample=xi)


def lambda_min_for_dataset(certs) -> float:
    """lambda_min = max over per-sample growth rates; one cert per data point."""
    certs = list(certs)
    if not certs:
        raise ValidationError("need at least one growth certificate")
    return max(c.lambda_growth for c in certs)
