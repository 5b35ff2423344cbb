"""Core domain types: samples, datasets, transport cost, parameter box, noise bank.

All types are immutable after construction and safe to share across workers.
Labels are 1-based everywhere at the interface; regression datasets use a
single trivial label (J = 1) and carry the real-valued target separately.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, ValidationError


def _frozen_array(a, dtype=float):
    arr = np.asarray(a, dtype=dtype).copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Sample:
    """One mixed data point (x, y) with x in R^d and 1-based label y.

    For regression (J = 1) the real-valued target rides along in `target`
    and never enters the transport cost.
    """

    x: np.ndarray
    y: int
    target: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen_array(self.x))
        if self.x.ndim != 1 or self.x.size < 1:
            raise ValidationError("sample features must be a nonempty 1-D vector")
        if not np.all(np.isfinite(self.x)):
            raise ValidationError("sample features must be finite")
        if int(self.y) < 1:
            raise ValidationError(f"labels are 1-based, got y={self.y}")
        object.__setattr__(self, "y", int(self.y))
        if self.target is not None and not math.isfinite(self.target):
            raise ValidationError("regression target must be finite")

    @property
    def d(self):
        return self.x.size


@dataclass(frozen=True)
class Dataset:
    """Ordered collection of samples sharing dimension d and label range 1..J."""

    samples: tuple
    d: int
    J: int

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if len(self.samples) < 1:
            raise ValidationError("a dataset needs at least one sample")
        for i, s in enumerate(self.samples):
            if s.d != self.d:
                raise DimensionMismatchError("dataset", self.d, f"sample {i}", s.d)
            if not 1 <= s.y <= self.J:
                raise ValidationError(f"sample {i} has label {s.y} outside 1..{self.J}")

    @property
    def n(self):
        return len(self.samples)

    @classmethod
    def from_arrays(cls, X, ys, J=None, targets=None):
        X = np.asarray(X, dtype=float)
        ys = np.asarray(ys, dtype=int)
        if X.ndim != 2 or X.shape[0] != ys.size:
            raise ValidationError("X must be (n, d) with one label per row")
        if J is None:
            J = int(ys.max())
        samples = []
        for i in range(X.shape[0]):
            t = None if targets is None else float(targets[i])
            samples.append(Sample(X[i], int(ys[i]), t))
        return cls(tuple(samples), X.shape[1], J)

    def features(self):
        """Feature matrix of shape (n, d)."""
        return np.array([s.x for s in self.samples])

    def labels(self):
        return np.array([s.y for s in self.samples], dtype=int)

    def targets(self):
        return np.array([s.target if s.target is not None else float(s.y)
                         for s in self.samples])


@dataclass(frozen=True)
class CostParams:
    """Transport cost parameters; kappa is the label-switch price."""

    kappa: float

    def __post_init__(self):
        if not (self.kappa > 0):
            raise ValidationError(f"kappa must be positive, got {self.kappa}")


@dataclass(frozen=True)
class RobustnessConfig:
    """Uncertainty radius rho and smoothing level beta."""

    rho: float
    beta: float

    def __post_init__(self):
        if not (self.rho > 0):
            raise ValidationError(f"rho must be positive, got {self.rho}")
        if not (self.beta > 0):
            raise ValidationError(f"beta must be positive, got {self.beta}")


@dataclass(frozen=True)
class ParamBox:
    """Axis-aligned feasible box for theta times the segment for lambda."""

    theta_lo: np.ndarray
    theta_hi: np.ndarray
    lambda_min: float
    lambda_max: float

    def __post_init__(self):
        object.__setattr__(self, "theta_lo", _frozen_array(self.theta_lo))
        object.__setattr__(self, "theta_hi", _frozen_array(self.theta_hi))
        if self.theta_lo.shape != self.theta_hi.shape or self.theta_lo.ndim != 1:
            raise ValidationError("theta bounds must be 1-D vectors of equal length")
        if np.any(self.theta_lo > self.theta_hi):
            raise ValidationError("theta_lo must be <= theta_hi componentwise")
        if not (0 < self.lambda_min <= self.lambda_max):
            raise ValidationError(
                f"need 0 < lambda_min <= lambda_max, got [{self.lambda_min}, {self.lambda_max}]")

    @property
    def p(self):
        return self.theta_lo.size

    def contains(self, w, atol=0.0):
        ok_theta = np.all(w.theta >= self.theta_lo - atol) and \
            np.all(w.theta <= self.theta_hi + atol)
        ok_lam = self.lambda_min - atol <= w.lam <= self.lambda_max + atol
        return bool(ok_theta and ok_lam)


@dataclass(frozen=True)
class ParamPoint:
    """The joint decision variable (theta, lambda)."""

    theta: np.ndarray
    lam: float

    def __post_init__(self):
        object.__setattr__(self, "theta", _frozen_array(self.theta))
        object.__setattr__(self, "lam", float(self.lam))

    def as_vector(self):
        return np.concatenate([self.theta, [self.lam]])

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float)
        return cls(v[:-1], float(v[-1]))


def mixed_cost(xi: Sample, zeta: Sample, cp: CostParams) -> float:
    """Squared-norm transport cost plus a flat label-switch charge.

    c((x, y), (x', y')) = ||x - x'||^2 + kappa * 1{y != y'}.
    """
    if xi.d != zeta.d:
        raise DimensionMismatchError("xi", xi.d, "zeta", zeta.d)
    diff = xi.x - zeta.x
    return float(diff @ diff) + (cp.kappa if xi.y != zeta.y else 0.0)


def project_box(w: ParamPoint, box: ParamBox) -> ParamPoint:
    """Euclidean projection onto the box: componentwise clamp."""
    theta = np.clip(w.theta, box.theta_lo, box.theta_hi)
    lam = min(max(w.lam, box.lambda_min), box.lambda_max)
    return ParamPoint(theta, lam)


@dataclass(frozen=True)
class NoiseBank:
    """The m fixed perturbation pairs (omega_l, z_l) shared by a whole run.

    Gaussians are produced by Box-Muller over PCG64 uniform doubles, one
    block of draws per index l, so the first m rows of a larger bank with
    the same seed form exactly this bank (nested-bank property).
    """

    omegas: np.ndarray
    zs: np.ndarray
    sigma2: float
    seed: int
    J: int

    def __post_init__(self):
        object.__setattr__(self, "omegas", _frozen_array(self.omegas))
        object.__setattr__(self, "zs", _frozen_array(self.zs, dtype=int))
        if self.omegas.ndim != 2 or self.omegas.shape[0] != self.zs.size:
            raise ValidationError("omegas must be (m, d) with one label per row")
        if self.omegas.shape[0] < 1:
            raise ValidationError("a noise bank needs m >= 1")
        if not (self.sigma2 > 0):
            raise ValidationError(f"sigma2 must be positive, got {self.sigma2}")

    @property
    def m(self):
        return self.omegas.shape[0]

    @property
    def d(self):
        return self.omegas.shape[1]

    def sq_norms(self):
        """||omega_l||^2 for every l, shape (m,)."""
        return np.einsum("ld,ld->l", self.omegas, self.omegas)

    def prefix(self, m):
        """First-m sub-bank; identical to sampling with the same seed and smaller m."""
        if not 1 <= m <= self.m:
            raise ValidationError(f"prefix length {m} outside 1..{self.m}")
        return NoiseBank(self.omegas[:m], self.zs[:m], self.sigma2, self.seed, self.J)

    def to_json(self):
        return json.dumps({
            "seed": self.seed, "m": self.m, "d": self.d, "J": self.J,
            "sigma2": self.sigma2,
            "omegas": [[repr(v) for v in row] for row in self.omegas.tolist()],
            "zs": self.zs.tolist(),
        })

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        omegas = np.array([[float(v) for v in row] for row in doc["omegas"]])
        return cls(omegas, np.array(doc["zs"], dtype=int), doc["sigma2"],
                   doc["seed"], doc["J"])


def sample_noise_bank(m: int, d: int, J: int, sigma2: float, seed: int) -> NoiseBank:
    """Draw the fixed Monte Carlo bank: m Gaussian vectors N(0, sigma2 I_d)
    and m uniform labels in 1..J, deterministically from the seed.

    The uniform stream is consumed in blocks of (2*ceil(d/2) + 1) doubles per
    index l: Box-Muller pairs for the Gaussian coordinates, then one double
    for the label. Banks of different m but equal seed are nested.
    """
    if m < 1:
        raise ValidationError(f"m must be >= 1, got {m}")
    if d < 1 or J < 1:
        raise ValidationError(f"need d >= 1 and J >= 1, got d={d}, J={J}")
    if not sigma2 > 0:
        raise ValidationError(f"sigma2 must be positive, got {sigma2}")
    rng = np.random.Generator(np.random.PCG64(seed))
    npairs = (d + 1) // 2
    u = rng.random((m, 2 * npairs + 1))
    u1 = 1.0 - u[:, 0:2 * npairs:2]          # in (0, 1], keeps log finite
    u2 = u[:, 1:2 * npairs:2]
    r = np.sqrt(-2.0 * np.log(u1))
    gauss = np.empty((m, 2 * npairs))
    gauss[:, 0::2] = r * np.cos(2.0 * np.pi * u2)
    gauss[:, 1::2] = r * np.sin(2.0 * np.pi * u2)
    omegas = math.sqrt(sigma2) * gauss[:, :d]
    zs = np.minimum((u[:, -1] * J).astype(int) + 1, J)
    return NoiseBank(omegas, zs, sigma2, int(seed), int(J))


@dataclass(frozen=True)
class ColumnSchema:
    """CSV column layout: which column holds the label, which hold features.

    feature_columns None means "all columns except label and target".
    num_labels None infers J as the maximum label seen.
    """

    label_column: str = "y"
    feature_columns: tuple | None = None
    target_column: str | None = None
    num_labels: int | None = None


def load_dataset(path, schema: ColumnSchema | None = None) -> Dataset:
    """Read a header-ful CSV into a Dataset, preserving row order.

    Errors name the offending 1-based data row.
    """
    schema = schema or ColumnSchema()
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot open dataset file {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValidationError(f"dataset file {path} is empty")
        header = list(reader.fieldnames)
        if schema.label_column not in header:
            raise ValidationError(f"label column {schema.label_column!r} not in header {header}")
        if schema.feature_columns is not None:
            feats = list(schema.feature_columns)
            missing = [c for c in feats if c not in header]
            if missing:
                raise ValidationError(f"feature columns {missing} not in header {header}")
        else:
            drop = {schema.label_column, schema.target_column}
            feats = [c for c in header if c not in drop]
        if not feats:
            raise ValidationError("no feature columns left after removing label/target")

        X, ys, targets = [], [], []
        for rownum, row in enumerate(reader, start=1):
            try:
                X.append([float(row[c]) for c in feats])
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"row {rownum}: non-numeric feature cell ({exc})") from exc
            raw = row[schema.label_column]
            try:
                y = int(raw)
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"row {rownum}: non-integer label {raw!r}") from exc
            if y < 1:
                raise ValidationError(f"row {rownum}: labels are 1-based, got {y}")
            if schema.num_labels is not None and y > schema.num_labels:
                raise ValidationError(
                    f"row {rownum}: label {y} exceeds num_labels={schema.num_labels}")
            ys.append(y)
            if schema.target_column is not None:
                try:
                    targets.append(float(row[schema.target_column]))
                except (TypeError, ValueError) as exc:
                    raise ValidationError(f"row {rownum}: non-numeric target ({exc})") from exc
    if not X:
        raise ValidationError(f"dataset file {path} has no data rows")
    J = schema.num_labels if schema.num_labels is not None else max(ys)
    return Dataset.from_arrays(np.array(X), np.array(ys), J=J,
                               targets=targets if targets else None)
