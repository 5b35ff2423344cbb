"""Brute-force ground truth on low-dimensional toys: the unregularized
per-sample dual, its maximizer sets and Clarke subdifferential, enlargement
membership tests, and grid-certified critical sets.

Deliberately desk-scale: continuous dimension d <= 2 and small parameter
counts, since grid searches and Minkowski sums explode otherwise.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .errors import ValidationError
from .model import CostParams, Dataset, ParamBox, ParamPoint, Sample
from .losses import GrowthCert, LossModel


@dataclass(frozen=True)
class CompactWindow:
    """Box window around x_xi certified to contain every dual maximizer for
    all (theta, lambda) in the box; the label factor is always the full set."""

    center: np.ndarray
    radius: float
    J: int

    def lo(self):
        return self.center - self.radius

    def hi(self):
        return self.center + self.radius

    def contains(self, x, atol=1e-9):
        return bool(np.all(np.abs(np.asarray(x) - self.center) <= self.radius + atol))


@dataclass(frozen=True)
class ArgmaxSet:
    """Finite representation of the tol-level set of dual maximizers."""

    points: tuple          # of (x: ndarray, z: int)
    h_star: float

    def __post_init__(self):
        if len(self.points) < 1:
            raise ValidationError("an argmax set cannot be empty")


@dataclass(frozen=True)
class SubdiffSet:
    """Convex hull of extreme gradients, one (p+1)-vector per argmax point."""

    vertices: np.ndarray   # (V, p+1)

    def __post_init__(self):
        if self.vertices.ndim != 2 or self.vertices.shape[0] < 1:
            raise ValidationError("a subdifferential needs at least one vertex")


def min_loss_over_box(model: LossModel, xi: Sample, box: ParamBox, starts=5,
                      seed=7):
    """min over the theta box of f(theta, xi), by multi-start L-BFGS-B."""
    yv = model.eval_label(xi, xi.y)
    rng = np.random.Generator(np.random.PCG64(seed))
    bounds = list(zip(box.theta_lo, box.theta_hi))
    best = np.inf
    inits = [0.5 * (box.theta_lo + box.theta_hi)]
    inits += [box.theta_lo + (box.theta_hi - box.theta_lo) * rng.random(box.p)
              for _ in range(starts - 1)]
    for t0 in inits:
        res = minimize(lambda t: model.value(t, xi.x, yv), t0, method="L-BFGS-B",
                       jac=lambda t: model.grad_theta(t, xi.x, yv), bounds=bounds)
        best = min(best, float(res.fun))
    return best


def compact_window(cert: GrowthCert, model: LossModel, box: ParamBox,
                   cp: CostParams, J=None, margin=1.5) -> CompactWindow:
    """Window radius from the growth certificate's sublevel construction:
    (lambda_xi / 2) r^2 >= margin * (mu_xi - min_theta f(theta, xi))."""
    if cert.lambda_growth <= 0:
        raise ValidationError("compact windows need a positive growth rate; "
                              "request a positive lambda_xi for this loss")
    xi = cert.sample
    gap = cert.mu - min_loss_over_box(model, xi, box)
    r2 = 2.0 * margin * max(gap, 0.0) / cert.lambda_growth
    radius = max(float(np.sqrt(r2)), 1e-6)
    return CompactWindow(center=xi.x.copy(), radius=radius,
                         J=J or (1 if model.uses_real_target else 2))


def _h_value(model, theta, lam, xi, cp, x, z):
    yv = model.eval_label(xi, z)
    cost = float(np.sum((x - xi.x) ** 2)) + (cp.kappa if z != xi.y else 0.0)
    return model.value(theta, x, yv) - lam * cost


def _ascend(model, theta, lam, xi, cp, window, x0, z, steps, step0=1e-2):
    """Projected gradient ascent on x within the window, step halving on
    non-improvement; never returns a worse point than x0."""
    x = np.clip(x0, window.lo(), window.hi())
    best = _h_value(model, theta, lam, xi, cp, x, z)
    step = step0
    yv = model.eval_label(xi, z)
    for _ in range(steps):
        g = model.grad_x(theta, x, yv) - 2.0 * lam * (x - xi.x)
        cand = np.clip(x + step * g, window.lo(), window.hi())
        val = _h_value(model, theta, lam, xi, cp, cand, z)
        if val > best:
            x, best = cand, val
        else:
            step *= 0.5
            if step < 1e-14:
                break
    return x, best


def brute_force_phi(model: LossModel, theta, lam, xi: Sample,
                    window: CompactWindow, cp: CostParams, grid=101,
                    tol_argmax=None, top_k=5, refine_steps=200):
    """Grid search over window x labels, then local ascent from the top-k
    cells; returns (phi, tol-level argmax set)."""
    d = xi.d
    if d > 2:
        raise ValidationError(f"brute-force oracle is limited to d <= 2, got d={d}")
    if grid < 3:
        raise ValidationError(f"grid resolution must be >= 3, got {grid}")
    axes = [np.linspace(window.lo()[j], window.hi()[j], grid) for j in range(d)]
    if d == 1:
        pts = axes[0][:, None]
    else:
        g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
        pts = np.stack([g0.ravel(), g1.ravel()], axis=1)
    cell = 2.0 * window.radius / (grid - 1)

    cand_x, cand_z, cand_h = [], [], []
    sq = np.einsum("kd,kd->k", pts - xi.x[None, :], pts - xi.x[None, :])
    for z in range(1, window.J + 1):
        yv = model.eval_label(xi, z)
        cost = sq + (cp.kappa if z != xi.y else 0.0)
        h = model.value_batch(theta, pts, np.full(len(pts), yv)) - lam * cost
        top = np.argsort(h)[-top_k:]
        for idx in top:
            x_ref, h_ref = _ascend(model, theta, lam, xi, cp, window, pts[idx], z,
                                   steps=refine_steps)
            cand_x.append(x_ref)
            cand_z.append(z)
            cand_h.append(h_ref)
        cand_x.extend(pts)
        cand_z.extend([z] * len(pts))
        cand_h.extend(h.tolist())

    cand_h = np.asarray(cand_h)
    h_star = float(np.max(cand_h))
    tol = tol_argmax if tol_argmax is not None else 1e-6 * (1.0 + abs(h_star))
    keep = np.flatnonzero(cand_h >= h_star - tol)

    # cluster near-duplicates (merge radius = 2 grid cells, per label)
    merged = []
    for idx in keep[np.argsort(-cand_h[keep])]:
        x, z = np.asarray(cand_x[idx]), cand_z[idx]
        dup = any(zz == z and np.linalg.norm(xx - x) <= 2.0 * cell
                  for xx, zz in merged)
        if not dup:
            merged.append((x, z))
    return h_star, ArgmaxSet(points=tuple(merged), h_star=h_star)


def clarke_subdiff(model: LossModel, theta, lam, xi: Sample, argmax: ArgmaxSet,
                   cp: CostParams) -> SubdiffSet:
    """Extreme gradients (grad_theta f(theta, zeta*), -c(xi, zeta*)) over the
    argmax points; their convex hull represents the Clarke subdifferential."""
    verts = []
    for x, z in argmax.points:
        yv = model.eval_label(xi, z)
        g = model.grad_theta(theta, x, yv)
        cost = float(np.sum((x - xi.x) ** 2)) + (cp.kappa if z != xi.y else 0.0)
        verts.append(np.concatenate([g, [-cost]]))
    return SubdiffSet(vertices=np.array(verts))


# ---------------------------------------------------------------------------
# convex-hull geometry
# ---------------------------------------------------------------------------

def _closest_on_segment(p, a, b):
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return a
    t = float((p - a) @ ab) / denom
    return a + min(max(t, 0.0), 1.0) * ab


def _closest_on_triangle(p, a, b, c):
    """Ericson's closest-point-on-triangle; only inner products, so it works
    in any ambient dimension."""
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = float(ab @ ap), float(ac @ ap)
    if d1 <= 0 and d2 <= 0:
        return a
    bp = p - b
    d3, d4 = float(ab @ bp), float(ac @ bp)
    if d3 >= 0 and d4 <= d3:
        return b
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        v = d1 / (d1 - d3) if d1 != d3 else 0.0
        return a + v * ab
    cpv = p - c
    d5, d6 = float(ab @ cpv), float(ac @ cpv)
    if d6 >= 0 and d5 <= d6:
        return c
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        w = d2 / (d2 - d6) if d2 != d6 else 0.0
        return a + w * ac
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return b + w * (c - b)
    denom = va + vb + vc
    v, w = vb / denom, vc / denom
    return a + v * ab + w * ac


def _project_simplex(v):
    """Euclidean projection onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.flatnonzero(u - css / np.arange(1, len(v) + 1) > 0)[-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


def _affine_minimizer(Vs, p):
    """Coefficients gamma (summing to 1, sign-free) minimizing ||gamma @ Vs - p||
    over the affine hull of the rows of Vs, via the KKT system."""
    k = Vs.shape[0]
    A = np.zeros((k + 1, k + 1))
    A[:k, :k] = 2.0 * (Vs @ Vs.T)
    A[:k, k] = 1.0
    A[k, :k] = 1.0
    b = np.concatenate([2.0 * (Vs @ p), [1.0]])
    sol = np.linalg.lstsq(A, b, rcond=None)[0]
    return sol[:k]


def _closest_on_hull_iterative(p, V, gap_tol=1e-9, max_iter=1000):
    """Wolfe's min-norm-point active-set method: alternates adding the vertex
    that most violates optimality with affine minimization over the active
    set, dropping vertices whose coefficient would go negative. Terminates
    with a Frank-Wolfe duality gap <= gap_tol."""
    n = V.shape[0]
    start = int(np.argmin(np.einsum("ij,ij->i", V - p, V - p)))
    active = [start]
    coef = np.array([1.0])
    for _ in range(max_iter):
        q = coef @ V[active]
        grad = 2.0 * (V @ (q - p))
        gap = float(grad[active] @ coef - np.min(grad))
        if gap <= gap_tol:
            break
        j = int(np.argmin(grad))
        if j not in active:
            active.append(j)
            coef = np.concatenate([coef, [0.0]])
        # minor cycles: pull the iterate toward the affine minimizer of the
        # active set, dropping blocking vertices until it is feasible
        for _ in range(n + 1):
            gamma = _affine_minimizer(V[active], p)
            if np.all(gamma >= -1e-12):
                coef = np.maximum(gamma, 0.0)
                coef /= coef.sum()
                break
            move = coef - gamma
            blocking = move > 1e-15
            t = float(np.min(coef[blocking] / move[blocking]))
            coef = coef + min(max(t, 0.0), 1.0) * (gamma - coef)
            keep = coef > 1e-13
            if keep.all():
                keep[int(np.argmin(coef))] = False
            active = [a for a, k in zip(active, keep) if k]
            coef = coef[keep]
            coef /= coef.sum()
    return coef @ V[active]


def closest_hull_point(p, vertices):
    p = np.asarray(p, dtype=float)
    V = np.asarray(vertices, dtype=float)
    if V.shape[0] == 1:
        return V[0]
    if V.shape[0] == 2:
        return _closest_on_segment(p, V[0], V[1])
    if V.shape[0] == 3:
        return _closest_on_triangle(p, V[0], V[1], V[2])
    return _closest_on_hull_iterative(p, V)


def dist_to_hull(point, hull: SubdiffSet) -> float:
    """Euclidean distance from point to conv(hull.vertices)."""
    q = closest_hull_point(point, hull.vertices)
    return float(np.linalg.norm(np.asarray(point, dtype=float) - q))


# ---------------------------------------------------------------------------
# normal cones of the box and criticality residuals
# ---------------------------------------------------------------------------

def _active_faces(w: ParamPoint, box: ParamBox, atol=1e-9):
    v = w.as_vector()
    lo = np.concatenate([box.theta_lo, [box.lambda_min]])
    hi = np.concatenate([box.theta_hi, [box.lambda_max]])
    return v <= lo + atol, v >= hi - atol


def project_normal_cone(u, w: ParamPoint, box: ParamBox, atol=1e-9):
    """Projection of u onto the (exact, active-face) normal cone N_K(w)."""
    lo_act, hi_act = _active_faces(w, box, atol)
    out = np.zeros_like(np.asarray(u, dtype=float))
    both = lo_act & hi_act
    out[hi_act] = np.maximum(u[hi_act], 0.0)
    out[lo_act] = np.minimum(u[lo_act], 0.0)
    out[both] = u[both]
    return out


def oracle_residual(sd: SubdiffSet, w: ParamPoint, box: ParamBox,
                    max_iter=2000) -> float:
    """dist(0, conv(vertices) + N_K(w)): minimize ||(-v) - Pi_N(-v)|| over
    the hull, a convex problem solved by projected gradient on the simplex."""
    V = sd.vertices
    n = V.shape[0]

    def resid_sq(q):
        return float(np.sum((q - project_normal_cone(q, w, box)) ** 2))

    if n == 1:
        return float(np.sqrt(resid_sq(-V[0])))
    alpha = np.full(n, 1.0 / n)
    lip = 2.0 * float(np.linalg.norm(V, 2)) ** 2
    step = 1.0 / max(lip, 1e-12)
    best = np.inf
    for _ in range(max_iter):
        q = -(alpha @ V)
        r = q - project_normal_cone(q, w, box)
        best = min(best, float(r @ r))
        grad = -2.0 * (V @ r)
        new = _project_simplex(alpha - step * grad)
        if np.linalg.norm(new - alpha) < 1e-14:
            alpha = new
            break
        alpha = new
    q = -(alpha @ V)
    best = min(best, resid_sq(q))
    # vertex checks guard against slow PGD corners
    for v in V:
        best = min(best, resid_sq(-v))
    return float(np.sqrt(best))


# ---------------------------------------------------------------------------
# full-objective subdifferential and enlargement membership
# ---------------------------------------------------------------------------

def objective_subdiff_map(model: LossModel, data: Dataset, windows, cp: CostParams,
                          rho: float, grid=101, top_k=5, refine_steps=200,
                          max_vertex_products=200000):
    """Callable w -> SubdiffSet of the oracle subdifferential of F at w:
    (0, rho) plus the Minkowski average of per-sample dual hulls, represented
    by vertex sums over the product of per-sample vertex choices.

    Results are memoized: probe lattices of enlargement sweeps revisit the
    same points many times and the field does not depend on beta or m.
    """
    if len(windows) != data.n:
        raise ValidationError("need one compact window per data point")
    cache = {}

    def field(w: ParamPoint) -> SubdiffSet:
        key = tuple(np.round(w.as_vector(), 10))
        if key in cache:
            return cache[key]
        per_sample = []
        for xi, win in zip(data.samples, windows):
            _, amax = brute_force_phi(model, w.theta, w.lam, xi, win, cp,
                                      grid=grid, top_k=top_k,
                                      refine_steps=refine_steps)
            per_sample.append(clarke_subdiff(model, w.theta, w.lam, xi, amax, cp)
                              .vertices)
        count = int(np.prod([len(v) for v in per_sample]))
        if count > max_vertex_products:
            raise ValidationError(
                f"vertex product {count} exceeds the desk-scale cap "
                f"{max_vertex_products}")
        offset = np.zeros(w.theta.size + 1)
        offset[-1] = rho
        verts = []
        for combo in itertools.product(*per_sample):
            verts.append(offset + np.mean(combo, axis=0))
        verts = np.unique(np.round(np.array(verts), 9), axis=0)
        out = SubdiffSet(vertices=verts)
        cache[key] = out
        return out

    return field


def probe_offsets(q, eps, spacing):
    """Grid offsets covering the eps-ball in R^q at the given spacing,
    ordered by distance from the origin."""
    steps = int(np.floor(eps / spacing))
    axis = spacing * np.arange(-steps, steps + 1)
    grids = np.meshgrid(*([axis] * q), indexing="ij")
    offs = np.stack([g.ravel() for g in grids], axis=1)
    norms = np.linalg.norm(offs, axis=1)
    offs = offs[norms <= eps]
    return offs[np.argsort(np.linalg.norm(offs, axis=1))]


def enlargement_member(grad, w: ParamPoint, eps: float, oracle_field,
                       box: ParamBox | None = None, spacing=None) -> bool:
    """True iff some probe w' with ||w' - w|| <= eps has
    dist(grad, oracle_field(w')) <= eps.

    The probe grid must resolve the ball at spacing <= eps/4.
    """
    if not eps > 0:
        raise ValidationError(f"enlargement level eps must be positive, got {eps}")
    spacing = spacing if spacing is not None else eps / 4.0
    if spacing > eps / 4.0 + 1e-15:
        raise ValidationError(
            f"probe spacing {spacing} too coarse; need <= eps/4 = {eps / 4.0}")
    grad = np.asarray(grad, dtype=float)
    q = grad.size
    seen = set()
    for off in probe_offsets(q, eps, spacing):
        wp = ParamPoint.from_vector(w.as_vector() + off)
        if box is not None:
            from .model import project_box
            wp = project_box(wp, box)
            if np.linalg.norm(wp.as_vector() - w.as_vector()) > eps + 1e-12:
                continue
        key = tuple(np.round(wp.as_vector(), 12))
        if key in seen:
            continue
        seen.add(key)
        if dist_to_hull(grad, oracle_field(wp)) <= eps:
            return True
    return False


def crit_set_grid(residual_fn, box: ParamBox, resolution: int, tol: float):
    """Grid points of the box where the criticality residual falls below tol."""
    if not tol > 0:
        raise ValidationError("tol must be positive: exact zeros are not "
                              "representable on a generic grid")
    if resolution < 2:
        raise ValidationError(f"grid resolution must be >= 2, got {resolution}")
    q = box.p + 1
    if q > 3:
        raise ValidationError(f"crit_set_grid is limited to p + 1 <= 3, got {q}")
    lo = np.concatenate([box.theta_lo, [box.lambda_min]])
    hi = np.concatenate([box.theta_hi, [box.lambda_max]])
    axes = [np.linspace(lo[j], hi[j], resolution) for j in range(q)]
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    out = []
    for v in pts:
        w = ParamPoint.from_vector(v)
        if residual_fn(w) < tol:
            out.append(w)
    return out
