"""Real-space potential models.

The physical model is a quartic double well in x, harmonic in y, with a
bilinear coupling; it is clamped at a threshold energy and then
represented as a short sum of origin-centred anisotropic Gaussians plus
a constant offset, fitted by gradient descent.  The Gaussian-sum form is
what the phase-space scattering kernel is derived from, so its
positive-definiteness invariant (4*a*c > b^2 per term) is enforced
throughout the fit.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .rng import RngContract


class PotentialError(ValueError):
    pass


@dataclass(frozen=True)
class DoubleWellParams:
    """Quartic/harmonic well coefficients, all in atomic units.

    V(x, y) = -a0/2 x^2 + c0/4 x^4 + m w^2/2 y^2 - c x y
    """

    a0: float
    c0: float
    m: float
    omega: float
    c: float

    def __post_init__(self):
        for name in ("a0", "c0", "m", "omega"):
            if getattr(self, name) <= 0:
                raise PotentialError(f"{name} must be positive")

    @property
    def x_well(self):
        """Distance from the barrier top to either minimum (c = 0)."""
        return math.sqrt(self.a0 / self.c0)

    @property
    def barrier_height(self):
        return self.a0**2 / (4.0 * self.c0)

    @property
    def omega_x(self):
        """Curvature frequency at a well bottom: V''(x_well) = 2 a0."""
        return math.sqrt(2.0 * self.a0 / self.m)


def derive_quartic_coefficients(x_well, barrier_height):
    """Invert x_well = sqrt(a0/c0), barrier = a0^2/(4 c0) for (a0, c0)."""
    if x_well <= 0 or barrier_height <= 0:
        raise PotentialError("x_well and barrier_height must be positive")
    a0 = 4.0 * barrier_height / x_well**2
    c0 = a0 / x_well**2
    return a0, c0


def eval_double_well(params, x, y):
    """Evaluate the double-well polynomial at (x, y), vectorized."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return (
        -0.5 * params.a0 * x**2
        + 0.25 * params.c0 * x**4
        + 0.5 * params.m * params.omega**2 * y**2
        - params.c * x * y
    )


def truncate(v, v_thr):
    """Clamp energies at the threshold: min(v, v_thr), elementwise."""
    return np.minimum(v, v_thr)


@dataclass(frozen=True)
class GaussianTerm:
    """One Gaussian: A * exp(-(a x^2 + b x y + c y^2)), plus offset h."""

    A: float
    a: float
    b: float
    c: float
    h: float = 0.0

    def __post_init__(self):
        if 4.0 * self.a * self.c - self.b**2 <= 0:
            raise PotentialError(
                f"exponent not positive definite: 4ac - b^2 = {4 * self.a * self.c - self.b ** 2:g}"
            )


@dataclass(frozen=True)
class GaussianSumModel:
    terms: tuple

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if not self.terms:
            raise PotentialError("model needs at least one term")

    @property
    def offset(self):
        return sum(t.h for t in self.terms)


def eval_gaussian_sum(model, x, y):
    """Sum_i A_i exp(-(a_i x^2 + b_i x y + c_i y^2)) + sum_i h_i."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.full(np.broadcast(x, y).shape, model.offset, dtype=float)
    for t in model.terms:
        out += t.A * np.exp(-(t.a * x**2 + t.b * x * y + t.c * y**2))
    return out


# ---------------------------------------------------------------------------
# fitting


@dataclass
class FitConfig:
    """Controls for the Gaussian-sum least-squares fit.

    The sample grid is uniform over [x_min, x_max] x [y_min, y_max].
    ``low_region_weight`` multiplies the squared residual wherever the
    target lies at or below ``low_region_threshold`` (the dynamically
    relevant valley); 1 means a plain unweighted fit.
    """

    n_terms: int = 3
    x_min: float = -2.8346
    x_max: float = 2.8346
    y_min: float = -1.8897
    y_max: float = 1.8897
    nx: int = 101
    ny: int = 101
    v_thr: float = 0.14700
    learning_rate: float = 0.1
    max_iter: int = 12000
    tol: float = 1e-10
    n_restarts: int = 8
    low_region_weight: float = 1.0
    low_region_threshold: float = 0.036749
    amplitude_cap: float = 1.1025
    seed: int = 2024
    init_scale: float = 0.35

    def __post_init__(self):
        if self.v_thr <= 0:
            raise PotentialError("v_thr must be positive")
        if self.max_iter < 1:
            raise PotentialError("iteration budget must be >= 1")
        if self.n_terms < 1:
            raise PotentialError("need at least one term")


@dataclass
class FitReport:
    converged: bool
    iterations: int
    loss: float
    rmse_full: float
    rmse_low: float
    restarts_used: int

    def to_dict(self):
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "loss": self.loss,
            "rmse_full": self.rmse_full,
            "rmse_low": self.rmse_low,
            "restarts_used": self.restarts_used,
        }


def _theta_to_model(theta, n_terms):
    terms = []
    for i in range(n_terms):
        A, a, b, c = theta[4 * i : 4 * i + 4]
        # the shared offset is carried on the first term
        h = theta[-1] if i == 0 else 0.0
        terms.append(GaussianTerm(A=float(A), a=float(a), b=float(b), c=float(c), h=float(h)))
    return GaussianSumModel(tuple(terms))


def _project_posdef(theta, n_terms, eps=1e-3, amplitude_cap=None):
    """Clamp widths positive, pull b back inside 4ac(1-eps) > b^2, and cap
    amplitudes (uncapped amplitude pairs can cancel to arbitrary
    precision on the sample grid while extrapolating badly)."""
    for i in range(n_terms):
        ia, ib, ic = 4 * i + 1, 4 * i + 2, 4 * i + 3
        if amplitude_cap is not None:
            theta[4 * i] = float(np.clip(theta[4 * i], -amplitude_cap, amplitude_cap))
        theta[ia] = max(theta[ia], 1e-4)
        theta[ic] = max(theta[ic], 1e-4)
        lim = 4.0 * theta[ia] * theta[ic] * (1.0 - eps)
        if theta[ib] ** 2 > lim:
            theta[ib] = math.copysign(math.sqrt(lim), theta[ib])
    return theta


def fit_loss_and_gradient(theta, n_terms, X, Y, target, weights):
    """Weighted MSE and its analytic gradient for the Gaussian-sum model.

    The gradient is hand-derived: d/dA = E, d/da = -A x^2 E, etc., chained
    through the residual.  Parameter layout: [A,a,b,c]*n_terms + [h].
    """
    wsum = weights.sum()
    resid = np.full_like(X, theta[-1])
    exps = []
    for i in range(n_terms):
        A, a, b, c = theta[4 * i : 4 * i + 4]
        E = np.exp(-(a * X**2 + b * X * Y + c * Y**2))
        exps.append(E)
        resid += A * E
    resid -= target
    wr = weights * resid
    loss = float((wr * resid).sum() / wsum)
    grad = np.empty_like(theta)
    wr2 = (2.0 / wsum) * wr
    for i in range(n_terms):
        A = theta[4 * i]
        E = exps[i]
        grad[4 * i] = (wr2 * E).sum()
        q = wr2 * (A * E)
        grad[4 * i + 1] = -(q * X * X).sum()
        grad[4 * i + 2] = -(q * X * Y).sum()
        grad[4 * i + 3] = -(q * Y * Y).sum()
    grad[-1] = wr2.sum()
    return loss, grad


def _initial_guess(cfg, rng, attempt):
    """Spread of structured starts: a positive and a deeper negative term
    compete along x to carve the wells; remaining terms start small."""
    v = cfg.v_thr
    base = []
    signs = [1.0, -1.0] + [(-1.0) ** k for k in range(cfg.n_terms - 2)]
    scales = [2.0 * v, -3.0 * v] + [0.3 * v * (-1.0) ** k for k in range(cfg.n_terms - 2)]
    for i in range(cfg.n_terms):
        A = scales[i] * (1.0 + cfg.init_scale * rng.standard_normal())
        a = abs(0.5 + 0.8 * rng.random()) * (1.0 + 0.3 * rng.standard_normal()) ** 2
        b = 0.1 * rng.standard_normal()
        c = abs(0.8 + 1.2 * rng.random()) * (1.0 + 0.3 * rng.standard_normal()) ** 2
        base += [A, max(a, 0.05), b, max(c, 0.05)]
    base.append(v * (1.0 + 0.1 * rng.standard_normal()))
    return _project_posdef(np.array(base), cfg.n_terms)


def _residual_and_jacobian(theta, n_terms, X, Y, target, sqw):
    """Weighted residual vector and its analytic Jacobian (columns follow
    the [A, a, b, c] * n_terms + [h] layout)."""
    npts = X.size
    resid = np.full(npts, theta[-1])
    J = np.empty((npts, len(theta)))
    xf, yf = X.ravel(), Y.ravel()
    for i in range(n_terms):
        A, a, b, c = theta[4 * i : 4 * i + 4]
        E = np.exp(-(a * xf**2 + b * xf * yf + c * yf**2))
        resid += A * E
        J[:, 4 * i] = E
        J[:, 4 * i + 1] = -A * xf * xf * E
        J[:, 4 * i + 2] = -A * xf * yf * E
        J[:, 4 * i + 3] = -A * yf * yf * E
    J[:, -1] = 1.0
    resid -= target.ravel()
    resid *= sqw
    J *= sqw[:, None]
    return resid, J


def _descend(theta, cfg, X, Y, target, weights):
    """Monotone descent: diagonal-scaled gradient warmup, then damped
    least-squares (Levenberg-Marquardt) refinement.  Every accepted step
    lowers the loss; rejected trial steps shrink and retry."""
    n_terms = cfg.n_terms
    loss, grad = fit_loss_and_gradient(theta, n_terms, X, Y, target, weights)
    lr = cfg.learning_rate
    msq = grad * grad
    warmup = min(cfg.max_iter, 1500)
    used = 0
    for _ in range(warmup):
        used += 1
        msq = 0.98 * msq + 0.02 * grad * grad
        step = lr * grad / (np.sqrt(msq) + 1e-14)
        accepted = False
        improvement = 0.0
        for _ in range(50):
            cand = _project_posdef(theta - step, n_terms, amplitude_cap=cfg.amplitude_cap)
            cand_loss, cand_grad = fit_loss_and_gradient(cand, n_terms, X, Y, target, weights)
            if cand_loss <= loss:
                improvement = loss - cand_loss
                theta, loss, grad = cand, cand_loss, cand_grad
                lr = min(lr * 1.1, 10.0)
                accepted = True
                break
            step *= 0.5
            lr *= 0.5
        if not accepted or lr < 1e-15 or improvement < 1e-4 * cfg.tol * max(loss, 1e-300):
            break

    sqw = np.sqrt(weights.ravel() / weights.sum())
    lam = 1e-3
    converged = False
    budget = max(cfg.max_iter - used, 50)
    for _ in range(min(budget, 600)):
        used += 1
        resid, J = _residual_and_jacobian(theta, n_terms, X, Y, target, sqw)
        jtj = J.T @ J
        jtr = J.T @ resid
        accepted = False
        for _ in range(24):
            try:
                delta = np.linalg.solve(jtj + lam * np.diag(np.diag(jtj).clip(min=1e-12)), -jtr)
            except np.linalg.LinAlgError:
                lam *= 4.0
                continue
            cand = _project_posdef(theta + delta, n_terms, amplitude_cap=cfg.amplitude_cap)
            cand_loss, _ = fit_loss_and_gradient(cand, n_terms, X, Y, target, weights)
            if cand_loss <= loss:
                improvement = loss - cand_loss
                theta = cand
                loss = cand_loss
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                break
            lam *= 4.0
        if not accepted:
            converged = True
            break
        if improvement < cfg.tol * max(loss, 1e-300):
            converged = True
            break
    return theta, loss, used, converged


def fit_gaussian_sum(target_fn, cfg):
    """Fit a Gaussian-sum model to ``target_fn(x, y)`` over the sample grid.

    The target is expected to be pre-clamped at ``cfg.v_thr``.  Runs
    ``cfg.n_restarts`` seeded starts and keeps the lowest loss.

    Returns
    -------
    (GaussianSumModel, FitReport)
    """
    xs = np.linspace(cfg.x_min, cfg.x_max, cfg.nx)
    ys = np.linspace(cfg.y_min, cfg.y_max, cfg.ny)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    target = np.asarray(target_fn(X, Y), dtype=float)
    if not np.all(np.isfinite(target)):
        raise PotentialError("target potential is not finite on the sample grid")
    low = target <= cfg.low_region_threshold
    weights = np.ones_like(target)
    if cfg.low_region_weight != 1.0 and low.any():
        weights[low] = cfg.low_region_weight

    rng = RngContract(cfg.seed).tagged(RngContract.FIT_STREAM)
    best = None
    converged_any = False
    for attempt in range(max(cfg.n_restarts, 1)):
        theta0 = _initial_guess(cfg, rng, attempt)
        theta0 = _project_posdef(theta0, cfg.n_terms, amplitude_cap=cfg.amplitude_cap)
        theta, loss, iters, conv = _descend(theta0, cfg, X, Y, target, weights)
        converged_any = converged_any or conv
        if best is None or loss < best[1]:
            best = (theta, loss, iters, conv)
    theta, loss, iters, conv = best

    model = _theta_to_model(theta, cfg.n_terms)
    resid = eval_gaussian_sum(model, X, Y) - target
    rmse_full = float(np.sqrt((resid**2).mean()))
    rmse_low = float(np.sqrt((resid[low] ** 2).mean())) if low.any() else rmse_full
    report = FitReport(
        converged=conv,
        iterations=iters,
        loss=loss,
        rmse_full=rmse_full,
        rmse_low=rmse_low,
        restarts_used=max(cfg.n_restarts, 1),
    )
    return model, report


# ---------------------------------------------------------------------------
# model file round-trip


def model_to_json(model, v_thr=None, report=None):
    doc = {
        "terms": [{"A": t.A, "a": t.a, "b": t.b, "c": t.c, "h": t.h} for t in model.terms],
        "units": "hartree_bohr",
    }
    if v_thr is not None:
        doc["v_thr"] = float(v_thr)
    if report is not None:
        doc["fit_rmse_low"] = report.rmse_low
        doc["fit_rmse_full"] = report.rmse_full
    return json.dumps(doc, indent=2)


def model_from_json(text):
    doc = json.loads(text)
    if doc.get("units") != "hartree_bohr":
        raise PotentialError(f"unsupported units tag {doc.get('units')!r}")
    terms = tuple(GaussianTerm(A=t["A"], a=t["a"], b=t["b"], c=t["c"], h=t.get("h", 0.0)) for t in doc["terms"])
    return GaussianSumModel(terms), doc
