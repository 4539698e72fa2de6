"""Weighted nonlinear least squares for the decay and trend models.

Small Levenberg-Marquardt implementation with analytic jacobians for
the handful of model shapes the analyses need. Keeping the solver local
makes convergence failures explicit (FitError with the trajectory
context) instead of silently returning the last iterate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class FitError(RuntimeError):
    """Raised when the optimizer cannot reach the requested tolerance."""


@dataclass(frozen=True)
class Model:
    name: str
    n_params: int
    fn: Callable
    jac: Callable


def _double_exp(x, p):
    a1, t1, a2, t2 = p
    return a1 * np.exp(-x / t1) + a2 * np.exp(-x / t2)


def _double_exp_jac(x, p):
    a1, t1, a2, t2 = p
    e1, e2 = np.exp(-x / t1), np.exp(-x / t2)
    return np.stack([e1, a1 * x / t1**2 * e1, e2, a2 * x / t2**2 * e2], axis=1)


def _stretched_echo(x, p):
    a, t2, ex = p
    return a * np.exp(-2.0 * (2.0 * x / t2) ** ex)


def _stretched_echo_jac(x, p):
    a, t2, ex = p
    u = 2.0 * x / t2
    up = u**ex
    f = a * np.exp(-2.0 * up)
    # u ** ex * log(u) -> 0 as u -> 0 for ex > 0
    logu = np.where(u > 0, np.log(np.where(u > 0, u, 1.0)), 0.0)
    return np.stack(
        [f / a, f * 2.0 * ex * up / t2, f * (-2.0) * up * logu], axis=1
    )


def _quadratic(x, p):
    return p[0] + p[1] * x + p[2] * x**2


def _quadratic_jac(x, p):
    return np.stack([np.ones_like(x), x, x**2], axis=1)


def _inverse(x, p):
    return p[0] + p[1] / x


def _inverse_jac(x, p):
    return np.stack([np.ones_like(x), 1.0 / x], axis=1)


def _linear(x, p):
    return p[0] + p[1] * x


def _linear_jac(x, p):
    return np.stack([np.ones_like(x), x], axis=1)


MODELS = {
    m.name: m
    for m in (
        Model("double_exp", 4, _double_exp, _double_exp_jac),
        Model("stretched_echo", 3, _stretched_echo, _stretched_echo_jac),
        Model("quadratic", 3, _quadratic, _quadratic_jac),
        Model("inverse", 2, _inverse, _inverse_jac),
        Model("linear", 2, _linear, _linear_jac),
    )
}


@dataclass(frozen=True)
class FitResult:
    model: str
    params: np.ndarray
    cov: np.ndarray
    perr: np.ndarray
    chi2: float
    ndof: int
    n_iter: int
    converged: bool

    def predict(self, x):
        return MODELS[self.model].fn(np.asarray(x, dtype=float), self.params)


def numerical_jacobian(fn, x, p, eps=1e-6):
    """Central finite differences; oracle for the analytic jacobians."""
    p = np.asarray(p, dtype=float)
    cols = []
    for k in range(len(p)):
        step = eps * max(1.0, abs(p[k]))
        hi, lo = p.copy(), p.copy()
        hi[k] += step
        lo[k] -= step
        cols.append((fn(x, hi) - fn(x, lo)) / (2.0 * step))
    return np.stack(cols, axis=1)


def fit_nonlinear(model, x, y, p0, sigma=None, max_iter=200, rel_tol=1e-10):
    """Levenberg-Marquardt fit of a named model.

    Parameters
    ----------
    model : str
        Key into MODELS.
    x, y : arrays
    p0 : sequence
        Starting parameters; length must match the model.
    sigma : array, optional
        Per-point uncertainties. When given, the covariance comes from
        the weighted curvature as-is; otherwise it is scaled by the
        reduced chi-square.

    Raises FitError when the relative cost decrease never reaches
    ``rel_tol`` within ``max_iter`` accepted steps.
    """
    spec = MODELS[model]
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p = np.asarray(p0, dtype=float).copy()
    if len(p) != spec.n_params:
        raise ValueError(f"model {model} takes {spec.n_params} parameters, got {len(p)}")
    if len(x) <= spec.n_params:
        raise ValueError("need more points than parameters")
    if sigma is None:
        w = np.ones_like(y)
    else:
        sigma = np.asarray(sigma, dtype=float)
        if np.any(~np.isfinite(sigma)) or np.any(sigma <= 0):
            raise ValueError("sigma must be positive and finite")
        w = 1.0 / sigma

    def cost_of(params):
        r = (y - spec.fn(x, params)) * w
        return float(r @ r), r

    cost, resid = cost_of(p)
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        jac = spec.jac(x, p) * w[:, None]
        grad = jac.T @ resid
        hess = jac.T @ jac
        stepped = False
        while lam < 1e12:
            damped = hess + lam * np.diag(np.diag(hess).clip(min=1e-300))
            try:
                delta = np.linalg.solve(damped, grad)
            except np.linalg.LinAlgError:
                lam *= 2.0
                continue
            trial = p + delta
            new_cost, new_resid = cost_of(trial)
            if np.isfinite(new_cost) and new_cost <= cost:
                rel = (cost - new_cost) / max(cost, 1e-300)
                p, cost, resid = trial, new_cost, new_resid
                lam = max(lam / 3.0, 1e-12)
                stepped = True
                if rel < rel_tol:
                    converged = True
                break
            lam *= 2.0
        if converged:
            break
        if not stepped:
            # damping exhausted without an acceptable step: local minimum
            converged = True
            break
    if not converged:
        raise FitError(f"{model} fit did not converge in {max_iter} iterations (cost {cost:.4g})")

    jac = spec.jac(x, p) * w[:, None]
    hess = jac.T @ jac
    try:
        cov = np.linalg.inv(hess)
    except np.linalg.LinAlgError as exc:
        raise FitError(f"{model} fit curvature is singular at the optimum") from exc
    ndof = len(x) - spec.n_params
    if sigma is None and ndof > 0:
        cov = cov * cost / ndof
    return FitResult(
        model=model,
        params=p,
        cov=cov,
        perr=np.sqrt(np.diag(cov)),
        chi2=cost,
        ndof=ndof,
        n_iter=it,
        converged=True,
    )
