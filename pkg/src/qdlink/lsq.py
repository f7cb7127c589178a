"""Damped nonlinear least squares with numeric Jacobians.

A small, dependency-free Levenberg-Marquardt engine used by the basis
calibration, the g2 dip fit and the Stark model fits. Weights are
interpreted as inverse variances; for histogram counts use
poisson_weights. Bounds are handled by projecting trial steps onto the
box, which is adequate for the low-dimensional fits in this package.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, FitFailureError

_EPS_THIRD = float(np.finfo(float).eps) ** (1.0 / 3.0)

# Marquardt damping schedule: multiply on rejection, divide on acceptance.
_LAMBDA_UP = 2.0
_LAMBDA_DOWN = 3.0
_LAMBDA_MAX = 1e14
_LAMBDA_INIT = 1e-6


def poisson_weights(y) -> np.ndarray:
    """Default inverse-variance weights for count data: 1 / max(y, 1)."""
    y = np.asarray(y, dtype=float)
    return 1.0 / np.maximum(y, 1.0)


def numeric_jacobian(model: Callable, params, xs) -> np.ndarray:
    """Central-difference Jacobian d model / d params, shape (len(xs), n).

    Step size per parameter is eps^(1/3) * max(|p|, 1), a standard choice
    balancing truncation against roundoff for central differences.
    """
    p = np.asarray(params, dtype=float)
    xs = np.asarray(xs, dtype=float)
    n = p.size
    jac = np.empty((xs.shape[0], n))
    for j in range(n):
        h = _EPS_THIRD * max(abs(p[j]), 1.0)
        hi = p.copy()
        lo = p.copy()
        hi[j] += h
        lo[j] -= h
        f_hi = np.asarray(model(hi, xs), dtype=float)
        f_lo = np.asarray(model(lo, xs), dtype=float)
        if not (np.all(np.isfinite(f_hi)) and np.all(np.isfinite(f_lo))):
            raise FitFailureError(
                f"model returned non-finite values when perturbing parameter {j}"
            )
        jac[:, j] = (f_hi - f_lo) / (2.0 * h)
    return jac


@dataclass
class FitProblem:
    """Weighted least-squares problem min sum w (y - model(p, x))^2."""

    model: Callable
    x: np.ndarray
    y: np.ndarray
    p0: np.ndarray
    weights: Optional[np.ndarray] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    gtol: float = 1e-10
    xtol: float = 1e-12
    ftol: float = 1e-12
    max_iter: int = 200

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.p0 = np.asarray(self.p0, dtype=float)
        n = self.p0.size
        m = self.y.size
        if m < n:
            raise ConfigError(f"{m} data points cannot constrain {n} parameters")
        if self.weights is None:
            self.weights = np.ones(m)
        else:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != self.y.shape or np.any(self.weights < 0):
                raise ConfigError("weights must be nonnegative and match y")
        self.lower = (
            np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        )
        self.upper = (
            np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, float)
        )
        if np.any(self.lower > self.upper):
            raise ConfigError("lower bounds exceed upper bounds")


@dataclass
class FitResult:
    params: np.ndarray
    covariance: Optional[np.ndarray]
    cost: float
    residual_norm: float
    iterations: int
    converged: bool
    reason: str = ""
    history: list = field(default_factory=list)


def _cost(problem: FitProblem, p: np.ndarray) -> tuple[float, np.ndarray]:
    f = np.asarray(problem.model(p, problem.x), dtype=float)
    r = problem.y - f
    return float(np.sum(problem.weights * r * r)), r


def lm_fit(problem: FitProblem) -> FitResult:
    """Levenberg-Marquardt minimization of a FitProblem.

    Accepted steps never increase the cost; parameters never leave the
    bound box. Non-convergence within max_iter returns a flagged result,
    while unrecoverable damping overflow raises FitFailureError. The
    covariance is pinv(J^T W J) scaled by the reduced chi-square, so it
    tracks the actual residual scatter when weights are only relative.
    """
    p = np.clip(problem.p0.astype(float), problem.lower, problem.upper)
    cost, r = _cost(problem, p)
    if not np.isfinite(cost):
        raise FitFailureError("cost is not finite at the initial parameters")
    lam = _LAMBDA_INIT
    w = problem.weights
    converged = False
    reason = "max iterations reached"
    iterations = 0
    history = [cost]

    for iterations in range(1, problem.max_iter + 1):
        jac = numeric_jacobian(problem.model, p, problem.x)
        a = jac.T @ (w[:, None] * jac)
        g = jac.T @ (w * r)
        if np.max(np.abs(g)) < problem.gtol:
            converged = True
            reason = "gradient tolerance reached"
            break
        diag = np.maximum(np.diag(a), 1e-12)

        accepted = False
        any_solved = False
        while lam <= _LAMBDA_MAX:
            try:
                step = np.linalg.solve(a + lam * np.diag(diag), g)
                any_solved = True
            except np.linalg.LinAlgError:
                lam *= _LAMBDA_UP
                continue
            trial = np.clip(p + step, problem.lower, problem.upper)
            trial_cost, trial_r = _cost(problem, trial)
            if np.isfinite(trial_cost) and trial_cost < cost:
                step_size = np.linalg.norm(trial - p)
                cost_drop = cost - trial_cost
                p, cost, r = trial, trial_cost, trial_r
                lam = max(lam / _LAMBDA_DOWN, 1e-12)
                accepted = True
                history.append(cost)
                if step_size < problem.xtol * (np.linalg.norm(p) + problem.xtol):
                    converged = True
                    reason = "step tolerance reached"
                elif cost_drop <= problem.ftol * max(cost, 1e-300):
                    converged = True
                    reason = "cost tolerance reached"
                break
            lam *= _LAMBDA_UP
        if not accepted:
            if not any_solved:
                raise FitFailureError(
                    "normal equations unsolvable even with maximal damping"
                )
            converged = True
            reason = "no further improvement possible"
            break
        if converged:
            break

    jac = numeric_jacobian(problem.model, p, problem.x)
    a = jac.T @ (w[:, None] * jac)
    try:
        covariance = np.linalg.pinv(a, hermitian=True)
        # Scale by reduced chi-square so the estimate reflects the actual
        # scatter even when the weights are only relative.
        m, n = problem.y.size, p.size
        if m > n:
            covariance = covariance * (cost / (m - n))
    except np.linalg.LinAlgError:
        covariance = None
    return FitResult(
        params=p,
        covariance=covariance,
        cost=cost,
        residual_norm=float(np.sqrt(cost)),
        iterations=iterations,
        converged=converged,
        reason=reason,
        history=history,
    )
