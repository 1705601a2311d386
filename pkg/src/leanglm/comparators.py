"""Benchmark estimators: GLM maximum likelihood, the E-estimator, the
semiparametric efficient-score (ES) estimator and the closed-form doubly
robust (DR) estimator.

The ES and DR estimators solve scalar estimating equations by bracketed
root finding; their standard errors use the empirical variance of the
plug-in estimating function divided by a numerically differentiated
Jacobian (the paper does not spell out its choice, see README).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .core import (
    Dataset,
    EstimateReport,
    EstimationError,
    Link,
    Z95,
    clip_prob,
    expit,
    report_from_influence,
)

_MAX_ABS_COEF = 30.0  # beyond this the logistic fit is treated as separated


@dataclass(frozen=True)
class GlmFit:
    coefficients: np.ndarray
    model_se: np.ndarray
    converged: bool
    iterations: int
    term_names: tuple[str, ...]

    def wald_ci(self, j: int) -> tuple[float, float]:
        return (
            float(self.coefficients[j] - Z95 * self.model_se[j]),
            float(self.coefficients[j] + Z95 * self.model_se[j]),
        )


def _design_matrix(data: Dataset, include_intercept: bool, interaction: bool = False):
    cols = []
    names = []
    if include_intercept:
        cols.append(np.ones(data.n))
        names.append("intercept")
    cols.append(data.a1)
    names.append("a1")
    if data.a2 is not None:
        cols.append(data.a2)
        names.append("a2")
    for j in range(data.d):
        cols.append(data.l[:, j])
        names.append(data.column_names[j])
    if interaction:
        if data.a2 is None:
            raise EstimationError("interaction term requires a second exposure")
        cols.append(data.a1 * data.a2)
        names.append("a1:a2")
    return np.column_stack(cols), tuple(names)


def _deviance(kind: str, y, mu):
    if kind == "identity":
        return float(np.sum((y - mu) ** 2))
    if kind == "logit":
        mu = np.clip(mu, 1e-12, 1.0 - 1e-12)
        return float(-2.0 * np.sum(y * np.log(mu) + (1.0 - y) * np.log(1.0 - mu)))
    mu = np.maximum(mu, 1e-12)
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(y > 0, y * np.log(y / mu), 0.0)
    return float(2.0 * np.sum(term - (y - mu)))


def fit_glm_mle(data: Dataset, link: Link, include_intercept: bool = True,
                interaction: bool = False) -> GlmFit:
    """Maximum likelihood for the canonical GLM with the given link.

    identity -> Gaussian least squares (one IRLS step, matches the closed
    form), logit -> Bernoulli, log -> Poisson. Fisher scoring with
    step-halving; model standard errors come from the inverse expected
    information.
    """
    X, names = _design_matrix(data, include_intercept, interaction)
    y = data.y
    n, p = X.shape
    rank = np.linalg.matrix_rank(X)
    if rank < p:
        raise EstimationError(f"design matrix is rank deficient ({rank} < {p})")

    if link.kind == "identity":
        coef, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ coef
        sigma2 = float(resid @ resid) / (n - p)
        cov = sigma2 * np.linalg.inv(X.T @ X)
        return GlmFit(
            coefficients=coef,
            model_se=np.sqrt(np.diag(cov)),
            converged=True,
            iterations=1,
            term_names=names,
        )

    beta = np.zeros(p)
    dev = _deviance(link.kind, y, _glm_mean(link.kind, X @ beta))
    converged = False
    iterations = 0
    for it in range(100):
        iterations = it + 1
        eta = X @ beta
        mu = _glm_mean(link.kind, eta)
        w = _glm_weight(link.kind, mu)
        score = X.T @ (y - mu)
        info = (X * w[:, None]).T @ X
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise EstimationError("singular information matrix in IRLS") from None
        new_beta = beta + step
        new_dev = _deviance(link.kind, y, _glm_mean(link.kind, X @ new_beta))
        halvings = 0
        while new_dev > dev + 1e-12 and halvings < 30:
            step *= 0.5
            new_beta = beta + step
            new_dev = _deviance(link.kind, y, _glm_mean(link.kind, X @ new_beta))
            halvings += 1
        beta = new_beta
        if np.max(np.abs(beta)) > _MAX_ABS_COEF:
            raise EstimationError(
                "diverging coefficients in IRLS: separation or quasi-separation suspected"
            )
        if abs(dev - new_dev) < 1e-10 * (abs(new_dev) + 1.0):
            dev = new_dev
            converged = True
            break
        dev = new_dev

    mu = _glm_mean(link.kind, X @ beta)
    w = _glm_weight(link.kind, mu)
    info = (X * w[:, None]).T @ X
    cov = np.linalg.inv(info)
    return GlmFit(
        coefficients=beta,
        model_se=np.sqrt(np.diag(cov)),
        converged=converged,
        iterations=iterations,
        term_names=names,
    )


def _glm_mean(kind: str, eta):
    if kind == "logit":
        return expit(eta)
    if kind == "log":
        return np.exp(np.minimum(eta, 500.0))
    return eta


def _glm_weight(kind: str, mu):
    if kind == "logit":
        return np.maximum(mu * (1.0 - mu), 1e-12)
    if kind == "log":
        return np.maximum(mu, 1e-12)
    return np.ones_like(mu)


# ---------------------------------------------------------------------------
# E-estimator
# ---------------------------------------------------------------------------

def e_estimator(data: Dataset, e_a: np.ndarray, omega0: np.ndarray) -> EstimateReport:
    """Exposure-residual moment estimator for the partially linear model."""
    resid_a = data.a1 - np.asarray(e_a, dtype=float)
    denom_sum = float(resid_a @ data.a1)
    if abs(denom_sum) < 1e-12 * data.n * max(float(np.var(data.a1)), 1e-300):
        raise EstimationError("no residual exposure variation for the E-estimator")
    omega0 = np.asarray(omega0, dtype=float)
    beta_hat = float(resid_a @ (data.y - omega0)) / denom_sum
    phi = resid_a * (data.y - beta_hat * data.a1 - omega0) / (denom_sum / data.n)
    return report_from_influence(beta_hat, phi, denominator=denom_sum / data.n)


# ---------------------------------------------------------------------------
# bracketed root finding for scalar estimating equations
# ---------------------------------------------------------------------------

def _solve_estimating_equation(mean_fn, label: str) -> float:
    lo, hi = -10.0, 10.0
    f_lo, f_hi = mean_fn(lo), mean_fn(hi)
    if np.sign(f_lo) == np.sign(f_hi):
        lo, hi = -30.0, 30.0
        f_lo, f_hi = mean_fn(lo), mean_fn(hi)
        if np.sign(f_lo) == np.sign(f_hi):
            raise EstimationError(
                f"{label}: estimating equation has no sign change on [-30, 30]"
            )
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    return float(brentq(mean_fn, lo, hi, xtol=1e-13, rtol=8.9e-16, maxiter=300))


def _sandwich_report(beta_hat: float, per_obs_fn, denominator_label: float = 0.0,
                     n_clipped: int = 0) -> EstimateReport:
    """EstimateReport for a root of mean(per-observation function) = 0.

    Influence values are the estimating-function values divided by the
    numerically differentiated Jacobian at the root.
    """
    s = per_obs_fn(beta_hat)
    h = 1e-6 * (1.0 + abs(beta_hat))
    jac = float(np.mean(per_obs_fn(beta_hat + h)) - np.mean(per_obs_fn(beta_hat - h))) / (2.0 * h)
    if jac == 0.0:
        raise EstimationError("flat estimating equation at the root")
    phi = -s / jac
    return report_from_influence(beta_hat, phi, denominator=jac, n_clipped=n_clipped)


# ---------------------------------------------------------------------------
# efficient-score estimator (partially linear logistic model)
# ---------------------------------------------------------------------------

def _es_parts(data: Dataset, mu0, mu1, e_a, clip_eps: float = 1e-6):
    counter = [0]
    mu0 = clip_prob(np.asarray(mu0, dtype=float), clip_eps, counter)
    mu1 = clip_prob(np.asarray(mu1, dtype=float), clip_eps, counter)
    e_a = clip_prob(np.asarray(e_a, dtype=float), clip_eps, counter)
    v0 = mu0 * (1.0 - mu0)
    v1 = mu1 * (1.0 - mu1)
    weight = data.a1 - (e_a * v1) / (e_a * v1 + (1.0 - e_a) * v0)
    offset = np.log(mu0) - np.log1p(-mu0)
    return weight, offset, counter[0]


def es_estimating_function(data: Dataset, mu0, mu1, e_a):
    weight, offset, n_clipped = _es_parts(data, mu0, mu1, e_a)

    def per_obs(beta: float) -> np.ndarray:
        return weight * (data.y - expit(beta * data.a1 + offset))

    return per_obs, n_clipped


def es_estimator(data: Dataset, mu0, mu1, e_a) -> float:
    """Root of the efficient-score equation for binary exposure and outcome."""
    per_obs, _ = es_estimating_function(data, mu0, mu1, e_a)
    return _solve_estimating_equation(lambda b: float(np.mean(per_obs(b))), "ES")


def es_report(data: Dataset, mu0, mu1, e_a) -> EstimateReport:
    per_obs, n_clipped = es_estimating_function(data, mu0, mu1, e_a)
    beta_hat = _solve_estimating_equation(lambda b: float(np.mean(per_obs(b))), "ES")
    return _sandwich_report(beta_hat, per_obs, n_clipped=n_clipped)


# ---------------------------------------------------------------------------
# closed-form doubly robust estimator
# ---------------------------------------------------------------------------

def dr_estimating_function(data: Dataset, e_a_given_y0, mu0):
    e0 = np.asarray(e_a_given_y0, dtype=float)
    m0 = np.asarray(mu0, dtype=float)
    base = (data.a1 - e0) * (data.y - m0)
    ay = data.a1 * data.y

    def per_obs(beta: float) -> np.ndarray:
        return base * np.exp(-beta * ay)

    return per_obs


def dr_estimator(data: Dataset, e_a_given_y0, mu0) -> float:
    """Root of the closed-form doubly robust equation (binary A and Y)."""
    per_obs = dr_estimating_function(data, e_a_given_y0, mu0)
    return _solve_estimating_equation(lambda b: float(np.mean(per_obs(b))), "DR")


def dr_report(data: Dataset, e_a_given_y0, mu0) -> EstimateReport:
    per_obs = dr_estimating_function(data, e_a_given_y0, mu0)
    beta_hat = _solve_estimating_equation(lambda b: float(np.mean(per_obs(b))), "DR")
    return _sandwich_report(beta_hat, per_obs)
