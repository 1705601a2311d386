"""Effect-modification estimators for two exposures.

Two routes: a conditional-independence estimator built from exposure
residuals and regression-based conditional moments, and a projection
estimator that orthogonalises the exposure product against all additively
separable signal via alternating conditional expectations (ACE) before
taking a ratio of averages.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    Dataset,
    EstimateReport,
    EstimationError,
    FoldPlan,
    Link,
    link_eval,
    link_prime,
    report_from_influence,
)
from .crossfit import crossfit_predict
from .learners import LearnerSpec, fit_learner, predict_honest


@dataclass(frozen=True)
class InteractionNuisances:
    """Out-of-fold nuisances for the conditional-independence estimator."""

    e_a1: np.ndarray
    e_a2: np.ndarray
    mu: np.ndarray  # clipped fitted outcome mean at observed exposures
    g_mu: np.ndarray
    m1: np.ndarray  # E[{A2 - E(A2|L)} g(mu) | L]
    m2: np.ndarray  # E[{A1 - E(A1|L)} g(mu) | L]
    v1: np.ndarray  # E[{A1 - E(A1|L)}^2 | L], floored at 0
    v2: np.ndarray  # E[{A2 - E(A2|L)}^2 | L], floored at 0
    fold_plan: FoldPlan
    clip_count: int = 0
    learner_summaries: str = ""


@dataclass(frozen=True)
class AceResult:
    residual: np.ndarray
    variance_trace: np.ndarray
    iterations: int
    converged: bool


def _require_two_exposures(data: Dataset) -> None:
    if data.a2 is None:
        raise EstimationError("interaction estimators need a second exposure (a2)")


def fit_interaction_nuisances(
    data: Dataset,
    link: Link,
    spec: LearnerSpec,
    plan: FoldPlan,
    spec_moments: LearnerSpec | None = None,
) -> InteractionNuisances:
    """Cross-fit every conditional expectation the indep estimator uses.

    The conditional moments are fitted by regressing plug-in transforms
    (residual products and squared residuals) on the covariates with the
    same learner family; negative variance predictions are floored at 0.
    """
    _require_two_exposures(data)
    if spec_moments is None:
        spec_moments = spec
    counter = [0]
    (e_a1,) = crossfit_predict(data.l, data.a1, spec, plan)
    (e_a2,) = crossfit_predict(data.l, data.a2, spec, plan)
    if data.a1_binary:
        e_a1 = np.clip(e_a1, 0.0, 1.0)
    if data.a2_binary:
        e_a2 = np.clip(e_a2, 0.0, 1.0)
    X = np.column_stack([data.a1, data.a2, data.l])
    (mu,) = crossfit_predict(X, data.y, spec, plan)
    mu = link.clip(mu, counter)
    g_mu = link_eval(link, mu)
    r1 = data.a1 - e_a1
    r2 = data.a2 - e_a2
    (m1,) = crossfit_predict(data.l, r2 * g_mu, spec_moments, plan)
    (m2,) = crossfit_predict(data.l, r1 * g_mu, spec_moments, plan)
    (v1,) = crossfit_predict(data.l, r1 * r1, spec_moments, plan)
    (v2,) = crossfit_predict(data.l, r2 * r2, spec_moments, plan)
    v1 = np.maximum(v1, 0.0)
    v2 = np.maximum(v2, 0.0)
    return InteractionNuisances(
        e_a1=e_a1,
        e_a2=e_a2,
        mu=mu,
        g_mu=g_mu,
        m1=m1,
        m2=m2,
        v1=v1,
        v2=v2,
        fold_plan=plan,
        clip_count=counter[0],
        learner_summaries=f"all={spec.kind}, moments={spec_moments.kind}",
    )


def estimate_interaction_indep(
    data: Dataset, link: Link, nuis: InteractionNuisances
) -> EstimateReport:
    """Interaction estimator assuming conditionally independent exposures.

    Solves the influence-curve estimating equation in closed form. The
    centering terms pair each regression moment with the matching exposure
    residual, and the beta-dependent parts of the conditional expectations
    factorise as e1*v2 and e2*v1 under conditional independence.
    """
    _require_two_exposures(data)
    r1 = data.a1 - nuis.e_a1
    r2 = data.a2 - nuis.e_a2
    d = data.a1 * data.a2
    gp = link_prime(link, nuis.mu)
    signal = gp * (data.y - nuis.mu) + nuis.g_mu

    num_terms = r1 * r2 * signal - nuis.m1 * r1 - nuis.m2 * r2
    den_terms = r1 * r2 * d - nuis.e_a1 * nuis.v2 * r1 - nuis.e_a2 * nuis.v1 * r2
    denom = float(np.mean(den_terms))
    scale = max(float(np.var(data.a1) * np.var(data.a2)), 1e-300)
    if abs(denom) < 1e-12 * scale:
        raise EstimationError("degenerate interaction denominator")
    beta_hat = float(np.mean(num_terms)) / denom
    phi = (num_terms - beta_hat * den_terms) / denom
    return report_from_influence(
        beta_hat,
        phi,
        denominator=denom,
        n_clipped=nuis.clip_count,
        learner_summaries=nuis.learner_summaries,
    )


def ace_project(
    target: np.ndarray,
    data: Dataset,
    spec: LearnerSpec,
    tol: float = 1e-6,
    max_iter: int = 50,
) -> AceResult:
    """Residual of the projection onto additively separable functions.

    Alternately regresses the current residual on (A1, L) and on (A2, L),
    each time replacing the machine-learning prediction by its OLS
    calibration (intercept plus slope times prediction) before
    subtracting, which guarantees a non-increasing residual variance.
    Honest predictions (out-of-bag / leave-one-out) are used where the
    learner supports them, so the calibration slope reflects genuine
    predictive power rather than in-sample overfit. Stops when the
    relative variance decrease over a full sweep falls below ``tol``,
    when the residual variance or the variance of the predicted component
    is negligible, or at ``max_iter`` sweeps.
    """
    _require_two_exposures(data)
    target = np.asarray(target, dtype=float)
    if target.shape[0] != data.n:
        raise EstimationError("target length does not match dataset")
    if data.n < 50:
        raise EstimationError("ACE projection needs at least 50 rows")

    X1 = np.column_stack([data.a1, data.l])
    X2 = np.column_stack([data.a2, data.l])
    resid = target - target.mean()
    var0 = float(resid @ resid) / data.n
    trace = [var0]
    if var0 <= 0.0:
        return AceResult(residual=resid, variance_trace=np.asarray(trace),
                         iterations=0, converged=True)

    converged = False
    iterations = 0
    for sweep in range(max_iter):
        iterations = sweep + 1
        pred_var = 0.0
        for X in (X1, X2):
            fitted = fit_learner(spec, X, resid)
            raw = predict_honest(fitted, X)
            component = _ols_calibrate(raw, resid)
            resid = resid - component
            pred_var = max(pred_var, float(np.var(component)))
        var_k = float(resid @ resid) / data.n
        trace.append(var_k)
        if var_k <= 1e-8 * var0:
            converged = True
            break
        if pred_var <= 1e-8 * var0:
            converged = True
            break
        if (trace[-2] - var_k) / var0 < tol:
            converged = True
            break
    return AceResult(
        residual=resid,
        variance_trace=np.asarray(trace),
        iterations=iterations,
        converged=converged,
    )


def _ols_calibrate(raw: np.ndarray, resid: np.ndarray) -> np.ndarray:
    """Least-squares fit of resid on [1, raw]; returns the fitted values."""
    raw_c = raw - raw.mean()
    denom = float(raw_c @ raw_c)
    if denom <= 0.0:
        return np.full_like(resid, resid.mean())
    slope = float(raw_c @ (resid - resid.mean())) / denom
    return resid.mean() + slope * raw_c


def estimate_interaction_proj(
    data: Dataset,
    link: Link,
    spec: LearnerSpec,
    plan: FoldPlan,
    ace_tol: float = 1e-6,
    ace_max_iter: int = 50,
    spec_ace: LearnerSpec | None = None,
) -> EstimateReport:
    """Projection-based interaction estimator (no independence assumption).

    Cross-fits the outcome mean, then projects both the exposure product
    and the g-transformed fitted mean onto the orthocomplement of the
    additively separable space via ACE, and estimates the interaction as
    the ratio mean(P(A1A2) * (g'(mu)(Y - mu) + P(g(mu)))) / mean(P(A1A2)^2).
    """
    _require_two_exposures(data)
    if spec_ace is None:
        spec_ace = spec
    counter = [0]
    X = np.column_stack([data.a1, data.a2, data.l])
    (mu,) = crossfit_predict(X, data.y, spec, plan)
    mu = link.clip(mu, counter)
    g_mu = link_eval(link, mu)

    ace_d = ace_project(data.a1 * data.a2, data, spec_ace, tol=ace_tol, max_iter=ace_max_iter)
    ace_g = ace_project(g_mu, data, spec_ace, tol=ace_tol, max_iter=ace_max_iter)
    p_d = ace_d.residual
    p_g = ace_g.residual

    mean_p2 = float(p_d @ p_d) / data.n
    if mean_p2 < 1e-12 * max(float(np.var(data.a1 * data.a2)), 1e-300):
        raise EstimationError("no projected interaction variation")
    gp = link_prime(link, mu)
    signal = gp * (data.y - mu) + p_g
    beta_hat = float(np.mean(p_d * signal)) / mean_p2
    phi = p_d * (signal - beta_hat * p_d) / mean_p2
    return report_from_influence(
        beta_hat,
        phi,
        denominator=mean_p2,
        n_clipped=counter[0],
        learner_summaries=f"mu={spec.kind}, ace={spec_ace.kind}",
        extra_diagnostics={
            "ace_product_iterations": ace_d.iterations,
            "ace_product_converged": ace_d.converged,
            "ace_product_variance_trace": [float(v) for v in ace_d.variance_trace],
            "ace_gmu_iterations": ace_g.iterations,
            "ace_gmu_converged": ace_g.converged,
            "ace_gmu_variance_trace": [float(v) for v in ace_g.variance_trace],
        },
    )
