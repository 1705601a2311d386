"""K-fold cross-fitted out-of-fold nuisance predictions.

Every prediction for row i comes from a learner trained on the folds that
do not contain i. ``nuisance_main`` assembles the full set of conditional
expectations the main-effect estimator consumes, using the exact mixture
shortcut for binary exposures and an extra regression otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset, EstimationError, FoldPlan, Link, link_eval
from .learners import LearnerSpec, Predictor, fit_learner, predict


@dataclass(frozen=True)
class NuisanceFit:
    """Out-of-fold nuisance predictions for the main-effect estimator."""

    e_a1: np.ndarray
    mu: np.ndarray
    m_g: np.ndarray
    fold_plan: FoldPlan
    e_a2: np.ndarray | None = None
    mu_at: dict | None = None  # exposure level -> out-of-fold counterfactual mean
    extras: dict | None = None
    clip_count: int = 0
    learner_summaries: str = ""


def crossfit_predict(
    X: np.ndarray,
    target: np.ndarray,
    spec: LearnerSpec,
    plan: FoldPlan,
    X_eval: list[np.ndarray] | None = None,
) -> list[np.ndarray]:
    """Out-of-fold predictions, one output vector per evaluation matrix.

    Entry i of each output was produced by the learner fitted on the rows
    of all folds other than fold(i), applied to row i of the corresponding
    evaluation matrix (the training features themselves by default).
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    target = np.asarray(target, dtype=float)
    n = X.shape[0]
    if plan.n != n:
        raise EstimationError(f"fold plan covers {plan.n} rows, data has {n}")
    if X_eval is None:
        X_eval = [X]
    outs = [np.empty(n) for _ in X_eval]
    for k in range(plan.K):
        train = plan.complement_indices(k)
        hold = plan.fold_indices(k)
        if train.shape[0] < 10:
            raise EstimationError(
                f"fold {k}: training complement has {train.shape[0]} rows, need at least 10"
            )
        fitted = fit_learner(spec, X[train], target[train])
        for out, Xe in zip(outs, X_eval):
            Xe = np.asarray(Xe, dtype=float)
            if Xe.ndim == 1:
                Xe = Xe.reshape(-1, 1)
            out[hold] = predict(fitted, Xe[hold])
    return outs


def nuisance_main(
    data: Dataset,
    link: Link,
    spec_a: LearnerSpec,
    spec_y: LearnerSpec,
    spec_mg: LearnerSpec,
    plan: FoldPlan,
) -> NuisanceFit:
    """Cross-fitted E(A|L), E(Y|A,L) and E[g{E(Y|A,L)}|L].

    For a binary exposure, E[g{E(Y|A,L)}|L] is the exact mixture of the
    two counterfactual predictions; otherwise it is one more machine
    learning fit with the g-transformed (clipped) fitted mean as target.
    """
    counter = [0]
    (e_a1,) = crossfit_predict(data.l, data.a1, spec_a, plan)
    X_al = np.column_stack([data.a1, data.l])
    if data.a1_binary:
        e_a1 = np.clip(e_a1, 0.0, 1.0)
        X0 = X_al.copy()
        X0[:, 0] = 0.0
        X1 = X_al.copy()
        X1[:, 0] = 1.0
        mu, mu0, mu1 = crossfit_predict(X_al, data.y, spec_y, plan, X_eval=[X_al, X0, X1])
        mu = link.clip(mu, counter)
        mu0 = link.clip(mu0, counter)
        mu1 = link.clip(mu1, counter)
        m_g = link_eval(link, mu1) * e_a1 + link_eval(link, mu0) * (1.0 - e_a1)
        mu_at = {0.0: mu0, 1.0: mu1}
    else:
        (mu,) = crossfit_predict(X_al, data.y, spec_y, plan)
        mu = link.clip(mu, counter)
        g_mu = link_eval(link, mu)
        (m_g,) = crossfit_predict(data.l, g_mu, spec_mg, plan)
        mu_at = None
    summaries = f"e_a1={spec_a.kind}, mu={spec_y.kind}, m_g={spec_mg.kind}"
    return NuisanceFit(
        e_a1=e_a1,
        mu=mu,
        m_g=m_g,
        fold_plan=plan,
        mu_at=mu_at,
        clip_count=counter[0],
        learner_summaries=summaries,
    )
