"""Generalised partialling-out estimator for the main-effect estimand.

The target is the ratio of the averaged conditional covariance between the
exposure and the g-transformed outcome mean to the averaged conditional
exposure variance. It is estimated by regressing the orthogonalised
outcome signal on the exposure residual without an intercept; the standard
error is the sample standard deviation of the influence values over
sqrt(n).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset, EstimateReport, EstimationError, Link, link_eval, link_prime, report_from_influence
from .crossfit import NuisanceFit


@dataclass(frozen=True)
class MainEffectProblem:
    data: Dataset
    link: Link
    nuis: NuisanceFit

    def __post_init__(self):
        if self.nuis.e_a1.shape[0] != self.data.n:
            raise EstimationError("nuisance fit does not match dataset size")


def mu_term(y, mu, m_g, link: Link):
    """g'(mu)(y - mu) + g(mu) - m_g, elementwise.

    ``mu`` must already be clipped into the safe domain of g and g'.
    """
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    m_g = np.asarray(m_g, dtype=float)
    return link_prime(link, mu) * (y - mu) + link_eval(link, mu) - m_g


def estimate_main(problem: MainEffectProblem) -> EstimateReport:
    """No-intercept OLS of the mu-term on the exposure residual."""
    data, link, nuis = problem.data, problem.link, problem.nuis
    resid_a = data.a1 - nuis.e_a1
    denom_sum = float(resid_a @ resid_a)
    guard = 1e-12 * data.n * float(np.var(data.a1))
    if denom_sum <= guard:
        raise EstimationError("no residual exposure variation")
    terms = mu_term(data.y, nuis.mu, nuis.m_g, link)
    beta_hat = float(resid_a @ terms) / denom_sum
    phi = influence_main(problem, beta_hat)
    return report_from_influence(
        beta_hat,
        phi,
        denominator=denom_sum / data.n,
        n_clipped=nuis.clip_count,
        learner_summaries=nuis.learner_summaries,
    )


def influence_main(problem: MainEffectProblem, beta: float) -> np.ndarray:
    """Influence values at an arbitrary beta; mean-zero exactly at beta-hat."""
    data, link, nuis = problem.data, problem.link, problem.nuis
    resid_a = data.a1 - nuis.e_a1
    terms = mu_term(data.y, nuis.mu, nuis.m_g, link)
    denom_mean = float(resid_a @ resid_a) / data.n
    return resid_a * (terms - beta * resid_a) / denom_mean
