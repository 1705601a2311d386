"""Data-generating processes, estimand oracles and the Monte Carlo runner.

The DGP families reproduce the simulation designs the package is
benchmarked on: a small single-covariate illustration, four main-effect
experiments with a 10-dimensional Gaussian covariate and a shared
propensity, and three effect-modification experiments. Limiting values of
each estimator are obtained either exactly, by quadrature, or by the
large-sample oracle procedure with true conditional expectations plugged
in; fully discrete designs have exact enumeration oracles for the three
estimands.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .comparators import dr_report, e_estimator, es_report, fit_glm_mle
from .core import (
    Dataset,
    EstimationError,
    Link,
    Z95,
    clip_prob,
    expit,
    link_eval,
    make_folds,
    rng_stream,
)
from .crossfit import NuisanceFit, crossfit_predict, nuisance_main
from .interaction import (
    estimate_interaction_indep,
    estimate_interaction_proj,
    fit_interaction_nuisances,
)
from .learners import LearnerSpec, fit_learner, predict
from .main_effect import MainEffectProblem, estimate_main

_DIM = 10
_GAMMA = np.full(_DIM, 1.0 / 40.0)
_DELTA = np.full(5, 1.0 / 50.0)
_GAMMA_CONT = np.full(_DIM, 1.0 / math.sqrt(40.0))

MAIN_EXPERIMENTS = (1, 2, 3, 4)
INTERACTION_EXPERIMENTS = (1, 2, 3)


# ---------------------------------------------------------------------------
# covariance construction
# ---------------------------------------------------------------------------

def make_sigma(sigma_seed: int, d: int = _DIM) -> np.ndarray:
    """Random covariance with variances in (2, 10) and |correlation| <= 0.6.

    Construction: QR-orthogonalise a Gaussian matrix (signs fixed for
    determinism), draw eigenvalues log-uniform in [0.05, 1], form the
    resulting covariance, convert to a correlation matrix, shrink all
    off-diagonals toward zero so the largest absolute correlation is at
    most 0.6, then scale to variances drawn uniformly from (2, 10).
    """
    rng = rng_stream(sigma_seed, "sigma")
    raw = rng.normal(size=(d, d))
    q, r = np.linalg.qr(raw)
    q = q * np.sign(np.diag(r))
    eigenvalues = np.exp(rng.uniform(np.log(0.05), np.log(1.0), size=d))
    s0 = (q * eigenvalues) @ q.T
    inv_sd = 1.0 / np.sqrt(np.diag(s0))
    corr = s0 * np.outer(inv_sd, inv_sd)
    off = corr - np.eye(d)
    max_corr = float(np.max(np.abs(off)))
    if max_corr > 0.6:
        corr = np.eye(d) + off * (0.6 / max_corr)
    variances = rng.uniform(2.0, 10.0, size=d)
    sd = np.sqrt(variances)
    return corr * np.outer(sd, sd)


# ---------------------------------------------------------------------------
# data-generating processes
# ---------------------------------------------------------------------------

def _illustration_mean(a, l):
    return a - l + 4.5 * a * l + 0.5 * l * l - 2.25 * a * l * l


def dgp_illustration(n: int, seed: int, code_variant: bool = False) -> Dataset:
    """Scalar Gaussian covariate, logistic-in-(L, L^2) binary exposure,
    Gaussian outcome with a strong exposure-covariate interaction.

    ``code_variant`` shifts the covariate mean from 0 to 1.
    """
    if n < 20:
        raise EstimationError(f"illustration needs n >= 20, got {n}")
    rng = rng_stream(seed, "dgp:illustration")
    l = rng.normal(loc=1.0 if code_variant else 0.0, scale=1.0, size=n)
    a = (rng.random(n) < expit(l - l * l)).astype(float)
    y = rng.normal(loc=_illustration_mean(a, l), scale=1.0)
    return Dataset(y=y, a1=a, l=l.reshape(-1, 1), column_names=("l1",))


def _main_propensity(l: np.ndarray, literal_linear: bool = False) -> np.ndarray:
    score = l @ _GAMMA - 0.15 * l[:, 0] ** 2
    if literal_linear:
        return clip_prob(score, 1e-6)
    return expit(score)


def _main_outcome_logit(exp_id: int, a: np.ndarray, l: np.ndarray) -> np.ndarray:
    if exp_id == 1:
        return 0.3 * a + l[:, :5] @ _DELTA
    if exp_id == 2:
        return 0.3 * a + l[:, :5] @ _DELTA + 0.1 * l[:, 0] ** 2
    if exp_id == 3:
        return 1.5 * l[:, 0] * (a - 1.0) + l[:, :5] @ _DELTA
    if exp_id == 4:
        return (
            0.1 / (1.0 + np.exp(0.25 * l[:, 2] - 0.25 * l[:, 1]))
            + 0.3 * a / (1.0 + np.exp(-0.25 * l[:, 1]))
            + 0.5 * a * l[:, 5]
            + 0.1 * l[:, 0] ** 2
        )
    raise EstimationError(f"unknown main experiment {exp_id}")


def dgp_main(
    exp_id: int,
    n: int,
    seed: int,
    sigma_seed: int,
    literal_linear_exposure: bool = False,
) -> Dataset:
    """Binary exposure and outcome on a 10-dimensional Gaussian covariate."""
    if exp_id not in MAIN_EXPERIMENTS:
        raise EstimationError(f"unknown main experiment {exp_id}")
    sigma = make_sigma(sigma_seed)
    rng = rng_stream(seed, f"dgp:main{exp_id}")
    l = rng.multivariate_normal(np.zeros(_DIM), sigma, size=n, method="cholesky")
    a = (rng.random(n) < _main_propensity(l, literal_linear_exposure)).astype(float)
    p_y = expit(_main_outcome_logit(exp_id, a, l))
    y = (rng.random(n) < p_y).astype(float)
    return Dataset(y=y, a1=a, l=l)


def _interaction_outcome_mean(exp_id: int, a: np.ndarray, l: np.ndarray) -> np.ndarray:
    if exp_id in (1, 2):
        base = 3.0 / (1.0 + np.exp(l[:, 2] - l[:, 1])) + a / (1.0 + np.exp(l[:, 0] - l[:, 1]))
        if exp_id == 2:
            base = base + 5.0 * a * l[:, 5]
        return base
    if exp_id == 3:
        return l @ _GAMMA_CONT + 5.0 * a * l[:, 2]
    raise EstimationError(f"unknown interaction experiment {exp_id}")


def dgp_interaction(exp_id: int, n: int, seed: int, sigma_seed: int) -> Dataset:
    """Effect-modification designs; the modifier of interest is the third
    covariate, exposed as a2 with the remaining nine covariates as l."""
    if exp_id not in INTERACTION_EXPERIMENTS:
        raise EstimationError(f"unknown interaction experiment {exp_id}")
    sigma = make_sigma(sigma_seed)
    rng = rng_stream(seed, f"dgp:inter{exp_id}")
    l = rng.multivariate_normal(np.zeros(_DIM), sigma, size=n, method="cholesky")
    if exp_id == 3:
        a = rng.normal(loc=l @ _GAMMA_CONT, scale=1.0)
    else:
        a = (rng.random(n) < _main_propensity(l)).astype(float)
    y = rng.normal(loc=_interaction_outcome_mean(exp_id, a, l), scale=1.0)
    rest = [j for j in range(_DIM) if j != 2]
    return Dataset(
        y=y,
        a1=a,
        a2=l[:, 2],
        l=l[:, rest],
        column_names=tuple(f"l{j + 1}" for j in rest),
    )


# ---------------------------------------------------------------------------
# true nuisances for the oracle-limit procedure (main experiments)
# ---------------------------------------------------------------------------

def main_true_nuisances(exp_id: int, data: Dataset) -> dict:
    """Exact conditional expectations implied by the main-effect DGPs."""
    l = data.l
    pi = _main_propensity(l)
    logit0 = _main_outcome_logit(exp_id, np.zeros(data.n), l)
    logit1 = _main_outcome_logit(exp_id, np.ones(data.n), l)
    mu0 = expit(logit0)
    mu1 = expit(logit1)
    mu_obs = np.where(data.a1 > 0.5, mu1, mu0)
    m_g = pi * logit1 + (1.0 - pi) * logit0
    denom = (1.0 - mu1) * pi + (1.0 - mu0) * (1.0 - pi)
    e_a_y0 = (1.0 - mu1) * pi / denom
    return {
        "e_a1": pi,
        "mu": mu_obs,
        "mu0": mu0,
        "mu1": mu1,
        "m_g": m_g,
        "e_a_y0": e_a_y0,
    }


def _proposal_with_true_nuisances(exp_id: int, data: Dataset) -> float:
    truth = main_true_nuisances(exp_id, data)
    plan = make_folds(data.n, 2, 0)  # placeholder, no learner is involved
    nuis = NuisanceFit(
        e_a1=truth["e_a1"],
        mu=truth["mu"],
        m_g=truth["m_g"],
        fold_plan=plan,
        mu_at={0.0: truth["mu0"], 1.0: truth["mu1"]},
    )
    problem = MainEffectProblem(data=data, link=Link("logit"), nuis=nuis)
    return estimate_main(problem).beta_hat


@dataclass(frozen=True)
class OracleLimit:
    value: float
    mc_se: float
    provenance: str


def oracle_limit(
    estimator_id: str,
    exp_id: int,
    n_large: int = 50_000,
    reps: int = 100,
    seed: int = 0,
    sigma_seed: int = 0,
) -> OracleLimit:
    """Average large-sample estimate with true conditional expectations
    plugged in (the misspecified parametric fit itself for the MLE)."""
    if estimator_id not in ("mle", "es", "dr", "proposal"):
        raise EstimationError(f"unknown estimator id '{estimator_id}'")
    estimates = np.empty(reps)
    for rep in range(reps):
        rep_seed = int(rng_stream(seed, f"oracle:{estimator_id}:{exp_id}", rep).integers(2**62))
        data = dgp_main(exp_id, n_large, rep_seed, sigma_seed)
        truth = main_true_nuisances(exp_id, data)
        if estimator_id == "mle":
            fit = fit_glm_mle(data, Link("logit"))
            estimates[rep] = fit.coefficients[list(fit.term_names).index("a1")]
        elif estimator_id == "es":
            estimates[rep] = es_report(data, truth["mu0"], truth["mu1"], truth["e_a1"]).beta_hat
        elif estimator_id == "dr":
            estimates[rep] = dr_report(data, truth["e_a_y0"], truth["mu0"]).beta_hat
        else:
            estimates[rep] = _proposal_with_true_nuisances(exp_id, data)
    value = float(np.mean(estimates))
    mc_se = float(np.std(estimates, ddof=1) / math.sqrt(reps))
    provenance = (
        f"oracle_limit(estimator={estimator_id}, exp={exp_id}, "
        f"n_large={n_large}, reps={reps}, sigma_seed={sigma_seed})"
    )
    return OracleLimit(value=value, mc_se=mc_se, provenance=provenance)


# ---------------------------------------------------------------------------
# illustration estimand by quadrature
# ---------------------------------------------------------------------------

def illustration_estimand(code_variant: bool = False, n_nodes: int = 201) -> OracleLimit:
    """Overlap-weighted average of the conditional outcome contrast,
    computed by Gauss-Hermite quadrature over the covariate law."""
    nodes, weights = np.polynomial.hermite.hermgauss(n_nodes)
    mean_l = 1.0 if code_variant else 0.0
    l = mean_l + math.sqrt(2.0) * nodes
    w = weights / math.sqrt(math.pi)
    pi = expit(l - l * l)
    contrast = _illustration_mean(1.0, l) - _illustration_mean(0.0, l)
    overlap = pi * (1.0 - pi)
    value = float(np.sum(w * overlap * contrast) / np.sum(w * overlap))
    return OracleLimit(
        value=value,
        mc_se=0.0,
        provenance=f"gauss-hermite({n_nodes}) overlap-weighted contrast, "
        f"covariate mean {mean_l}",
    )


# ---------------------------------------------------------------------------
# exact enumeration oracles on finite supports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscreteJoint:
    """Fully tabulated joint law on a finite support.

    For main effects: pmf and mean_y indexed (a_level, l_level). For
    interactions: indexed (a1_level, a2_level, l_level). ``l_levels`` is a
    matrix whose rows are covariate points.
    """

    a_levels: np.ndarray
    l_levels: np.ndarray
    pmf: np.ndarray
    mean_y: np.ndarray
    a2_levels: np.ndarray | None = None

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=float)
        if abs(float(pmf.sum()) - 1.0) > 1e-12:
            raise EstimationError(f"pmf sums to {pmf.sum()}, expected 1")
        if np.any(pmf <= 0.0):
            raise EstimationError("all support probabilities must be positive")


def brute_force_estimand(joint: DiscreteJoint, which: str, link: Link) -> float:
    """Exact estimand value by enumeration over the finite support."""
    if which == "main":
        return _brute_force_main(joint, link)
    if which == "inter_indep":
        return _brute_force_inter_weighted(joint, link)
    if which == "inter_proj":
        return _brute_force_inter_projection(joint, link)
    raise EstimationError(f"unknown estimand '{which}'")


def _brute_force_main(joint: DiscreteJoint, link: Link) -> float:
    pmf = np.asarray(joint.pmf, dtype=float)  # (n_a, n_l)
    a = np.asarray(joint.a_levels, dtype=float)
    g_mu = np.asarray(link_eval(link, link.clip(joint.mean_y)))
    p_l = pmf.sum(axis=0)
    cov_sum = 0.0
    var_sum = 0.0
    for j in range(p_l.shape[0]):
        p_a_given_l = pmf[:, j] / p_l[j]
        mean_a = float(p_a_given_l @ a)
        mean_g = float(p_a_given_l @ g_mu[:, j])
        cov = float(p_a_given_l @ (a * g_mu[:, j])) - mean_a * mean_g
        var = float(p_a_given_l @ (a * a)) - mean_a**2
        cov_sum += p_l[j] * cov
        var_sum += p_l[j] * var
    if var_sum <= 0.0:
        raise EstimationError("estimand undefined: no conditional exposure variation")
    return cov_sum / var_sum


def _brute_force_inter_weighted(joint: DiscreteJoint, link: Link) -> float:
    if joint.a2_levels is None:
        raise EstimationError("interaction estimand needs a2_levels")
    a1 = np.asarray(joint.a_levels, dtype=float)
    a2 = np.asarray(joint.a2_levels, dtype=float)
    if not (set(a1.tolist()) <= {0.0, 1.0} and set(a2.tolist()) <= {0.0, 1.0}):
        raise EstimationError("the weighted interaction estimand requires binary exposures")
    pmf = np.asarray(joint.pmf, dtype=float)  # (2, 2, n_l)
    g_mu = np.asarray(link_eval(link, link.clip(joint.mean_y)))
    p_l = pmf.sum(axis=(0, 1))
    i1, i0 = int(np.argmax(a1)), int(np.argmin(a1))
    j1, j0 = int(np.argmax(a2)), int(np.argmin(a2))
    num = 0.0
    den = 0.0
    for j in range(p_l.shape[0]):
        p_joint = pmf[:, :, j] / p_l[j]
        pi1 = float(p_joint[i1, :].sum())
        pi2 = float(p_joint[:, j1].sum())
        w = pi1 * (1.0 - pi1) * pi2 * (1.0 - pi2)
        contrast = g_mu[i1, j1, j] + g_mu[i0, j0, j] - g_mu[i1, j0, j] - g_mu[i0, j1, j]
        num += p_l[j] * w * contrast
        den += p_l[j] * w
    if den <= 0.0:
        raise EstimationError("estimand undefined: degenerate overlap weights")
    return num / den


def _interaction_support(joint: DiscreteJoint):
    a1 = np.asarray(joint.a_levels, dtype=float)
    a2 = np.asarray(joint.a2_levels, dtype=float)
    n1, n2, nl = joint.pmf.shape
    idx1, idx2, idxl = np.meshgrid(
        np.arange(n1), np.arange(n2), np.arange(nl), indexing="ij"
    )
    return (
        a1[idx1.ravel()],
        a2[idx2.ravel()],
        idxl.ravel(),
        np.asarray(joint.pmf, dtype=float).ravel(),
    )


def lambda_basis(a1_idx_cells, a2_idx_cells):
    """Indicator design spanning functions d1(A1, L) + d2(A2, L)."""
    cols = []
    for cells in (a1_idx_cells, a2_idx_cells):
        labels = sorted(set(cells))
        for lab in labels:
            cols.append(np.asarray([1.0 if c == lab else 0.0 for c in cells]))
    return np.column_stack(cols)


def project_onto_lambda_complement(values: np.ndarray, joint: DiscreteJoint) -> np.ndarray:
    """Weighted residual of the projection onto the separable span."""
    a1v, a2v, lidx, w = _interaction_support(joint)
    cells1 = [(float(a), int(j)) for a, j in zip(a1v, lidx)]
    cells2 = [(float(a), int(j)) for a, j in zip(a2v, lidx)]
    basis = lambda_basis(cells1, cells2)
    sw = np.sqrt(w)
    coef, _, _, _ = np.linalg.lstsq(basis * sw[:, None], values * sw, rcond=None)
    return values - basis @ coef


def _brute_force_inter_projection(joint: DiscreteJoint, link: Link) -> float:
    if joint.a2_levels is None:
        raise EstimationError("interaction estimand needs a2_levels")
    a1v, a2v, lidx, w = _interaction_support(joint)
    g_mu = np.asarray(link_eval(link, link.clip(joint.mean_y))).ravel()
    p_d = project_onto_lambda_complement(a1v * a2v, joint)
    denom = float(np.sum(w * p_d * p_d))
    if denom < 1e-14:
        raise EstimationError("estimand undefined: no interaction leverage")
    return float(np.sum(w * p_d * g_mu)) / denom


# ---------------------------------------------------------------------------
# study configuration and runner
# ---------------------------------------------------------------------------

_DEFAULT_FOREST_SIM = {"n_trees": 150, "min_leaf": 25}


@dataclass(frozen=True)
class StudyConfig:
    """JSON-round-trippable description of one Monte Carlo study."""

    name: str
    family: str  # illustration | main_exp1..4 | inter_exp1..3
    n_list: tuple
    reps: int
    seed: int
    estimators: tuple
    K: int = 10
    sigma_seed: int = 0
    illustration_code_variant: bool = False
    learner: dict = field(default_factory=lambda: {"kind": "forest",
                                                   "hyperparams": dict(_DEFAULT_FOREST_SIM)})
    ace: dict = field(default_factory=lambda: {"tol": 1e-6, "max_iter": 50})
    target: dict = field(default_factory=dict)
    threads: int = 1

    def to_json(self) -> str:
        payload = dataclasses.asdict(self)
        payload["n_list"] = list(self.n_list)
        payload["estimators"] = list(self.estimators)
        return json.dumps(payload, indent=2, sort_keys=True)

    @staticmethod
    def from_json(payload: str) -> "StudyConfig":
        obj = json.loads(payload)
        obj["n_list"] = tuple(obj["n_list"])
        obj["estimators"] = tuple(obj["estimators"])
        return StudyConfig(**obj)


@dataclass(frozen=True)
class StudyRow:
    estimator: str
    n: int
    target: float
    provenance: str
    estimates: np.ndarray
    ses: np.ndarray
    n_failed: int

    @property
    def summary(self) -> dict:
        ok = np.isfinite(self.estimates) & np.isfinite(self.ses)
        est = self.estimates[ok]
        se = self.ses[ok]
        reps_requested = self.estimates.shape[0]
        if est.shape[0] == 0:
            return {
                "bias": math.nan, "emp_sd": math.nan, "mean_se": math.nan,
                "coverage_pct": math.nan, "reps_used": 0,
                "n_failed": self.n_failed, "failure_flag": True,
            }
        covered = np.abs(est - self.target) <= Z95 * se
        return {
            "bias": float(np.mean(est) - self.target),
            "emp_sd": float(np.std(est, ddof=1)) if est.shape[0] > 1 else 0.0,
            "mean_se": float(np.mean(se)),
            "coverage_pct": float(100.0 * np.mean(covered)),
            "reps_used": int(est.shape[0]),
            "n_failed": self.n_failed,
            "failure_flag": bool(self.n_failed > 0.05 * reps_requested),
        }


@dataclass(frozen=True)
class SimResult:
    config: StudyConfig
    rows: tuple

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["study", "estimator", "n", "reps_used", "target", "bias",
                 "emp_sd", "mean_se", "coverage_pct", "n_failed", "failure_flag",
                 "target_provenance"]
            )
            for row in self.rows:
                s = row.summary
                writer.writerow(
                    [self.config.name, row.estimator, row.n, s["reps_used"],
                     f"{row.target:.6g}", f"{s['bias']:.6g}", f"{s['emp_sd']:.6g}",
                     f"{s['mean_se']:.6g}", f"{s['coverage_pct']:.1f}",
                     s["n_failed"], int(s["failure_flag"]), row.provenance]
                )

    def row(self, estimator: str, n: int) -> StudyRow:
        for r in self.rows:
            if r.estimator == estimator and r.n == n:
                return r
        raise KeyError(f"no row for estimator={estimator}, n={n}")


def _learner_from_config(cfg: dict, seed: int) -> LearnerSpec:
    hyper = dict(cfg.get("hyperparams", {}))
    return LearnerSpec(
        kind=cfg.get("kind", "forest"),
        hyperparams=hyper,
        cv_folds=int(cfg.get("cv_folds", 5)),
        seed=seed,
    )


def _generate(config: StudyConfig, n: int, rep: int) -> Dataset:
    data_seed = int(rng_stream(config.seed, f"data:{config.name}:{n}", rep).integers(2**62))
    fam = config.family
    if fam == "illustration":
        return dgp_illustration(n, data_seed, config.illustration_code_variant)
    if fam.startswith("main_exp"):
        return dgp_main(int(fam[-1]), n, data_seed, config.sigma_seed)
    if fam.startswith("inter_exp"):
        return dgp_interaction(int(fam[-1]), n, data_seed, config.sigma_seed)
    raise EstimationError(f"unknown DGP family '{fam}'")


def _estimate_replicate(config: StudyConfig, data: Dataset, n: int, rep: int) -> dict:
    """(estimate, se) per requested estimator; failures become NaN pairs."""
    out = {}
    fold_seed = int(rng_stream(config.seed, f"folds:{config.name}:{n}", rep).integers(2**62))
    learner_seed = int(rng_stream(config.seed, f"learner:{config.name}:{n}", rep).integers(2**62))
    spec = _learner_from_config(config.learner, learner_seed)
    fam = config.family

    if fam == "illustration":
        _illustration_estimates(config, data, spec, fold_seed, out)
    elif fam.startswith("main_exp"):
        _main_estimates(config, data, spec, fold_seed, out)
    else:
        _interaction_estimates(config, data, spec, fold_seed, out)
    return out


def _record(out: dict, name: str, fn) -> None:
    try:
        out[name] = fn()
    except (EstimationError, np.linalg.LinAlgError) as exc:
        out[name] = (math.nan, math.nan)
        out.setdefault("_errors", []).append(f"{name}: {exc}")


def _main_estimates(config, data, spec, fold_seed, out):
    link = Link("logit")
    wanted = set(config.estimators)
    if "mle" in wanted:
        def run_mle():
            fit = fit_glm_mle(data, link)
            j = list(fit.term_names).index("a1")
            return float(fit.coefficients[j]), float(fit.model_se[j])
        _record(out, "mle", run_mle)
    needs_nuis = wanted & {"es", "proposal"}
    nuis = None
    if needs_nuis:
        plan = make_folds(data.n, config.K, fold_seed)
        try:
            nuis = nuisance_main(data, link, spec, spec, spec, plan)
        except EstimationError as exc:
            for name in sorted(needs_nuis):
                out[name] = (math.nan, math.nan)
                out.setdefault("_errors", []).append(f"{name}: {exc}")
            needs_nuis = set()
    if "proposal" in needs_nuis:
        def run_proposal():
            rep = estimate_main(MainEffectProblem(data=data, link=link, nuis=nuis))
            return rep.beta_hat, rep.se
        _record(out, "proposal", run_proposal)
    if "es" in needs_nuis:
        def run_es():
            rep = es_report(data, nuis.mu_at[0.0], nuis.mu_at[1.0], nuis.e_a1)
            return rep.beta_hat, rep.se
        _record(out, "es", run_es)
    if "dr" in wanted:
        def run_dr():
            plan = make_folds(data.n, config.K, fold_seed)
            X_yl = np.column_stack([data.y, data.l])
            X_y0 = X_yl.copy()
            X_y0[:, 0] = 0.0
            (e_a_y0,) = crossfit_predict(X_yl, data.a1, spec, plan, X_eval=[X_y0])
            e_a_y0 = np.clip(e_a_y0, 0.0, 1.0)
            if nuis is not None and nuis.mu_at is not None:
                mu0 = nuis.mu_at[0.0]
            else:
                plan2 = make_folds(data.n, config.K, fold_seed)
                X_al = np.column_stack([data.a1, data.l])
                X_a0 = X_al.copy()
                X_a0[:, 0] = 0.0
                (mu0,) = crossfit_predict(X_al, data.y, spec, plan2, X_eval=[X_a0])
                mu0 = np.clip(mu0, 0.0, 1.0)
            rep = dr_report(data, e_a_y0, mu0)
            return rep.beta_hat, rep.se
        _record(out, "dr", run_dr)


def _illustration_estimates(config, data, spec, fold_seed, out):
    link = Link("identity")
    wanted = set(config.estimators)
    if "ols" in wanted:
        def run_ols():
            fit = fit_glm_mle(data, link)
            j = list(fit.term_names).index("a1")
            return float(fit.coefficients[j]), float(fit.model_se[j])
        _record(out, "ols", run_ols)
    if "proposal" in wanted:
        def run_proposal():
            plan = make_folds(data.n, config.K, fold_seed)
            nuis = nuisance_main(data, link, spec, spec, spec, plan)
            rep = estimate_main(MainEffectProblem(data=data, link=link, nuis=nuis))
            return rep.beta_hat, rep.se
        _record(out, "proposal", run_proposal)
    if "e" in wanted:
        def run_e():
            # full-data nuisances under the partially linear model, the
            # classical (non-cross-fitted) workflow this estimator mimics
            pi_fit = fit_learner(spec, data.l, data.a1)
            e_a = np.clip(predict(pi_fit, data.l), 0.0, 1.0)
            m_fit = fit_learner(spec, data.l, data.y)
            m_hat = predict(m_fit, data.l)
            resid_a = data.a1 - e_a
            beta_tilde = float(resid_a @ (data.y - m_hat)) / float(resid_a @ resid_a)
            omega_fit = fit_learner(spec, data.l, data.y - beta_tilde * data.a1)
            omega0 = predict(omega_fit, data.l)
            rep = e_estimator(data, e_a, omega0)
            return rep.beta_hat, rep.se
        _record(out, "e", run_e)


def _interaction_estimates(config, data, spec, fold_seed, out):
    link = Link("identity")
    wanted = set(config.estimators)
    if "ols" in wanted:
        def run_ols():
            fit = fit_glm_mle(data, link, interaction=True)
            j = list(fit.term_names).index("a1:a2")
            return float(fit.coefficients[j]), float(fit.model_se[j])
        _record(out, "ols", run_ols)
    if "proposal" in wanted:
        def run_proposal():
            plan = make_folds(data.n, config.K, fold_seed)
            rep = estimate_interaction_proj(
                data, link, spec, plan,
                ace_tol=float(config.ace.get("tol", 1e-6)),
                ace_max_iter=int(config.ace.get("max_iter", 50)),
            )
            return rep.beta_hat, rep.se
        _record(out, "proposal", run_proposal)
    if "indep" in wanted:
        def run_indep():
            plan = make_folds(data.n, config.K, fold_seed)
            nuis = fit_interaction_nuisances(data, link, spec, plan)
            rep = estimate_interaction_indep(data, link, nuis)
            return rep.beta_hat, rep.se
        _record(out, "indep", run_indep)


def resolve_target(config: StudyConfig, estimator: str) -> OracleLimit:
    """Target value for coverage, per the study config's target mode."""
    mode = config.target.get("mode", "value")
    if mode == "value":
        return OracleLimit(
            value=float(config.target["value"]),
            mc_se=0.0,
            provenance=config.target.get("provenance", "configured value"),
        )
    if mode == "illustration_quadrature":
        return illustration_estimand(config.illustration_code_variant)
    if mode == "oracle_limit":
        if not config.family.startswith("main_exp"):
            raise EstimationError("oracle_limit targets apply to the main experiments")
        return oracle_limit(
            estimator,
            int(config.family[-1]),
            n_large=int(config.target.get("n_large", 50_000)),
            reps=int(config.target.get("reps", 100)),
            seed=int(config.target.get("seed", config.seed + 1)),
            sigma_seed=config.sigma_seed,
        )
    raise EstimationError(f"unknown target mode '{mode}'")


def _run_one_replicate(config: StudyConfig, n: int, rep: int) -> dict:
    data = _generate(config, n, rep)
    return _estimate_replicate(config, data, n, rep)


def run_study(config: StudyConfig, progress=None) -> SimResult:
    """Run the full study; deterministic for a fixed config.

    Replicates use independent seeded streams keyed by (study, n, rep) and
    results are aggregated by replicate index, so the outcome does not
    depend on execution order or on the number of worker threads.
    Replicate-level estimator failures are recorded as NaN and excluded
    from the summaries with a count; a failure rate above 5% flags the
    summary row.
    """
    rows = []
    targets = {est: resolve_target(config, est) for est in config.estimators}
    for n in config.n_list:
        estimates = {est: np.full(config.reps, math.nan) for est in config.estimators}
        ses = {est: np.full(config.reps, math.nan) for est in config.estimators}
        failures = {est: 0 for est in config.estimators}
        if config.threads > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=config.threads) as pool:
                results = list(
                    pool.map(lambda r: _run_one_replicate(config, int(n), r),
                             range(config.reps))
                )
        else:
            results = [_run_one_replicate(config, int(n), rep) for rep in range(config.reps)]
        for rep, result in enumerate(results):
            for est in config.estimators:
                b, s = result.get(est, (math.nan, math.nan))
                if math.isfinite(b) and math.isfinite(s):
                    estimates[est][rep] = b
                    ses[est][rep] = s
                else:
                    failures[est] += 1
            if progress is not None:
                progress(n, rep, result)
        for est in config.estimators:
            rows.append(
                StudyRow(
                    estimator=est,
                    n=int(n),
                    target=targets[est].value,
                    provenance=targets[est].provenance,
                    estimates=estimates[est],
                    ses=ses[est],
                    n_failed=failures[est],
                )
            )
    return SimResult(config=config, rows=tuple(rows))
