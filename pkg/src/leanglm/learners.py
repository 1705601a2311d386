"""Nonparametric regression learners behind a single fit/predict contract.

Four kinds: a bagged CART forest, a product-Gaussian kernel smoother,
ridge-penalised linear regression and ridge-penalised logistic regression.
Kernel bandwidths and ridge penalties can be tuned by K-fold CV over a
fixed grid ("cv"), with ties broken toward stronger smoothing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _forest
from .core import ConfigurationError, EstimationError, expit, make_folds

_KINDS = ("forest", "kernel", "ridge_linear", "ridge_logistic")

_FOREST_DEFAULTS = {
    "n_trees": 500,
    "min_leaf": 5,
    "mtry": None,  # resolved to ceil(p/3) at fit time
    "bootstrap_fraction": 0.632,
}


@dataclass(frozen=True)
class LearnerSpec:
    kind: str
    hyperparams: dict = field(default_factory=dict)
    cv_folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigurationError(f"unknown learner kind '{self.kind}', expected {_KINDS}")
        for name, value in self.hyperparams.items():
            if isinstance(value, (int, float)) and not isinstance(value, bool) and value <= 0:
                raise ConfigurationError(f"hyperparameter {name}={value} must be positive")
        if self.cv_folds < 2:
            raise ConfigurationError("cv_folds must be at least 2")


def forest_spec(seed: int = 0, **hyperparams) -> LearnerSpec:
    hp = dict(_FOREST_DEFAULTS)
    hp.update(hyperparams)
    if hp["mtry"] is None:
        hp.pop("mtry")
    return LearnerSpec(kind="forest", hyperparams=hp, seed=seed)


def kernel_spec(bandwidth="cv", seed: int = 0, cv_folds: int = 5) -> LearnerSpec:
    return LearnerSpec(kind="kernel", hyperparams={"bandwidth": bandwidth},
                       cv_folds=cv_folds, seed=seed)


def ridge_spec(kind: str = "ridge_linear", penalty="cv", seed: int = 0,
               cv_folds: int = 5) -> LearnerSpec:
    return LearnerSpec(kind=kind, hyperparams={"penalty": penalty},
                       cv_folds=cv_folds, seed=seed)


@dataclass(frozen=True)
class Predictor:
    """Fitted state plus the training-feature dimension and target range."""

    kind: str
    d_in: int
    t_min: float
    t_max: float
    state: tuple
    summary: str = ""


def fit_learner(spec: LearnerSpec, X: np.ndarray, t: np.ndarray) -> Predictor:
    """Fit one learner; deterministic given (spec, X, t)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    X = np.ascontiguousarray(X)
    t = np.asarray(t, dtype=float)
    m, p = X.shape
    if m < 10:
        raise EstimationError(f"need at least 10 training rows, got {m}")
    if t.shape[0] != m:
        raise EstimationError(f"feature/target length mismatch: {m} vs {t.shape[0]}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(t))):
        raise EstimationError("non-finite training data")

    t_min = float(np.min(t))
    t_max = float(np.max(t))
    if t_min == t_max:
        return Predictor(kind="constant", d_in=p, t_min=t_min, t_max=t_max,
                         state=(t_min,), summary="constant target")

    if spec.kind == "forest":
        return _fit_forest(spec, X, t, t_min, t_max)
    if spec.kind == "kernel":
        return _fit_kernel(spec, X, t, t_min, t_max)
    return _fit_ridge(spec, X, t, t_min, t_max)


def predict(pred: Predictor, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    X = np.ascontiguousarray(X)
    if X.shape[1] != pred.d_in:
        raise EstimationError(f"predict expected {pred.d_in} feature columns, got {X.shape[1]}")
    if pred.kind == "constant":
        return np.full(X.shape[0], pred.state[0])
    if pred.kind == "forest":
        nf, nt, nl, nv, off, _ = pred.state
        return _forest.predict_forest(nf, nt, nl, nv, off, X)
    if pred.kind == "kernel":
        return _kernel_predict(pred.state, X)
    if pred.kind == "ridge_linear":
        mean, scale, intercept, coef = pred.state
        return intercept + ((X - mean) / scale) @ coef
    mean, scale, intercept, coef = pred.state
    return expit(intercept + ((X - mean) / scale) @ coef)


def predict_honest(pred: Predictor, X_train: np.ndarray) -> np.ndarray:
    """Predictions for the training rows that exclude each row's own
    contribution where the learner supports it.

    Forest: out-of-bag averages (falls back to plain predictions when the
    subsampling fraction is 1). Kernel: leave-one-out smoothing. Ridge and
    constant predictors have too little capacity to overfit a single row,
    so they return plain predictions. ``X_train`` must be the matrix the
    learner was fitted on, in the same row order.
    """
    X_train = np.asarray(X_train, dtype=float)
    if X_train.ndim == 1:
        X_train = X_train.reshape(-1, 1)
    X_train = np.ascontiguousarray(X_train)
    if pred.kind == "forest":
        nf, nt, nl, nv, off, in_sample = pred.state
        if X_train.shape[0] != in_sample.shape[1]:
            raise EstimationError("predict_honest needs the original training rows")
        return _forest.predict_forest_oob(nf, nt, nl, nv, off, in_sample, X_train)
    if pred.kind == "kernel":
        Xs_train, t, mean, scale, h = pred.state
        if X_train.shape[0] != Xs_train.shape[0]:
            raise EstimationError("predict_honest needs the original training rows")
        d2 = _kernel_sq_dists(Xs_train, (X_train - mean) / scale)
        np.fill_diagonal(d2, np.inf)
        return _kernel_smooth(d2, t, h)
    return predict(pred, X_train)


# ---------------------------------------------------------------------------
# forest
# ---------------------------------------------------------------------------

def _fit_forest(spec: LearnerSpec, X, t, t_min, t_max) -> Predictor:
    hp = dict(_FOREST_DEFAULTS)
    hp.update(spec.hyperparams)
    p = X.shape[1]
    mtry = hp["mtry"] if hp.get("mtry") else int(math.ceil(p / 3))
    mtry = min(int(mtry), p)
    n_trees = int(hp["n_trees"])
    min_leaf = int(hp["min_leaf"])
    frac = float(hp["bootstrap_fraction"])
    if not (0.0 < frac <= 1.0):
        raise ConfigurationError(f"bootstrap_fraction={frac} must lie in (0, 1]")
    state = _forest.fit_forest(X, t, n_trees, min_leaf, mtry, frac, spec.seed)
    summary = f"forest(n_trees={n_trees}, min_leaf={min_leaf}, mtry={mtry}, frac={frac})"
    return Predictor(kind="forest", d_in=p, t_min=t_min, t_max=t_max,
                     state=state, summary=summary)


# ---------------------------------------------------------------------------
# kernel
# ---------------------------------------------------------------------------

def _kernel_sq_dists(X_train_std, X_eval_std):
    # squared Euclidean distance on standardised features
    d2 = (
        np.sum(X_eval_std**2, axis=1)[:, None]
        + np.sum(X_train_std**2, axis=1)[None, :]
        - 2.0 * X_eval_std @ X_train_std.T
    )
    np.maximum(d2, 0.0, out=d2)
    return d2


def _kernel_smooth(d2, t, h):
    logw = -0.5 * d2 / (h * h)
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    return (w @ t) / np.sum(w, axis=1)


def _rule_of_thumb_bandwidth(m, d):
    return (4.0 / (d + 2.0)) ** (1.0 / (d + 4.0)) * m ** (-1.0 / (d + 4.0))


def _fit_kernel(spec: LearnerSpec, X, t, t_min, t_max) -> Predictor:
    m, p = X.shape
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0.0] = 1.0
    Xs = (X - mean) / scale

    bw = spec.hyperparams.get("bandwidth", "cv")
    if bw == "cv":
        h0 = _rule_of_thumb_bandwidth(m, p)
        grid = np.geomspace(h0 / 10.0, h0 * 10.0, 20)
        folds = make_folds(m, max(2, min(spec.cv_folds, m // 5)), spec.seed)
        errors = np.zeros(grid.shape[0])
        for k in range(folds.K):
            hold = folds.fold_indices(k)
            keep = folds.complement_indices(k)
            d2 = _kernel_sq_dists(Xs[keep], Xs[hold])
            for gi, h in enumerate(grid):
                pred_k = _kernel_smooth(d2, t[keep], h)
                errors[gi] += np.sum((pred_k - t[hold]) ** 2)
        best = 0
        for gi in range(1, grid.shape[0]):
            if errors[gi] <= errors[best]:  # ties -> larger bandwidth
                best = gi
        h = float(grid[best])
    else:
        h = float(bw)
        if h <= 0:
            raise ConfigurationError("bandwidth must be positive")
    return Predictor(kind="kernel", d_in=p, t_min=t_min, t_max=t_max,
                     state=(Xs, t.copy(), mean, scale, h),
                     summary=f"kernel(h={h:.4g})")


def _kernel_predict(state, X):
    Xs_train, t, mean, scale, h = state
    Xe = (X - mean) / scale
    d2 = _kernel_sq_dists(Xs_train, Xe)
    return _kernel_smooth(d2, t, h)


# ---------------------------------------------------------------------------
# ridge (linear and logistic)
# ---------------------------------------------------------------------------

def _ridge_solve_linear(Xs, t, lam):
    p = Xs.shape[1]
    t_mean = t.mean()
    tc = t - t_mean
    A = Xs.T @ Xs + lam * np.eye(p)
    coef = np.linalg.solve(A, Xs.T @ tc)
    return t_mean, coef


def _ridge_solve_logistic(Xs, t, lam, max_iter=100, tol=1e-10):
    m, p = Xs.shape
    Z = np.column_stack([np.ones(m), Xs])
    beta = np.zeros(p + 1)
    pen = lam * np.eye(p + 1)
    pen[0, 0] = 0.0  # intercept unpenalised
    prev_obj = np.inf
    for _ in range(max_iter):
        eta = Z @ beta
        mu = expit(eta)
        w = np.maximum(mu * (1.0 - mu), 1e-10)
        grad = Z.T @ (t - mu) - pen @ beta
        H = (Z * w[:, None]).T @ Z + pen
        step = np.linalg.solve(H, grad)
        # step-halving on penalised deviance increase
        obj = _logistic_objective(Z, t, beta, pen)
        new_beta = beta + step
        for _ in range(30):
            new_obj = _logistic_objective(Z, t, new_beta, pen)
            if new_obj <= obj + 1e-14:
                break
            step *= 0.5
            new_beta = beta + step
        beta = new_beta
        new_obj = _logistic_objective(Z, t, beta, pen)
        if abs(prev_obj - new_obj) < tol * (abs(new_obj) + 1.0):
            break
        prev_obj = new_obj
    return beta[0], beta[1:]


def _logistic_objective(Z, t, beta, pen):
    eta = Z @ beta
    # -loglik with stable log(1+exp)
    ll = np.sum(t * eta - np.logaddexp(0.0, eta))
    return -ll + 0.5 * beta @ pen @ beta


def _fit_ridge(spec: LearnerSpec, X, t, t_min, t_max) -> Predictor:
    if spec.kind == "ridge_logistic" and (t_min < 0.0 or t_max > 1.0):
        raise ConfigurationError("ridge_logistic requires targets in [0, 1]")
    m, p = X.shape
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0.0] = 1.0
    Xs = (X - mean) / scale

    lam = spec.hyperparams.get("penalty", "cv")
    if lam == "cv":
        grid = np.geomspace(1e-4, 1e2, 20)
        folds = make_folds(m, max(2, min(spec.cv_folds, m // 5)), spec.seed)
        errors = np.zeros(grid.shape[0])
        for k in range(folds.K):
            hold = folds.fold_indices(k)
            keep = folds.complement_indices(k)
            for gi, lam_g in enumerate(grid):
                if spec.kind == "ridge_linear":
                    b0, coef = _ridge_solve_linear(Xs[keep], t[keep], lam_g)
                    pred_k = b0 + Xs[hold] @ coef
                else:
                    b0, coef = _ridge_solve_logistic(Xs[keep], t[keep], lam_g)
                    pred_k = expit(b0 + Xs[hold] @ coef)
                errors[gi] += np.sum((pred_k - t[hold]) ** 2)
        best = 0
        for gi in range(1, grid.shape[0]):
            if errors[gi] <= errors[best]:  # ties -> larger penalty
                best = gi
        lam = float(grid[best])
    else:
        lam = float(lam)
        if lam < 0:
            raise ConfigurationError("ridge penalty must be nonnegative")

    if spec.kind == "ridge_linear":
        intercept, coef = _ridge_solve_linear(Xs, t, lam)
    else:
        intercept, coef = _ridge_solve_logistic(Xs, t, lam)
    return Predictor(kind=spec.kind, d_in=p, t_min=t_min, t_max=t_max,
                     state=(mean, scale, intercept, coef),
                     summary=f"{spec.kind}(lambda={lam:.4g})")
