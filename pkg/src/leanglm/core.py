"""Shared data model: datasets, link functions, folds, RNG streams, CSV I/O.

Everything downstream (learners, cross-fitting, estimators, simulations)
consumes the immutable types defined here.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

Z95 = 1.959964  # two-sided 95% normal quantile used for every Wald interval


class LeanGlmError(Exception):
    """Base class for all package errors."""


class ConfigurationError(LeanGlmError):
    """Invalid configuration: bad fold counts, unknown options, bad schemas."""


class IngestionError(LeanGlmError):
    """Input data could not be parsed or violates dataset invariants."""


class DomainError(LeanGlmError):
    """Numeric input outside the domain of a transform."""


class EstimationError(LeanGlmError):
    """Estimation failed: degenerate denominators, separation, no root."""


# ---------------------------------------------------------------------------
# RNG discipline
# ---------------------------------------------------------------------------

def _tag_to_int(tag: str) -> int:
    digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def rng_stream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    """Counter-based RNG stream keyed by (seed, purpose tag, index).

    Streams for distinct (purpose, index) pairs are independent, and a given
    triple always yields the same stream regardless of how many other streams
    were drawn before it, so replicates can run in any order (or in parallel)
    without changing results.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(_tag_to_int(purpose), index))
    return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

def _is_binary(x: np.ndarray) -> bool:
    return bool(np.all((x == 0.0) | (x == 1.0)))


@dataclass(frozen=True)
class Dataset:
    """Outcome, one or two exposures and a covariate matrix.

    All arrays are validated as finite on construction; ``a1_binary`` /
    ``a2_binary`` are true iff every value of the exposure is 0 or 1, which
    gates the binary shortcut in the nuisance assembly.
    """

    y: np.ndarray
    a1: np.ndarray
    l: np.ndarray
    a2: np.ndarray | None = None
    column_names: tuple[str, ...] = ()

    def __post_init__(self):
        y = np.array(self.y, dtype=float)
        a1 = np.array(self.a1, dtype=float)
        l = np.array(self.l, dtype=float)
        if l.ndim == 1:
            l = l.reshape(-1, 1)
        a2 = None if self.a2 is None else np.array(self.a2, dtype=float)
        n = y.shape[0]
        if a1.shape[0] != n or l.shape[0] != n:
            raise IngestionError(
                f"length mismatch: y has {n} rows, a1 has {a1.shape[0]}, l has {l.shape[0]}"
            )
        if a2 is not None and a2.shape[0] != n:
            raise IngestionError(f"length mismatch: a2 has {a2.shape[0]} rows, expected {n}")
        for name, arr in (("y", y), ("a1", a1), ("l", l)) + (() if a2 is None else (("a2", a2),)):
            if not np.all(np.isfinite(arr)):
                bad = int(np.flatnonzero(~np.isfinite(arr).reshape(-1))[0])
                raise IngestionError(f"non-finite value in column '{name}' (flat index {bad})")
        names = tuple(self.column_names) if self.column_names else tuple(
            f"l{j + 1}" for j in range(l.shape[1])
        )
        if len(names) != l.shape[1]:
            raise IngestionError(
                f"{len(names)} covariate names for {l.shape[1]} covariate columns"
            )
        for arr in (y, a1, l) + (() if a2 is None else (a2,)):
            arr.setflags(write=False)
        for field_name, value in (("y", y), ("a1", a1), ("l", l), ("a2", a2), ("column_names", names)):
            object.__setattr__(self, field_name, value)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.l.shape[1]

    @property
    def a1_binary(self) -> bool:
        return _is_binary(self.a1)

    @property
    def a2_binary(self) -> bool:
        return self.a2 is not None and _is_binary(self.a2)


# ---------------------------------------------------------------------------
# Link functions
# ---------------------------------------------------------------------------

_LINK_KINDS = ("identity", "log", "logit")


@dataclass(frozen=True)
class Link:
    """Identity/log/logit link triple (g, g inverse, g')."""

    kind: str
    clip_eps: float = 1e-6

    def __post_init__(self):
        if self.kind not in _LINK_KINDS:
            raise ConfigurationError(f"unknown link '{self.kind}', expected one of {_LINK_KINDS}")
        if not (0.0 < self.clip_eps < 0.5):
            raise ConfigurationError("clip_eps must lie in (0, 0.5)")

    def clip(self, x, counter: list | None = None):
        """Clip fitted means into the safe domain of g and g'.

        identity: no-op. log: floor at clip_eps. logit: clamp into
        [clip_eps, 1 - clip_eps]. When ``counter`` is given, its single
        entry is incremented by the number of clamped values.
        """
        x = np.asarray(x, dtype=float)
        if self.kind == "identity":
            return x
        if self.kind == "log":
            clipped = np.maximum(x, self.clip_eps)
        else:
            clipped = np.clip(x, self.clip_eps, 1.0 - self.clip_eps)
        if counter is not None:
            counter[0] += int(np.sum(clipped != x))
        return clipped


def _check_finite(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        bad = int(np.flatnonzero(~np.isfinite(np.atleast_1d(x)))[0])
        raise DomainError(f"non-finite link input at index {bad}")


def link_eval(link: Link, x):
    """g(x)."""
    x = np.asarray(x, dtype=float)
    _check_finite(x)
    if link.kind == "identity":
        return x.copy()
    if link.kind == "log":
        return np.log(x)
    return np.log(x) - np.log1p(-x)


def link_prime(link: Link, x):
    """g'(x)."""
    x = np.asarray(x, dtype=float)
    _check_finite(x)
    if link.kind == "identity":
        return np.ones_like(x)
    if link.kind == "log":
        return 1.0 / x
    return 1.0 / (x * (1.0 - x))


def link_inv(link: Link, x):
    """g^{-1}(x)."""
    x = np.asarray(x, dtype=float)
    _check_finite(x)
    if link.kind == "identity":
        return x.copy()
    if link.kind == "log":
        return np.exp(x)
    return expit(x)


def expit(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def clip_prob(p, eps: float, counter: list | None = None):
    """min(max(p, eps), 1 - eps), counting clamped entries if asked."""
    if not (0.0 < eps < 0.5):
        raise ConfigurationError("eps must lie in (0, 0.5)")
    p = np.asarray(p, dtype=float)
    clipped = np.clip(p, eps, 1.0 - eps)
    if counter is not None:
        counter[0] += int(np.sum(clipped != p))
    if clipped.ndim == 0:
        return float(clipped)
    return clipped


# ---------------------------------------------------------------------------
# Folds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldPlan:
    """Assignment of each row to one of K folds."""

    assignments: np.ndarray
    K: int
    seed: int

    @property
    def n(self) -> int:
        return self.assignments.shape[0]

    def fold_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == k)

    def complement_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != k)

    def to_json(self) -> str:
        return json.dumps(
            {"seed": self.seed, "K": self.K, "assignments": self.assignments.tolist()}
        )

    @staticmethod
    def from_json(payload: str) -> "FoldPlan":
        obj = json.loads(payload)
        return FoldPlan(
            assignments=np.asarray(obj["assignments"], dtype=np.int64),
            K=int(obj["K"]),
            seed=int(obj["seed"]),
        )


def make_folds(n: int, K: int, seed: int) -> FoldPlan:
    """Shuffle row indices with a seeded stream and deal them round-robin.

    Fold sizes differ by at most one; regeneration with the same
    (n, K, seed) is bit-identical.
    """
    if K < 2:
        raise ConfigurationError(f"need at least 2 folds, got K={K}")
    if n < 2 * K:
        raise ConfigurationError(f"n={n} is too small for K={K} folds (need n >= 2K)")
    rng = rng_stream(seed, "folds")
    perm = rng.permutation(n)
    assignments = np.empty(n, dtype=np.int64)
    assignments[perm] = np.arange(n) % K
    assignments.setflags(write=False)
    return FoldPlan(assignments=assignments, K=K, seed=seed)


# ---------------------------------------------------------------------------
# Estimate reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EstimateReport:
    """Point estimate with influence-curve standard error and 95% Wald CI."""

    beta_hat: float
    se: float
    ci_lower: float
    ci_upper: float
    influence_values: np.ndarray
    n: int
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> str:
        diag = {}
        for k, v in self.diagnostics.items():
            diag[k] = float(v) if isinstance(v, (int, float, np.floating)) and not isinstance(v, bool) else v
        return json.dumps(
            {
                "schema_version": 1,
                "beta": self.beta_hat,
                "se": self.se,
                "ci": [self.ci_lower, self.ci_upper],
                "n": self.n,
                "diagnostics": diag,
            }
        )


def report_from_influence(
    beta_hat: float,
    influence_values: np.ndarray,
    *,
    denominator: float,
    n_clipped: int = 0,
    learner_summaries: str = "",
    extra_diagnostics: dict | None = None,
) -> EstimateReport:
    """Assemble an EstimateReport; se is sd(influence)/sqrt(n)."""
    phi = np.asarray(influence_values, dtype=float)
    n = phi.shape[0]
    se = float(np.std(phi, ddof=1) / math.sqrt(n))
    diagnostics = {
        "denominator": float(denominator),
        "n_clipped": int(n_clipped),
        "learner_summaries": learner_summaries,
    }
    if extra_diagnostics:
        diagnostics.update(extra_diagnostics)
    return EstimateReport(
        beta_hat=float(beta_hat),
        se=se,
        ci_lower=float(beta_hat - Z95 * se),
        ci_upper=float(beta_hat + Z95 * se),
        influence_values=phi,
        n=n,
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def load_csv(path, schema: dict) -> Dataset:
    """Read a comma-separated UTF-8 file with a header row into a Dataset.

    ``schema`` maps roles to column names: {"y": ..., "a1": ...,
    "a2": optional, "l": [names]}. Every referenced cell must parse as a
    decimal number; NaN/Inf and unparseable cells are rejected with the
    offending row and column named.
    """
    for key in ("y", "a1", "l"):
        if key not in schema:
            raise ConfigurationError(f"schema is missing required key '{key}'")
    l_names = list(schema["l"])
    if not l_names:
        raise ConfigurationError("schema key 'l' must name at least one covariate column")
    wanted = [schema["y"], schema["a1"]] + ([schema["a2"]] if schema.get("a2") else []) + l_names

    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file, expected a header row") from None
        header = [h.strip() for h in header]
        missing = [c for c in wanted if c not in header]
        if missing:
            raise IngestionError(f"{path}: missing column(s) {missing}; header is {header}")
        col_idx = {c: header.index(c) for c in wanted}

        rows: list[list[float]] = []
        for row_number, row in enumerate(reader, start=2):
            if not row:
                continue
            parsed = []
            for c in wanted:
                cell = row[col_idx[c]].strip()
                try:
                    value = float(cell)
                except ValueError:
                    raise IngestionError(
                        f"{path}: cell '{cell}' in row {row_number}, column '{c}' is not a number"
                    ) from None
                if not math.isfinite(value):
                    raise IngestionError(
                        f"{path}: non-finite value in row {row_number}, column '{c}'"
                    )
                parsed.append(value)
            rows.append(parsed)

    if not rows:
        raise IngestionError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=float)
    y = data[:, 0]
    a1 = data[:, 1]
    offset = 2
    a2 = None
    if schema.get("a2"):
        a2 = data[:, 2]
        offset = 3
    l = data[:, offset:]
    return Dataset(y=y, a1=a1, a2=a2, l=l, column_names=tuple(l_names))


def write_csv(dataset: Dataset, path, schema: dict | None = None) -> dict:
    """Write a Dataset back to CSV; returns the schema that reads it back.

    Floats are written with repr so that load_csv(write_csv(d)) reproduces
    every cell exactly.
    """
    if schema is None:
        schema = {"y": "y", "a1": "a1", "l": list(dataset.column_names)}
        if dataset.a2 is not None:
            schema["a2"] = "a2"
    header = [schema["y"], schema["a1"]]
    columns = [dataset.y, dataset.a1]
    if dataset.a2 is not None:
        header.append(schema["a2"])
        columns.append(dataset.a2)
    header.extend(schema["l"])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.n):
            row = [repr(float(col[i])) for col in columns]
            row.extend(repr(float(v)) for v in dataset.l[i])
            writer.writerow(row)
    return schema
