import numpy as np
import pytest

from leanglm import Dataset, DiscreteJoint


def replicate_population(counts: np.ndarray) -> np.ndarray:
    """Row-index expansion turning integer cell counts into a population."""
    return np.repeat(np.arange(counts.shape[0]), counts)


def main_joint_dataset(joint: DiscreteJoint, reps_per_unit: int = 1) -> Dataset:
    """Noise-free replicated population for a (A, L) discrete joint law.

    Every support point appears with multiplicity proportional to its
    probability (which must be rational with the implied denominator), and
    the outcome is set to its conditional mean, so sample moments equal
    population moments exactly.
    """
    pmf = np.asarray(joint.pmf, dtype=float)
    denom = _common_denominator(pmf)
    counts = np.rint(pmf * denom).astype(int) * reps_per_unit
    rows_a, rows_l, rows_y = [], [], []
    for ia, a in enumerate(np.asarray(joint.a_levels, dtype=float)):
        for il in range(pmf.shape[1]):
            c = counts[ia, il]
            if c == 0:
                continue
            rows_a.append(np.full(c, a))
            rows_l.append(np.tile(np.atleast_2d(joint.l_levels)[il], (c, 1)))
            rows_y.append(np.full(c, joint.mean_y[ia, il]))
    return Dataset(
        y=np.concatenate(rows_y),
        a1=np.concatenate(rows_a),
        l=np.vstack(rows_l),
    )


def interaction_joint_dataset(joint: DiscreteJoint, reps_per_unit: int = 1) -> Dataset:
    pmf = np.asarray(joint.pmf, dtype=float)
    denom = _common_denominator(pmf)
    counts = np.rint(pmf * denom).astype(int) * reps_per_unit
    a1_levels = np.asarray(joint.a_levels, dtype=float)
    a2_levels = np.asarray(joint.a2_levels, dtype=float)
    rows_a1, rows_a2, rows_l, rows_y = [], [], [], []
    for i1, a1 in enumerate(a1_levels):
        for i2, a2 in enumerate(a2_levels):
            for il in range(pmf.shape[2]):
                c = counts[i1, i2, il]
                if c == 0:
                    continue
                rows_a1.append(np.full(c, a1))
                rows_a2.append(np.full(c, a2))
                rows_l.append(np.tile(np.atleast_2d(joint.l_levels)[il], (c, 1)))
                rows_y.append(np.full(c, joint.mean_y[i1, i2, il]))
    return Dataset(
        y=np.concatenate(rows_y),
        a1=np.concatenate(rows_a1),
        a2=np.concatenate(rows_a2),
        l=np.vstack(rows_l),
    )


def _common_denominator(pmf: np.ndarray, max_denom: int = 4096) -> int:
    for denom in range(1, max_denom + 1):
        scaled = pmf * denom
        if np.allclose(scaled, np.rint(scaled), atol=1e-9):
            return denom
    raise ValueError("pmf entries are not small rationals")


@pytest.fixture
def exact_forest_spec():
    """Forest configuration that reproduces exact cell means on discrete
    data: one full-depth tree on the full sample with all features."""
    from leanglm import LearnerSpec

    return LearnerSpec(
        kind="forest",
        hyperparams={"n_trees": 1, "min_leaf": 1, "bootstrap_fraction": 1.0, "mtry": 64},
        seed=0,
    )
