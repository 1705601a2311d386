import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leanglm import (
    ConfigurationError,
    Dataset,
    DomainError,
    FoldPlan,
    IngestionError,
    Link,
    clip_prob,
    link_eval,
    link_inv,
    link_prime,
    load_csv,
    make_folds,
    rng_stream,
    write_csv,
)
from leanglm.core import report_from_influence


class TestLinks:
    def test_logit_symmetry_point(self):
        link = Link("logit")
        assert link_eval(link, 0.5) == pytest.approx(0.0, abs=1e-15)
        assert link_prime(link, 0.5) == pytest.approx(4.0, abs=1e-12)

    def test_identity(self):
        link = Link("identity")
        assert float(link_eval(link, 3.7)) == 3.7
        assert float(link_prime(link, 3.7)) == 1.0

    def test_log_at_two(self):
        # ln(2) and 1/2, checked against mpmath-style constants
        link = Link("log")
        assert float(link_eval(link, 2.0)) == pytest.approx(0.6931471805599453, abs=1e-15)
        assert float(link_prime(link, 2.0)) == pytest.approx(0.5, abs=1e-15)

    @pytest.mark.parametrize("kind", ["identity", "log", "logit"])
    def test_inverse_round_trip(self, kind):
        # g(g^{-1}(x)) = x on the g-scale. Right at the clip boundary the
        # float64 spacing of g^{-1}(x) caps the achievable accuracy near
        # 1e-10, so the 1e-12 bound is checked where float64 permits it
        # (probabilities in [1e-3, 1 - 1e-3] for the logit link).
        link = Link(kind)
        if kind == "identity":
            x = np.linspace(-50, 50, 1001)
        elif kind == "log":
            x = np.linspace(-27.0, 27.0, 1001)
        else:
            lo = float(link_eval(link, 1e-3))
            x = np.linspace(lo, -lo, 1001)
        round_trip = link_eval(link, link_inv(link, x))
        assert np.max(np.abs(round_trip - x)) < 1e-12

    @pytest.mark.parametrize("kind", ["identity", "log", "logit"])
    def test_prime_matches_central_difference(self, kind):
        link = Link(kind)
        if kind == "identity":
            x = np.linspace(-10, 10, 1000)
        elif kind == "log":
            x = np.geomspace(0.05, 50.0, 1000)
        else:
            x = np.linspace(0.02, 0.98, 1000)
        h = 1e-6
        fd = (np.asarray(link_eval(link, x + h)) - np.asarray(link_eval(link, x - h))) / (2 * h)
        assert np.max(np.abs(fd - link_prime(link, x))) <= 1e-6 * np.maximum(
            1.0, np.abs(link_prime(link, x))
        ).max()

    def test_non_finite_input_names_index(self):
        link = Link("identity")
        with pytest.raises(DomainError, match="index 2"):
            link_eval(link, np.array([1.0, 2.0, np.nan]))

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigurationError):
            Link("probit")


class TestClipProb:
    def test_interior_point(self):
        assert clip_prob(0.5, 1e-6) == 0.5

    def test_boundary_clamp(self):
        assert clip_prob(0.0, 1e-6) == 1e-6

    def test_out_of_range_learner_output(self):
        assert clip_prob(1.2, 1e-6) == pytest.approx(1.0 - 1e-6, abs=0)

    def test_counter_increments(self):
        counter = [0]
        clip_prob(np.array([0.0, 0.5, 1.5]), 1e-3, counter)
        assert counter[0] == 2

    def test_bad_eps(self):
        with pytest.raises(ConfigurationError):
            clip_prob(0.5, 0.7)


class TestFolds:
    def test_even_split(self):
        plan = make_folds(10, 2, 42)
        sizes = np.bincount(plan.assignments)
        assert list(sizes) == [5, 5]

    def test_remainder_rule(self):
        plan = make_folds(11, 2, 42)
        sizes = sorted(np.bincount(plan.assignments), reverse=True)
        assert sizes == [6, 5]

    def test_determinism(self):
        a = make_folds(100, 10, 7)
        b = make_folds(100, 10, 7)
        assert np.array_equal(a.assignments, b.assignments)

    def test_partition_and_balance(self):
        plan = make_folds(103, 7, 1)
        assert plan.assignments.shape == (103,)
        sizes = np.bincount(plan.assignments, minlength=7)
        assert sizes.max() - sizes.min() <= 1
        assert sizes.sum() == 103

    def test_too_few_rows(self):
        with pytest.raises(ConfigurationError):
            make_folds(19, 10, 0)

    def test_json_round_trip(self):
        plan = make_folds(20, 4, 9)
        restored = FoldPlan.from_json(plan.to_json())
        assert restored.K == plan.K and restored.seed == plan.seed
        assert np.array_equal(restored.assignments, plan.assignments)
        payload = json.loads(plan.to_json())
        assert set(payload) == {"seed", "K", "assignments"}

    @given(
        n=st.integers(min_value=8, max_value=300),
        k=st.integers(min_value=2, max_value=12),
        seed=st.integers(min_value=0, max_value=2**31),
    )
    @settings(max_examples=60, deadline=None)
    def test_fold_invariants_property(self, n, k, seed):
        if n < 2 * k:
            with pytest.raises(ConfigurationError):
                make_folds(n, k, seed)
            return
        plan = make_folds(n, k, seed)
        sizes = np.bincount(plan.assignments, minlength=k)
        assert sizes.sum() == n
        assert sizes.max() - sizes.min() <= 1
        assert np.array_equal(plan.assignments, make_folds(n, k, seed).assignments)


class TestRngStreams:
    def test_streams_reproducible_and_independent(self):
        a1 = rng_stream(5, "x", 0).normal(size=4)
        a2 = rng_stream(5, "x", 0).normal(size=4)
        b = rng_stream(5, "x", 1).normal(size=4)
        c = rng_stream(5, "y", 0).normal(size=4)
        assert np.array_equal(a1, a2)
        assert not np.array_equal(a1, b)
        assert not np.array_equal(a1, c)


class TestDataset:
    def test_binary_flags(self):
        d = Dataset(y=[1.0, 2.0], a1=[0.0, 1.0], l=[[1.0], [2.0]])
        assert d.a1_binary and d.a2 is None and not d.a2_binary
        d2 = Dataset(y=[1.0, 2.0], a1=[0.5, 1.0], a2=[1.0, 0.0], l=[[1.0], [2.0]])
        assert not d2.a1_binary and d2.a2_binary

    def test_rejects_nan(self):
        with pytest.raises(IngestionError, match="a1"):
            Dataset(y=[1.0, 2.0], a1=[np.nan, 1.0], l=[[1.0], [2.0]])

    def test_rejects_length_mismatch(self):
        with pytest.raises(IngestionError):
            Dataset(y=[1.0, 2.0], a1=[1.0], l=[[1.0], [2.0]])

    def test_arrays_read_only(self):
        d = Dataset(y=[1.0, 2.0], a1=[0.0, 1.0], l=[[1.0], [2.0]])
        with pytest.raises(ValueError):
            d.y[0] = 5.0


class TestCsv:
    def test_minimal_parse(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y,a,l1\n1.5,0,2.0\n2.5,1,3.0\n0.5,0,-1.0\n")
        d = load_csv(path, {"y": "y", "a1": "a", "l": ["l1"]})
        assert d.n == 3 and d.d == 1
        assert d.a1_binary

    def test_missing_column(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y,a\n1,0\n")
        with pytest.raises(IngestionError, match="l1"):
            load_csv(path, {"y": "y", "a1": "a", "l": ["l1"]})

    def test_bad_cell_names_row_and_column(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y,a,l1\n1,0,2.0\n1,1,NA\n")
        with pytest.raises(IngestionError, match=r"row 3.*'l1'|'l1'.*row 3"):
            load_csv(path, {"y": "y", "a1": "a", "l": ["l1"]})

    def test_nan_cell_rejected(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("y,a,l1\n1,0,nan\n1,1,2\n")
        with pytest.raises(IngestionError, match="non-finite"):
            load_csv(path, {"y": "y", "a1": "a", "l": ["l1"]})

    def test_round_trip_identity(self, tmp_path):
        rng = np.random.default_rng(3)
        d = Dataset(
            y=rng.normal(size=20),
            a1=rng.normal(size=20),
            a2=rng.normal(size=20),
            l=rng.normal(size=(20, 3)),
        )
        path = tmp_path / "round.csv"
        schema = write_csv(d, path)
        d2 = load_csv(path, schema)
        for a, b in ((d.y, d2.y), (d.a1, d2.a1), (d.a2, d2.a2), (d.l, d2.l)):
            assert np.max(np.abs(a - b)) <= 1e-12


class TestEstimateReport:
    def test_invariants(self):
        rng = np.random.default_rng(0)
        phi = rng.normal(size=400)
        phi -= phi.mean()
        report = report_from_influence(1.3, phi, denominator=2.0)
        sd = np.std(phi, ddof=1)
        assert report.se == pytest.approx(sd / math.sqrt(400), rel=1e-12)
        assert report.ci_lower == pytest.approx(1.3 - 1.959964 * report.se, rel=1e-12)
        assert report.ci_upper == pytest.approx(1.3 + 1.959964 * report.se, rel=1e-12)
        assert abs(report.influence_values.mean()) <= 1e-8 * sd
        payload = json.loads(report.to_json())
        assert payload["schema_version"] == 1
        assert payload["ci"] == [report.ci_lower, report.ci_upper]
        assert payload["diagnostics"]["denominator"] == 2.0
