import numpy as np
import pytest

from leanglm import (
    Dataset,
    DiscreteJoint,
    EstimationError,
    Link,
    brute_force_estimand,
    estimate_main,
    influence_main,
    make_folds,
    mu_term,
)
from leanglm.crossfit import NuisanceFit
from leanglm.main_effect import MainEffectProblem
from leanglm.simulation import dgp_main, main_true_nuisances

from conftest import main_joint_dataset


def _problem_from_arrays(y, a, l, e_a, mu, m_g, link):
    data = Dataset(y=y, a1=a, l=l)
    plan = make_folds(data.n, 2, 0)
    nuis = NuisanceFit(e_a1=np.asarray(e_a, float), mu=np.asarray(mu, float),
                       m_g=np.asarray(m_g, float), fold_plan=plan)
    return MainEffectProblem(data=data, link=link, nuis=nuis)


class TestMuTerm:
    def test_identity_link_reduces_to_robinson_signal(self):
        # with m_g = E(Y|L) the term is just y - m_g
        y = np.array([1.0, 2.0, -0.5])
        mu = np.array([0.7, 1.1, 0.2])
        m_g = np.array([0.5, 1.5, 0.0])
        out = mu_term(y, mu, m_g, Link("identity"))
        assert np.allclose(out, y - m_g)

    def test_perfectly_explained_observation_is_zero(self):
        out = mu_term(np.array([0.7]), np.array([0.7]), np.array([0.7]), Link("identity"))
        assert out[0] == 0.0

    def test_logit_arithmetic(self):
        # g'(0.5) = 4, g(0.5) = 0: 4*(1-0.5) + 0 - 0 = 2
        out = mu_term(np.array([1.0]), np.array([0.5]), np.array([0.0]), Link("logit"))
        assert out[0] == pytest.approx(2.0, abs=1e-12)


class TestEstimateMain:
    def test_estimating_equation_root(self):
        rng = np.random.default_rng(1)
        n = 300
        l = rng.normal(size=(n, 2))
        a = (rng.random(n) < 0.5).astype(float)
        y = a + l[:, 0] + rng.normal(size=n)
        problem = _problem_from_arrays(
            y, a, l, np.full(n, 0.5), y * 0 + y.mean(), np.full(n, y.mean()), Link("identity")
        )
        report = estimate_main(problem)
        phi = influence_main(problem, report.beta_hat)
        assert abs(phi.mean()) <= 1e-10 * (np.std(phi) + 1e-300)
        assert np.allclose(phi, report.influence_values)

    def test_identity_matches_robinson_formula(self):
        rng = np.random.default_rng(2)
        n = 500
        l = rng.normal(size=(n, 3))
        a = l[:, 0] * 0.5 + rng.normal(size=n)
        y = 1.5 * a + np.sin(l[:, 1]) + rng.normal(size=n)
        e_a = 0.5 * l[:, 0]
        m_g = np.sin(l[:, 1]) + 1.5 * e_a  # E(Y|L) under the truth
        mu = 1.5 * a + np.sin(l[:, 1])
        problem = _problem_from_arrays(y, a, l, e_a, mu, m_g, Link("identity"))
        report = estimate_main(problem)
        resid = a - e_a
        robinson = float(resid @ (y - m_g)) / float(resid @ resid)
        assert report.beta_hat == pytest.approx(robinson, abs=1e-12)

    def test_degenerate_denominator(self):
        rng = np.random.default_rng(3)
        n = 50
        l = rng.normal(size=(n, 1))
        a = np.full(n, 1.0)
        problem = _problem_from_arrays(
            rng.normal(size=n), a, l, a.copy(), np.zeros(n), np.zeros(n), Link("identity")
        )
        with pytest.raises(EstimationError, match="residual exposure variation"):
            estimate_main(problem)

    def test_population_equivalence_to_enumerated_estimand(self):
        # binary A, identity link, 3-level L, exact nuisances on a
        # noise-free replicated population: beta-hat must equal the
        # enumeration oracle to 1e-10
        l_levels = np.array([[0.0], [1.0], [2.0]])
        pmf = np.array([[0.10, 0.15, 0.05], [0.20, 0.25, 0.25]])  # (a, l)
        mean_y = np.array([[0.2, 1.0, -0.5], [1.2, 2.5, 0.75]])
        joint = DiscreteJoint(a_levels=np.array([0.0, 1.0]), l_levels=l_levels,
                              pmf=pmf, mean_y=mean_y)
        link = Link("identity")
        target = brute_force_estimand(joint, "main", link)

        data = main_joint_dataset(joint)
        p_l = pmf.sum(axis=0)
        pi = pmf[1] / p_l
        level_of = data.l[:, 0].astype(int)
        e_a = pi[level_of]
        mu = np.where(data.a1 > 0.5, mean_y[1][level_of], mean_y[0][level_of])
        m_g = pi[level_of] * mean_y[1][level_of] + (1 - pi[level_of]) * mean_y[0][level_of]
        problem = _problem_from_arrays(data.y, data.a1, data.l, e_a, mu, m_g, link)
        report = estimate_main(problem)
        assert report.beta_hat == pytest.approx(target, abs=1e-10)

    def test_oracle_nuisances_recover_truth_at_large_n(self):
        # correctly specified partially linear logistic model (experiment
        # 1); a single n=50,000 draw has Monte Carlo error of the same
        # size as the 0.02 bound, so five replicates are averaged
        estimates = []
        for seed in range(100, 105):
            data = dgp_main(1, 50_000, seed=seed, sigma_seed=3)
            truth = main_true_nuisances(1, data)
            plan = make_folds(data.n, 2, 0)
            nuis = NuisanceFit(e_a1=truth["e_a1"], mu=truth["mu"], m_g=truth["m_g"],
                               fold_plan=plan)
            problem = MainEffectProblem(data=data, link=Link("logit"), nuis=nuis)
            estimates.append(estimate_main(problem).beta_hat)
        assert abs(np.mean(estimates) - 0.3) < 0.02

    def test_influence_mean_zero_at_true_beta_on_oracle_data(self):
        data = dgp_main(1, 10_000, seed=203, sigma_seed=3)
        truth = main_true_nuisances(1, data)
        plan = make_folds(data.n, 2, 0)
        nuis = NuisanceFit(e_a1=truth["e_a1"], mu=truth["mu"], m_g=truth["m_g"],
                           fold_plan=plan)
        problem = MainEffectProblem(data=data, link=Link("logit"), nuis=nuis)
        phi = influence_main(problem, 0.3)
        assert abs(phi.mean()) < 3.0 * np.std(phi, ddof=1) / np.sqrt(data.n)


class TestNeymanOrthogonality:
    """Perturbing one nuisance leaves first-order bias; perturbing both
    scales the bias with the product of the errors."""

    @staticmethod
    def _identity_setup(n, seed):
        data = dgp_main(1, n, seed=seed, sigma_seed=3)
        truth = main_true_nuisances(1, data)
        e_true = truth["e_a1"]
        m_id = truth["e_a1"] * truth["mu1"] + (1 - truth["e_a1"]) * truth["mu0"]
        return data, e_true, m_id

    @classmethod
    def _beta_hat(cls, data, e_a, m_g):
        resid = data.a1 - e_a
        return float(resid @ (data.y - m_g)) / float(resid @ resid)

    def test_single_and_double_perturbations(self):
        # population value of the identity-link estimand via one large draw
        big, e_big, m_big = self._identity_setup(2_000_000, 900)
        target = self._beta_hat(big, e_big, m_big)

        reps = 200
        n = 20_000
        deltas = (0.05, 0.1)
        bias_e = {d: [] for d in deltas}
        bias_m = {d: [] for d in deltas}
        bias_both = {d: [] for d in deltas + (0.2,)}
        for rep in range(reps):
            data, e_true, m_true = self._identity_setup(n, 1000 + rep)
            for d in deltas:
                bias_e[d].append(self._beta_hat(data, e_true + d, m_true))
                bias_m[d].append(self._beta_hat(data, e_true, m_true + d))
            for d in deltas + (0.2,):
                bias_both[d].append(self._beta_hat(data, e_true + d, m_true + d))

        for d in deltas:
            assert abs(np.mean(bias_e[d]) - target) <= 0.1 * d
            assert abs(np.mean(bias_m[d]) - target) <= 0.1 * d
        ratio_1 = abs(np.mean(bias_both[0.1]) - target) / abs(np.mean(bias_both[0.05]) - target)
        ratio_2 = abs(np.mean(bias_both[0.2]) - target) / abs(np.mean(bias_both[0.1]) - target)
        assert 3.0 <= ratio_1 <= 5.0
        assert 3.0 <= ratio_2 <= 5.0
