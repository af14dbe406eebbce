import numpy as np
import pytest

from regvb.errors import ConvergenceError, ParameterDomainError
from regvb.estimators import EstimatePair, EstimatorKind, estimate_pair
from regvb.families import (AugmentedParams, BetaFamily, CategoricalFamily,
                            ExponentialFamily, Gaussian1DFamily,
                            InverseGammaFamily, MultivariateGaussianFamily)
from regvb.models.exp_toy import exp_toy_model
from regvb.optimizer import init_state, run, step
from tests.test_estimators import CONJUGATE_CASES, conjugate_target

FAM = ExponentialFamily()
PRIOR = AugmentedParams.normalized(FAM, np.array([1.0]))


class TestInit:
    def test_prior_matching_gaussian(self):
        fam = Gaussian1DFamily()
        prior = AugmentedParams.normalized(fam, Gaussian1DFamily.from_mean_var(0.0, 1.0))
        state = init_state(fam, prior, 100)
        assert np.allclose(state.c, fam.analytic_fisher(prior.eta))
        assert np.allclose(state.g, state.c @ prior.tilde)
        assert np.allclose(state.params.tilde, prior.tilde)

    def test_toy_identity_start(self):
        state = init_state(FAM, PRIOR, 4, init_c="identity")
        assert np.allclose(state.c, np.eye(2))
        assert state.params.eta[0] == 1.0

    def test_step_size(self):
        assert init_state(FAM, PRIOR, 100).w == pytest.approx(0.1)

    def test_minimum_iterations(self):
        with pytest.raises(ParameterDomainError):
            init_state(FAM, PRIOR, 3)

    def test_diag_mc_fallback_for_mvn(self):
        fam = MultivariateGaussianFamily(2)
        eta = MultivariateGaussianFamily.params_from_moments(np.zeros(2), np.eye(2))
        state = init_state(fam, AugmentedParams.normalized(fam, eta), 20,
                           rng=np.random.default_rng(0))
        assert np.allclose(state.c, np.diag(np.diag(state.c)))
        assert state.c.shape == (fam.k + 1, fam.k + 1)


class TestStep:
    def test_first_order_expansion(self):
        # for small lambda = w/(1-w) a step is pre-conditioned gradient descent
        target = exp_toy_model(2.0)
        n_huge = 10**12   # w = 1e-6
        state = init_state(FAM, PRIOR, n_huge, init_c="analytic")
        est = estimate_pair(EstimatorKind("same_draw", 1), FAM, state.params,
                            target.log_joint, np.random.default_rng(3))
        eta_before = state.params.tilde.copy()
        c_before = state.c.copy()
        w = state.w
        lam = w / (1.0 - w)
        predicted = eta_before - lam * np.linalg.solve(
            c_before, est.c_hat @ eta_before - est.g_hat)
        step(state, est)
        assert np.allclose(state.params.tilde, predicted, atol=1e-8)

    def test_w_one_forgets_history(self):
        state = init_state(FAM, PRIOR, 4, init_c="identity")
        state.w = 1.0
        est = EstimatePair(np.array([[1.0, -0.4], [-0.4, 0.3]]), np.array([0.2, 0.5]), 1)
        step(state, est)
        assert np.allclose(state.g, est.g_hat)
        assert np.allclose(state.c, est.c_hat)
        assert np.allclose(state.params.tilde, np.linalg.solve(est.c_hat, est.g_hat))

    def test_invalid_proposal_keeps_params_but_accumulates(self):
        state = init_state(FAM, PRIOR, 4, init_c="identity")
        state.t = 2   # inside the averaging window
        bad = EstimatePair(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([0.0, -5.0]), 1)
        before = state.params.tilde.copy()
        step(state, bad)
        assert state.warnings.invalid_proposals == 1
        assert np.allclose(state.params.tilde, before)
        assert state.bar_count == 1
        assert np.allclose(state.g_bar, bad.g_hat)


class TestWeightedIdentity:
    def test_matches_direct_summation(self):
        target = exp_toy_model(1.7)
        rng = np.random.default_rng(8)
        n = 50
        state = init_state(FAM, PRIOR, n, init_c="identity")
        g1 = state.g.copy()
        w = state.w
        ests = []
        for _ in range(20):
            est = estimate_pair(EstimatorKind("same_draw", 1), FAM, state.params,
                                target.log_joint, rng)
            ests.append(est.g_hat)
            step(state, est)
        t = len(ests)
        direct = (1.0 - w) ** t * g1
        for j, ghat in enumerate(ests, start=1):
            direct = direct + w * (1.0 - w) ** (t - j) * ghat
        assert np.allclose(state.g, direct, atol=1e-12)


class TestRun:
    def test_toy_exact_in_four_iterations(self):
        target = exp_toy_model(2.0)
        for seed in range(20):
            params, state = run(FAM, target, PRIOR, 4, EstimatorKind("same_draw"),
                                seed=seed, init_c="identity")
            assert params.eta[0] == pytest.approx(2.0, rel=1e-10)

    def test_deterministic(self):
        target = exp_toy_model(2.0)
        a, _ = run(FAM, target, PRIOR, 50, EstimatorKind("same_draw"), seed=123)
        b, _ = run(FAM, target, PRIOR, 50, EstimatorKind("same_draw"), seed=123)
        assert np.array_equal(a.tilde, b.tilde)

    @pytest.mark.parametrize("family,xi,eta0", CONJUGATE_CASES,
                             ids=[c[0].name for c in CONJUGATE_CASES])
    def test_conjugate_recovery_all_families(self, family, xi, eta0):
        if family.name == "categorical":
            pytest.skip("discrete draws repeat; covered by the estimator-level test")
        target = conjugate_target(family, xi)
        prior = AugmentedParams.normalized(family, eta0)
        n = 4 * (family.k + 1)
        params, _ = run(family, target, prior, n, EstimatorKind("same_draw"),
                        seed=17, init_c="identity")
        assert np.allclose(params.tilde, xi, rtol=1e-9, atol=1e-9)

    def test_stationary_after_recovery(self):
        # running longer than needed leaves the answer unchanged
        target = exp_toy_model(2.0)
        short, _ = run(FAM, target, PRIOR, 4, seed=5, init_c="identity")
        long, _ = run(FAM, target, PRIOR, 400, seed=5, init_c="identity")
        assert short.eta[0] == pytest.approx(2.0, rel=1e-10)
        assert long.eta[0] == pytest.approx(2.0, rel=1e-10)

    def test_gradient_kind_conjugate(self):
        fam = Gaussian1DFamily()
        xi = np.array([-0.1, 0.8, 1.6])
        target = conjugate_target(fam, xi)
        prior = AugmentedParams.normalized(fam, Gaussian1DFamily.from_mean_var(0.0, 1.0))
        params, state = run(fam, target, prior, 12, EstimatorKind("gradient"), seed=3)
        assert not state.has_intercept
        assert np.allclose(params.eta, xi[1:], rtol=1e-8)
        # normalized completion of the intercept
        assert params.eta0 == pytest.approx(-fam.log_normalizer(params.eta))

    def test_skipped_steps_counted(self):
        fam = Gaussian1DFamily()
        prior = AugmentedParams.normalized(fam, Gaussian1DFamily.from_mean_var(0.0, 1.0))

        class Patchy:
            def log_joint(self, x):
                return np.where(x > 0.0, -0.5 * (x - 0.3) ** 2, -np.inf)

        params, state = run(fam, Patchy(), prior, 60, seed=9)
        assert state.warnings.skipped_steps > 0
        assert fam.is_valid(params.eta)

    def test_majority_invalid_aborts(self):
        state = init_state(FAM, PRIOR, 4, init_c="identity")
        bad = EstimatePair(np.eye(2), np.array([0.0, -5.0]), 1)
        for _ in range(4):
            step(state, bad)
        from regvb.optimizer import finalize
        with pytest.raises(ConvergenceError):
            finalize(state)

    def test_trace_emitted(self):
        target = exp_toy_model(2.0)
        records = []
        run(FAM, target, PRIOR, 8, seed=1, init_c="identity", trace=records.append)
        assert len(records) == 8
        assert records[0]["t"] == 1 and "eta_tilde" in records[0]
