import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gossip_langevin.errors import NotPSDError, ShapeError, ValidationError
from gossip_langevin.models import (
    DecomposedTarget,
    GaussianPosterior,
    Shard,
    linreg_component_grad,
    linreg_posterior,
    logreg_component_grad,
    model_constants,
    shard_data,
    stochastic_grad,
    synth_linreg,
    synth_logreg,
)
from gossip_langevin.numerics import RngStream

from conftest import linear_target, logistic_target

coords = st.floats(-3, 3, allow_nan=False)


def one_point(family, X, y, lam, convention="posterior"):
    t = DecomposedTarget(family, [Shard(np.atleast_2d(X), [y])], lam, convention=convention)
    return t.component(0)


def central_diff(f, x, h=1e-6):
    g = np.zeros_like(x)
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


class TestLinearGradient:
    def test_prior_only(self):
        t = DecomposedTarget("linear", [Shard.empty(2)], 10.0)
        np.testing.assert_allclose(linreg_component_grad(t.component(0), [1.0, 0.0]), [0.1, 0.0], atol=1e-15)

    def test_single_point_unscaled(self):
        m = one_point("linear", [1.0, 0.0], 1.0, 10.0, convention="unscaled")
        np.testing.assert_allclose(linreg_component_grad(m, [0.0, 0.0]), [-2.0, 0.0], atol=1e-15)

    def test_single_point_posterior_scaling(self):
        # 1 / (2 xi^2) = 1/2 halves the data term
        m = one_point("linear", [1.0, 0.0], 1.0, 10.0)
        np.testing.assert_allclose(linreg_component_grad(m, [0.0, 0.0]), [-1.0, 0.0], atol=1e-15)

    def test_stationary_at_posterior_mean(self, lin_target):
        m = lin_target.posterior().mean
        assert np.linalg.norm(lin_target.grad(m)) <= 1e-8

    def test_wrong_family(self, log_target):
        with pytest.raises(ValidationError):
            linreg_component_grad(log_target.component(0), np.zeros(3))

    def test_dimension_mismatch(self, lin_target):
        with pytest.raises(ShapeError):
            lin_target.agent_grad(0, np.zeros(3))

    @pytest.mark.parametrize("convention", ["posterior", "unscaled"])
    def test_finite_difference(self, convention, rng):
        t = linear_target(n=40, d=3, n_agents=2, convention=convention)
        for _ in range(20):
            x = rng.normal(size=3)
            num = central_diff(lambda z: t.agent_value(1, z), x)
            np.testing.assert_allclose(t.agent_grad(1, x), num, rtol=1e-6, atol=1e-6)


class TestLogisticGradient:
    def test_positive_label(self):
        m = one_point("logistic", [1.0], 1.0, 1.0)
        np.testing.assert_allclose(logreg_component_grad(m, [0.0]), [-0.5], atol=1e-15)

    def test_negative_label(self):
        m = one_point("logistic", [1.0], 0.0, 1.0)
        np.testing.assert_allclose(logreg_component_grad(m, [0.0]), [0.5], atol=1e-15)

    def test_finite_difference(self, rng):
        t = logistic_target(n=60, d=3, n_agents=2)
        for _ in range(20):
            x = rng.normal(size=3)
            num = central_diff(lambda z: t.agent_value(0, z), x)
            g = t.agent_grad(0, x)
            assert np.linalg.norm(g - num) <= 1e-6 * max(1.0, np.linalg.norm(g))

    def test_overflow_safe(self):
        m = one_point("logistic", [1.0], 0.0, 1.0)
        assert np.isfinite(m.value([800.0]))
        np.testing.assert_allclose(m.grad([800.0]), [1.0 + 800.0], rtol=1e-12)

    def test_bad_labels(self):
        with pytest.raises(ValidationError):
            DecomposedTarget("logistic", [Shard([[1.0]], [2.0])], 1.0)

    def test_hessian_finite_difference(self, log_target, rng):
        x = rng.normal(size=3)
        num = np.stack([central_diff(lambda z: log_target.grad(z)[k], x) for k in range(3)])
        np.testing.assert_allclose(log_target.hessian(x), num, rtol=1e-5, atol=1e-5)


class TestBatchedKernels:
    @pytest.mark.parametrize("make", [linear_target, logistic_target])
    def test_full_grad_matches_scalar(self, make, rng):
        t = make()
        x = rng.normal(size=(3, t.n_agents, t.d))
        g = t.full_grad(x)
        for r in range(3):
            for i in range(t.n_agents):
                np.testing.assert_allclose(g[r, i], t.agent_grad(i, x[r, i]), rtol=1e-12, atol=1e-11)

    @pytest.mark.parametrize("make", [linear_target, logistic_target])
    def test_minibatch_matches_component(self, make, rng):
        t = make()
        x = rng.normal(size=(t.n_agents, t.d))
        u = np.stack([RngStream(4, i).uniform(7) for i in range(t.n_agents)])
        g = t.minibatch_grad(x, u)
        for i in range(t.n_agents):
            ref = stochastic_grad(t.component(i), x[i], 7, RngStream(4, i))
            np.testing.assert_allclose(g[i], ref, rtol=1e-12, atol=1e-11)

    def test_shape_check(self, lin_target):
        with pytest.raises(ShapeError):
            lin_target.full_grad(np.zeros((4, 2)))


class TestStochasticGrad:
    def test_single_point_shard_exact(self):
        for family, y in (("linear", 0.3), ("logistic", 1.0)):
            m = one_point(family, [0.5, -1.5], y, 10.0)
            x = np.array([0.2, 0.7])
            np.testing.assert_allclose(stochastic_grad(m, x, 1, RngStream(0)), m.grad(x), rtol=1e-15, atol=1e-15)

    def test_full_mode_draws_nothing(self, lin_target):
        s = RngStream(3)
        g = stochastic_grad(lin_target.component(1), np.ones(2), "full", s)
        assert s.uniform(4).tobytes() == RngStream(3).uniform(4).tobytes()
        np.testing.assert_array_equal(g, lin_target.agent_grad(1, np.ones(2)))

    def test_zero_batch(self, lin_target):
        with pytest.raises(ValidationError):
            stochastic_grad(lin_target.component(0), np.zeros(2), 0, RngStream(0))

    def test_empty_shard(self):
        t = DecomposedTarget("linear", [Shard.empty(2)], 10.0)
        with pytest.raises(ValidationError):
            stochastic_grad(t.component(0), np.zeros(2), 3, RngStream(0))

    @pytest.mark.parametrize("make", [linear_target, logistic_target])
    def test_unbiased_monte_carlo(self, make):
        t = make()
        draws, b = 20_000, 4
        x = np.broadcast_to(np.linspace(-0.5, 0.5, t.d), (draws, t.n_agents, t.d))
        est = t.minibatch_grad(x, RngStream(8, 1).uniform((draws, t.n_agents, b)))
        full = t.full_grad(x[:1])[0]
        se = est.std(axis=0, ddof=1) / np.sqrt(draws)
        assert np.all(np.abs(est.mean(axis=0) - full) <= 4 * se + 1e-12)

    def test_noise_moment_enumeration(self):
        # enumerate every with-replacement minibatch of a 3-point shard
        X = np.array([[1.0, 0.0], [0.5, 2.0], [-1.0, 1.0]])
        y = np.array([0.2, -1.0, 0.7])
        t = DecomposedTarget("linear", [Shard(X, y)], 10.0)
        x = np.array([0.3, -0.4])
        b = 2
        full = t.agent_grad(0, x)
        grids = np.array(np.meshgrid(*[np.arange(3)] * b)).reshape(b, -1).T
        u = (grids + 0.5) / 3
        est = t.minibatch_grad(np.broadcast_to(x, (len(u), 1, 2)), u[:, None, :])[:, 0]
        exact = np.mean(np.sum((est - full) ** 2, axis=1))
        assert t.gradient_noise_moment(0, x, b) == pytest.approx(exact, rel=1e-12)

    def test_sigma2_methods_agree(self, lin_target):
        exact = lin_target.sigma2(5)
        mc = lin_target.sigma2(5, method="monte_carlo", stream=RngStream(1, 5), draws=20_000)
        assert mc == pytest.approx(exact, rel=0.05)
        assert lin_target.sigma2(None) == 0.0


class TestPosterior:
    def test_no_data_is_prior(self):
        post = linreg_posterior([Shard.empty(3)], 10.0, 1.0)
        np.testing.assert_allclose(post.mean, 0, atol=0)
        np.testing.assert_allclose(post.cov, 10 * np.eye(3), rtol=1e-14)

    def test_one_point(self):
        post = linreg_posterior([Shard([[1.0]], [2.0])], 1.0, 1.0)
        assert post.cov[0, 0] == pytest.approx(0.5, abs=1e-15)
        assert post.mean[0] == pytest.approx(1.0, abs=1e-15)

    def test_sharding_invariant(self, rng):
        X = rng.normal(size=(30, 2))
        y = rng.normal(size=30)
        pooled = linreg_posterior([Shard(X, y)], 4.0, 0.7)
        split = linreg_posterior(shard_data(X, y, [range(0, 11), range(11, 30)]), 4.0, 0.7)
        np.testing.assert_allclose(pooled.mean, split.mean, atol=1e-12)
        np.testing.assert_allclose(pooled.cov, split.cov, atol=1e-12)

    def test_matches_target_minimizer(self):
        t = linear_target(xi=0.6)
        post = linreg_posterior(t.shards, t.lam, 0.6)
        np.testing.assert_allclose(post.mean, t.x_star, atol=1e-12)
        assert np.linalg.norm(t.grad(post.mean)) <= 1e-8
        # exp(-f) has precision equal to the Hessian of f
        np.testing.assert_allclose(np.linalg.inv(post.cov), t.hessian(post.mean), rtol=1e-10)

    def test_not_pd(self):
        with pytest.raises(NotPSDError):
            GaussianPosterior(np.zeros(2), np.diag([1.0, -1.0]))

    def test_logistic_refused(self, log_target):
        with pytest.raises(ValidationError):
            log_target.posterior()


class TestConstants:
    def test_prior_only(self):
        c = model_constants("linear", [Shard.empty(2)] * 100, 10.0, 100)
        assert c.mu == pytest.approx(1e-3, rel=1e-15)
        assert c.L == pytest.approx(1e-3, rel=1e-15)

    def test_linear_single_point(self):
        c = model_constants("linear", [Shard([[1.0, 0.0]], [0.0])], 10.0, 1, convention="unscaled")
        assert c.L == pytest.approx(2 + 1 / 10, rel=1e-15)

    def test_logistic_single_point(self):
        c = model_constants("logistic", [Shard([[2.0, 0.0]], [1.0])], 10.0, 1)
        assert c.L == pytest.approx(1 + 1 / 10, rel=1e-15)

    def test_agent_count_checked(self):
        with pytest.raises(ValidationError):
            model_constants("linear", [Shard.empty(2)], 10.0, 3)

    def test_tight_mu(self, lin_target):
        loose = lin_target.strong_convexity()
        tight = lin_target.strong_convexity(tight=True)
        assert tight >= loose == pytest.approx(lin_target.reg)

    def test_logistic_minimizer(self, log_target):
        assert np.linalg.norm(log_target.grad(log_target.x_star)) <= 1e-9

    def test_agent_minimum(self, lin_target, log_target):
        for t in (lin_target, log_target):
            for i in range(t.n_agents):
                xm, fm = t.agent_minimum(i)
                assert np.linalg.norm(t.agent_grad(i, xm)) <= 1e-8
                assert fm <= t.agent_value(i, np.zeros(t.d))

    @pytest.mark.parametrize("make", [linear_target, logistic_target])
    def test_quadratic_sandwich(self, make, rng):
        t = make()
        c = t.constants()
        assert c.L >= c.mu
        for _ in range(100):
            x, y = rng.normal(scale=2, size=(2, t.d))
            gap = t.value(x) - t.value(y) - t.grad(y) @ (x - y)
            dist = float((x - y) @ (x - y))
            # constants bound each component, so f's constants are N times larger
            assert gap >= 0.5 * c.mu * dist - 1e-8
            assert gap <= 0.5 * t.n_agents * c.L * dist + 1e-8

    @pytest.mark.parametrize("make", [linear_target, logistic_target])
    def test_component_constants(self, make, rng):
        t = make()
        c = t.constants()
        for i in range(t.n_agents):
            for _ in range(20):
                x, y = rng.normal(scale=2, size=(2, t.d))
                gap = t.agent_value(i, x) - t.agent_value(i, y) - t.agent_grad(i, y) @ (x - y)
                dist = float((x - y) @ (x - y))
                assert 0.5 * c.mu * dist - 1e-8 <= gap <= 0.5 * c.L * dist + 1e-8

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, 2, elements=coords))
    def test_gradient_additivity(self, x):
        t = linear_target()
        pooled = t.pooled()
        g = t.grad(x)
        np.testing.assert_allclose(g, pooled.grad(x), rtol=1e-10, atol=1e-9)


class TestSynthetic:
    def test_noiseless(self):
        X, y, tx = synth_linreg(RngStream(0), 50, 3, 0.0, 10.0)
        np.testing.assert_array_equal(y, X @ tx)

    def test_deterministic(self):
        a = synth_linreg(RngStream(5, 1), 20, 2, 1.0, 10.0)
        b = synth_linreg(RngStream(5, 1), 20, 2, 1.0, 10.0)
        assert all(u.tobytes() == v.tobytes() for u, v in zip(a, b))
        c = synth_logreg(RngStream(5, 1), 20, 2)
        d = synth_logreg(RngStream(5, 1), 20, 2)
        assert all(u.tobytes() == v.tobytes() for u, v in zip(c, d))

    def test_full_scale_shapes(self):
        X, y, tx = synth_linreg(RngStream(0), 5000, 2, 1.0, 10.0)
        assert X.shape == (5000, 2) and y.shape == (5000,) and tx.shape == (2,)

    def test_prior_draw_scale(self):
        draws = np.stack([synth_linreg(RngStream(s), 1, 2, 1.0, 10.0)[2] for s in range(4000)])
        assert draws.var() == pytest.approx(10.0, rel=0.1)

    def test_zero_weight_coin_flips(self):
        n = 20_000
        _, y, _ = synth_logreg(RngStream(2), n, 3, 20.0, 10.0, true_x=np.zeros(3))
        assert abs(y.mean() - 0.5) <= 5 * 0.5 / np.sqrt(n)

    def test_large_weight_nearly_separable(self):
        x = np.array([1e3, 0.0, 0.0])
        X, y, _ = synth_logreg(RngStream(3), 20_000, 3, 20.0, 10.0, true_x=x)
        assert np.mean(y != (X @ x > 0)) <= 0.01

    def test_bad_n(self):
        with pytest.raises(ValidationError):
            synth_linreg(RngStream(0), 0, 2, 1.0, 1.0)
