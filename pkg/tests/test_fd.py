import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from fedl.errors import DomainError
from fedl.fd import (
    DirichletParams,
    FDParams,
    dirichlet_log_density,
    fd_density,
    fd_log_density,
    fd_marginal_density,
    fd_mean,
    fd_mode_separation,
    fd_posterior,
    fd_sample,
    fd_variance,
    predictive_decomposition,
    sl_opinions,
)


def fd(alpha, p, tau):
    return FDParams(np.asarray(alpha, float), np.asarray(p, float), np.float64(tau))


@st.composite
def fd_params(draw, K=None):
    K = draw(st.integers(2, 6)) if K is None else K
    alpha = draw(st.lists(st.floats(0.05, 50.0), min_size=K, max_size=K))
    w = np.array(draw(st.lists(st.floats(0.0, 1.0), min_size=K, max_size=K)))
    if w.sum() == 0:
        w[0] = 1.0
    tau = draw(st.floats(0.05, 50.0))
    return fd(alpha, w / w.sum(), tau)


# ---------------------------------------------------------------- validation


class TestValidation:
    def test_rejects_nonpositive_alpha(self):
        with pytest.raises(DomainError):
            fd([1.0, 0.0], [0.5, 0.5], 1.0)

    def test_rejects_nonpositive_tau(self):
        with pytest.raises(DomainError):
            fd([1.0, 1.0], [0.5, 0.5], 0.0)

    def test_rejects_p_off_simplex(self):
        with pytest.raises(DomainError):
            fd([1.0, 1.0], [0.5, 0.6], 1.0)

    def test_rejects_single_class(self):
        with pytest.raises(DomainError):
            fd([1.0], [1.0], 1.0)

    def test_batched_indexing(self):
        b = FDParams(np.ones((4, 3)), np.full((4, 3), 1 / 3), np.arange(1.0, 5.0))
        assert len(b) == 4 and b.batch_shape == (4,)
        assert float(b[2].tau) == 3.0
        assert np.allclose(b.alpha0, 3.0)


# ---------------------------------------------------------------- moments


class TestMoments:
    def test_symmetric_mean(self):
        np.testing.assert_allclose(fd_mean(fd([1, 1], [0.5, 0.5], 1)), [0.5, 0.5])

    def test_dirichlet_case_mean(self):
        np.testing.assert_allclose(fd_mean(fd([3, 1], [0.75, 0.25], 1)), [0.75, 0.25])

    def test_concentrated_allocation_mean(self):
        np.testing.assert_allclose(fd_mean(fd([2, 1, 1], [1, 0, 0], 4)), [0.75, 0.125, 0.125])

    def test_uniform_variance(self):
        np.testing.assert_allclose(fd_variance(fd([1, 1], [0.5, 0.5], 1)), [1 / 12, 1 / 12])

    def test_beta22_variance(self):
        np.testing.assert_allclose(fd_variance(fd([2, 2], [0.5, 0.5], 1)), [0.05, 0.05])

    @given(fd_params())
    def test_mean_on_simplex(self, q):
        m = fd_mean(q)
        assert np.all(m > 0) and abs(m.sum() - 1) < 1e-12

    @given(fd_params())
    def test_variance_matches_mixture_of_dirichlets(self, q):
        # law of total variance over the allocation z
        K = q.K
        a = q.alpha + q.tau * np.eye(K)
        s = a.sum(axis=1, keepdims=True)
        cm = a / s
        cv = cm * (1 - cm) / (s + 1)
        mean = q.p @ cm
        var = q.p @ cv + q.p @ (cm - mean) ** 2
        np.testing.assert_allclose(fd_variance(q), var, rtol=1e-10, atol=1e-15)


# ---------------------------------------------------------------- densities


class TestDensity:
    def test_uniform_point(self):
        assert abs(fd_log_density(fd([1, 1], [0.5, 0.5], 1), [0.5, 0.5])) < 1e-14

    def test_reduces_to_dirichlet(self):
        rng = np.random.default_rng(0)
        alpha = rng.uniform(0.3, 8, size=4)
        pts = rng.dirichlet(np.ones(4), size=100)
        got = fd_log_density(fd(alpha, alpha / alpha.sum(), 1.0), pts)
        np.testing.assert_allclose(got, dirichlet_log_density(alpha, pts), atol=1e-10, rtol=0)

    @settings(max_examples=50)
    @given(fd_params())
    def test_mixture_identity(self, q):
        rng = np.random.default_rng(1)
        pts = rng.dirichlet(np.full(q.K, 2.0), size=20)
        pts = np.clip(pts, 1e-8, None)
        pts /= pts.sum(axis=1, keepdims=True)
        mix = sum(q.p[k] * np.exp(dirichlet_log_density(q.alpha + q.tau * np.eye(q.K)[k], pts))
                  for k in range(q.K))
        got = fd_density(q, pts)
        ok = mix > 1e-250
        np.testing.assert_allclose(got[ok], mix[ok], rtol=1e-9)

    def test_zero_weight_components_drop_out(self):
        q = fd([2, 3, 1.5], [0.0, 1.0, 0.0], 2.0)
        pts = np.array([[0.2, 0.5, 0.3], [0.1, 0.1, 0.8]])
        np.testing.assert_allclose(fd_log_density(q, pts),
                                   dirichlet_log_density([2, 5, 1.5], pts), atol=1e-12)

    def test_integrates_to_one_k2(self):
        q = fd([0.7, 2.5], [0.3, 0.7], 1.7)
        z, _ = integrate.quad(lambda x: float(fd_density(q, [x, 1 - x])), 0, 1, limit=200)
        assert abs(z - 1) < 1e-8

    @pytest.mark.parametrize("point", [[0.0, 1.0], [1.0, 0.0], [0.5, 0.6], [0.5]])
    def test_boundary_and_malformed_points_rejected(self, point):
        with pytest.raises(DomainError):
            fd_log_density(fd([1, 1], [0.5, 0.5], 1), point)

    def test_batched_params_broadcast(self):
        q = FDParams(np.array([[1.0, 2.0], [3.0, 1.0]]), np.array([[0.5, 0.5], [0.2, 0.8]]),
                     np.array([1.0, 2.0]))
        pt = np.array([0.3, 0.7])
        got = fd_log_density(q, pt)
        want = [fd_log_density(q[i], pt) for i in range(2)]
        np.testing.assert_allclose(got, want, rtol=1e-14)


# ---------------------------------------------------------------- sampling


class TestSampling:
    @given(fd_params(), st.integers(0, 2**32 - 1))
    def test_samples_on_open_simplex(self, q, seed):
        x = fd_sample(q, np.random.default_rng(seed), 1)
        assert x.shape == (1, q.K)
        assert abs(x.sum() - 1) < 1e-12
        assert np.all(x >= 0) and np.all(x <= 1)

    def test_deterministic(self):
        q = fd([2, 1, 1], [0.2, 0.5, 0.3], 3)
        a = fd_sample(q, np.random.default_rng(5), 50)
        b = fd_sample(q, np.random.default_rng(5), 50)
        assert np.array_equal(a, b)

    def test_mean_matches(self):
        q = fd([2, 1, 1], [1, 0, 0], 4)
        x = fd_sample(q, np.random.default_rng(0), 10**6)
        assert np.max(np.abs(x.mean(axis=0) - fd_mean(q))) < 0.003

    def test_variance_relative_error(self):
        q = fd([0.5, 3.0, 1.2], [0.1, 0.6, 0.3], 2.5)
        x = fd_sample(q, np.random.default_rng(1), 10**6)
        np.testing.assert_allclose(x.var(axis=0), fd_variance(q), rtol=0.02)

    def test_small_shapes_are_exact(self):
        # shape < 1 Gamma draws: Beta(0.3, 0.4) marginal from FD with tiny params
        q = fd([0.3, 0.2], [0.5, 0.5], 0.4)
        x = fd_sample(q, np.random.default_rng(2), 200_000)[:, 0]
        grid = np.linspace(0.05, 0.95, 10)
        emp = np.array([(x <= g).mean() for g in grid])
        cdf = np.array([integrate.quad(lambda t: float(fd_marginal_density(q, 0, t)), 0, g,
                                       limit=200)[0] for g in grid])
        assert np.max(np.abs(emp - cdf)) < 0.005

    def test_rejects_batched_params(self):
        b = FDParams(np.ones((2, 2)), np.full((2, 2), 0.5), np.ones(2))
        with pytest.raises(DomainError):
            fd_sample(b, np.random.default_rng(0), 1)


# ---------------------------------------------------------------- posterior


class TestPosterior:
    def test_concentrations_absorb_counts(self):
        post = fd_posterior(fd([1, 1], [0.5, 0.5], 1), [3, 0])
        np.testing.assert_array_equal(post.alpha, [4, 1])
        assert float(post.tau) == 1.0
        # Gamma(1)Gamma(5) / (Gamma(2)Gamma(4)) = 4 for the observed class, 1 otherwise
        np.testing.assert_allclose(post.p, [0.8, 0.2], rtol=1e-13)

    def test_zero_counts_identity(self):
        prior = fd([1.5, 2.0, 0.7], [0.2, 0.3, 0.5], 2.0)
        post = fd_posterior(prior, [0, 0, 0])
        for a, b in zip((post.alpha, post.p, post.tau), (prior.alpha, prior.p, prior.tau)):
            assert np.array_equal(a, b)

    def test_real_valued_counts(self):
        post = fd_posterior(fd([1, 1], [0.5, 0.5], 1), [0.5, 1.25])
        np.testing.assert_allclose(post.alpha, [1.5, 2.25])

    def test_sequential_updates_compose(self):
        prior = fd([0.8, 2.0, 1.1], [0.5, 0.25, 0.25], 3.0)
        a = fd_posterior(fd_posterior(prior, [1, 0, 2]), [0, 3, 1])
        b = fd_posterior(prior, [1, 3, 3])
        np.testing.assert_allclose(a.alpha, b.alpha)
        np.testing.assert_allclose(a.p, b.p, rtol=1e-12)

    def test_negative_counts_rejected(self):
        with pytest.raises(DomainError):
            fd_posterior(fd([1, 1], [0.5, 0.5], 1), [-1, 0])


# ---------------------------------------------------------------- diagnostics


class TestMarginalsAndDiagnostics:
    def test_uniform_marginal(self):
        assert abs(float(fd_marginal_density(fd([1, 1], [0.5, 0.5], 1), 0, 0.5)) - 1.0) < 1e-12

    def test_marginal_integrates_to_one(self):
        q = fd([2.0, 0.5, 1.5], [0.2, 0.5, 0.3], 3.0)
        for k in range(3):
            z, _ = integrate.quad(lambda x: float(fd_marginal_density(q, k, x)), 0, 1, limit=200)
            assert abs(z - 1) < 1e-6

    def test_marginal_matches_sample_histogram(self):
        q = fd([2.0, 1.0, 3.0], [0.6, 0.3, 0.1], 4.0)
        x = fd_sample(q, np.random.default_rng(3), 10**6)[:, 0]
        edges = np.linspace(0, 1, 21)
        hist, _ = np.histogram(x, bins=edges)
        probs = np.array([integrate.quad(lambda t: float(fd_marginal_density(q, 0, t)), lo, hi)[0]
                          for lo, hi in zip(edges[:-1], edges[1:])])
        expected = probs * len(x)
        z = (hist - expected) / np.sqrt(expected + 1e-12)
        assert np.max(np.abs(z[expected > 50])) < 5

    @pytest.mark.parametrize("alpha, tau, want", [([2, 2], 2, 0.5), ([1, 1], 2, 1.0)])
    def test_mode_separation(self, alpha, tau, want):
        assert abs(float(fd_mode_separation(fd(alpha, [0.5, 0.5], tau))) - want) < 1e-15

    def test_mode_separation_small_tau(self):
        assert float(fd_mode_separation(fd([2, 2], [0.5, 0.5], 1e-9))) < 1e-8

    def test_mode_separation_singular(self):
        with pytest.raises(DomainError):
            fd_mode_separation(fd([0.5, 0.5], [0.5, 0.5], 1.0))

    def test_decomposition_examples(self):
        d = predictive_decomposition(fd([2, 2], [0.5, 0.5], 4))
        assert float(d.w_edl) == 0.5 and float(d.w_sm) == 0.5
        d = predictive_decomposition(fd([3, 1], [0.25, 0.75], 4))
        np.testing.assert_allclose(d.p_pred, [0.5, 0.5])

    def test_decomposition_small_tau_limit(self):
        d = predictive_decomposition(fd([3, 1], [0.1, 0.9], 1e-10))
        np.testing.assert_allclose(d.p_pred, [0.75, 0.25], atol=1e-10)

    @given(fd_params())
    def test_decomposition_equals_mean(self, q):
        np.testing.assert_allclose(predictive_decomposition(q).p_pred, fd_mean(q), atol=1e-12)

    def test_opinions_example(self):
        ops, w = sl_opinions(fd([1, 1], [0.5, 0.5], 2))
        for o in ops:
            np.testing.assert_allclose(o.belief, [0.25, 0.25])
            assert o.uncertainty_mass == 0.5

    @given(fd_params())
    def test_opinions_are_consistent(self, q):
        ops, w = sl_opinions(q)
        for o in ops:
            assert abs(o.belief.sum() + o.uncertainty_mass - 1) < 1e-12
        projected = sum(wj * o.projected for wj, o in zip(w, ops))
        np.testing.assert_allclose(projected, fd_mean(q), atol=1e-12)

    def test_dirichlet_params_validation(self):
        with pytest.raises(DomainError):
            DirichletParams(np.array([1.0, -1.0]))
