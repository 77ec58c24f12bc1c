import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedl.errors import ContractError
from fedl.fd import FDParams, fd_sample, fd_variance
from fedl.objective import epistemic_variance_sum, loss, loss_gradient, one_hot


def fd(alpha, p, tau):
    return FDParams(np.asarray(alpha, float), np.asarray(p, float), np.float64(tau))


def random_point(rng, K):
    return fd(rng.uniform(0.1, 20, K), rng.dirichlet(np.ones(K)), rng.uniform(0.1, 20))


def test_example_with_one_hot_allocation():
    out = loss(fd([1, 1], [1, 0], 1), [1, 0])
    assert abs(float(out.mse_term) - 1 / 3) < 1e-12
    assert float(out.reg_term) == 0.0
    assert abs(float(out.total) - 1 / 3) < 1e-12


def test_example_with_uniform_allocation():
    out = loss(fd([1, 1], [0.5, 0.5], 1), [1, 0])
    assert abs(float(out.mse_term) - 2 / 3) < 1e-12
    assert abs(float(out.reg_term) - 0.5) < 1e-12
    assert abs(float(out.total) - 7 / 6) < 1e-12


def test_reg_term_zero_only_at_label():
    assert float(loss(fd([2, 2, 2], [0, 1, 0], 1), [0, 1, 0]).reg_term) == 0.0
    assert float(loss(fd([2, 2, 2], [1e-9, 1 - 2e-9, 1e-9], 1), [0, 1, 0]).reg_term) > 0.0


def test_mse_term_against_sampling():
    rng = np.random.default_rng(0)
    q = fd([1.5, 0.7, 2.0], [0.2, 0.3, 0.5], 2.5)
    y = np.array([0.0, 0.0, 1.0])
    draws = ((y - fd_sample(q, rng, 10**6)) ** 2).sum(axis=1)
    se = draws.std() / np.sqrt(len(draws))
    assert abs(draws.mean() - float(loss(q, y).mse_term)) < 3 * se


@given(st.integers(0, 10**6))
def test_variance_sum_forms_agree(seed):
    q = random_point(np.random.default_rng(seed), 4)
    assert abs(float(epistemic_variance_sum(q)) - fd_variance(q).sum()) < 1e-14


def test_gradient_sign_on_allocation():
    g = loss_gradient(fd([1, 1], [0.5, 0.5], 1), [1, 0])
    assert g.p[0] < 0


def test_reg_term_does_not_reach_alpha_or_tau():
    # the allocation penalty is a function of p alone
    q = fd([2.0, 3.0], [0.4, 0.6], 1.5)
    y = np.array([1.0, 0.0])
    h = 1e-6
    for delta in (np.array([h, 0.0]), np.array([0.0, h])):
        up = loss(fd(q.alpha + delta, q.p, q.tau), y).reg_term
        assert float(up) == float(loss(q, y).reg_term)


def _numeric_grad(q, y):
    def f(a, p, t):
        return float(loss(FDParams(a, p, np.float64(t)), y).total)

    ga, gp = np.zeros(q.K), np.zeros(q.K)
    for k in range(q.K):
        h = 1e-5 * max(1.0, q.alpha[k])
        e = np.eye(q.K)[k] * h
        ga[k] = (f(q.alpha + e, q.p, q.tau) - f(q.alpha - e, q.p, q.tau)) / (2 * h)
        # p is treated as a free vector; evaluate the closed form directly off-simplex
        hp = 1e-6
        ep = np.eye(q.K)[k] * hp
        ga_p = []
        for sign in (1, -1):
            pp = q.p + sign * ep
            ga_p.append(_loss_free_p(q.alpha, pp, float(q.tau), y))
        gp[k] = (ga_p[0] - ga_p[1]) / (2 * hp)
    ht = 1e-5 * max(1.0, float(q.tau))
    gt = (f(q.alpha, q.p, q.tau + ht) - f(q.alpha, q.p, q.tau - ht)) / (2 * ht)
    return ga, gp, gt


def _loss_free_p(alpha, p, tau, y):
    s = alpha.sum() + tau
    n = alpha + tau * p
    m = n / s
    var = n * (s - n) / (s**2 * (s + 1)) + tau**2 * p * (1 - p) / (s * (s + 1))
    return float(((y - m) ** 2).sum() + var.sum() + ((y - p) ** 2).sum())


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(100):
        K = int(rng.integers(2, 6))
        q = random_point(rng, K)
        y = np.eye(K)[rng.integers(K)]
        g = loss_gradient(q, y)
        na, np_, nt = _numeric_grad(q, y)
        for a, n in ((g.alpha, na), (g.p, np_), (np.atleast_1d(g.tau), np.atleast_1d(nt))):
            worst = max(worst, np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)))
    assert worst < 1e-6


def test_batched_gradient_matches_rows():
    rng = np.random.default_rng(3)
    alpha = rng.uniform(0.5, 5, (6, 3))
    p = rng.dirichlet(np.ones(3), 6)
    tau = rng.uniform(0.5, 5, 6)
    y = one_hot(rng.integers(0, 3, 6), 3)
    g = loss_gradient(FDParams(alpha, p, tau), y)
    for i in range(6):
        gi = loss_gradient(FDParams(alpha[i], p[i], np.float64(tau[i])), y[i])
        np.testing.assert_allclose(g.alpha[i], gi.alpha, rtol=1e-14)
        np.testing.assert_allclose(g.tau[i], gi.tau, rtol=1e-14)


def test_label_validation():
    q = fd([1, 1], [0.5, 0.5], 1)
    with pytest.raises(ContractError):
        loss(q, [0.5, 0.5])
    with pytest.raises(ContractError):
        loss(q, [1, 0, 0])
    with pytest.raises(ContractError):
        one_hot([0, 3], 3)


def test_batch_mean():
    q = FDParams(np.array([[1.0, 1.0], [1.0, 1.0]]), np.array([[1.0, 0.0], [0.5, 0.5]]),
                 np.array([1.0, 1.0]))
    out = loss(q, [[1, 0], [1, 0]]).mean()
    assert abs(float(out.total) - (1 / 3 + 7 / 6) / 2) < 1e-12
