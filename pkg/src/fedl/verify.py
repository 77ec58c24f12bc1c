"""Self-check suite: identities, oracle agreements and gradient checks.

Each check returns a :class:`CheckResult`; :func:`run_suite` runs them all
with one seed.  Sizes are small so the suite finishes in a few seconds; the
acceptance tests run the same comparisons at full scale.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .fd import (
    FDParams,
    dirichlet_log_density,
    fd_log_density,
    fd_mean,
    fd_posterior,
    fd_variance,
    predictive_decomposition,
)
from .network import NetworkConfig, gradient_check, init_params, spectral_norms
from .oracles import GridSpec, grid_posterior_oracle, mc_moments
from .uncertainty import uncertainties


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name} value={self.value:.3e} "
                f"tol={self.tolerance:.1e} time={self.seconds:.2f}s")


def random_fd(rng: np.random.Generator, K: int, batch=()) -> FDParams:
    alpha = rng.uniform(0.2, 10.0, size=(*batch, K))
    p = rng.dirichlet(np.ones(K), size=batch if batch else None)
    tau = rng.uniform(0.2, 10.0, size=batch)
    return FDParams(alpha, p, tau)


def interior_points(rng: np.random.Generator, K: int, n: int) -> np.ndarray:
    pts = rng.dirichlet(np.full(K, 2.0), size=n)
    pts = np.clip(pts, 1e-6, None)
    return pts / pts.sum(axis=1, keepdims=True)


def _timed(name, tol, fn):
    t0 = time.perf_counter()
    value = float(fn())
    return CheckResult(name, bool(value < tol), value, tol, time.perf_counter() - t0)


def check_edl_reduction(rng, n_params=10, n_points=100):
    """tau = 1 and p = alpha / alpha_0 collapse FD to Dir(alpha)."""
    def run():
        worst = 0.0
        for i in range(n_params):
            K = (2, 3, 10)[i % 3]
            alpha = rng.uniform(0.2, 10.0, size=K)
            fd = FDParams(alpha, alpha / alpha.sum(), np.float64(1.0))
            pts = interior_points(rng, K, n_points)
            worst = max(worst, np.max(np.abs(fd_log_density(fd, pts)
                                             - dirichlet_log_density(alpha, pts))))
        return worst
    return _timed("edl_reduction", 1e-10, run)


def check_mixture_identity(rng, n_params=10, n_points=100):
    """FD density equals sum_k p_k Dir(alpha + tau e_k)."""
    def run():
        worst = 0.0
        for i in range(n_params):
            K = (2, 3, 10)[i % 3]
            fd = random_fd(rng, K)
            pts = interior_points(rng, K, n_points)
            comps = [np.log(fd.p[k]) + dirichlet_log_density(fd.alpha + fd.tau * np.eye(K)[k], pts)
                     for k in range(K)]
            ref = logsumexp(np.stack(comps), axis=0)
            got = fd_log_density(fd, pts)
            # relative error on the density itself
            worst = max(worst, np.max(np.abs(np.expm1(got - ref))))
        return worst
    return _timed("mixture_identity", 1e-10, run)


def check_decomposition(rng, n=1000):
    """Predictive mean equals the EDL/softmax convex combination."""
    def run():
        fd = random_fd(rng, 4, (n,))
        return np.max(np.abs(predictive_decomposition(fd).p_pred - fd_mean(fd)))
    return _timed("decomposition", 1e-12, run)


def check_mean_identity(rng, n=1000):
    """FD mean equals the Dirichlet mean at alpha + tau p."""
    def run():
        fd = random_fd(rng, 4, (n,))
        a = fd.alpha + fd.tau[:, None] * fd.p
        return np.max(np.abs(fd_mean(fd) - a / a.sum(axis=1, keepdims=True)))
    return _timed("mean_identity", 1e-12, run)


def check_posterior_oracle(rng, n_priors=3):
    """Conjugate update agrees with prior x likelihood normalised numerically."""
    def run():
        worst = 0.0
        for i in range(n_priors):
            prior = random_fd(rng, 2)
            # integer counts, plus one real-valued pseudo-count vector
            counts = rng.integers(0, 8, size=2).astype(float) if i else rng.uniform(0, 5, size=2)
            pts, oracle = grid_posterior_oracle(prior, counts, GridSpec(1000, 2))
            got = np.exp(fd_log_density(fd_posterior(prior, counts), pts))
            worst = max(worst, np.max(np.abs(got - oracle) / oracle))
        return worst
    return _timed("posterior_oracle", 1e-4, run)


def check_moments(rng, n_params=3, n_samples=200_000, n_se=4.0):
    """Sample mean and variance within ``n_se`` standard errors of closed forms.

    Returns the largest z-score; the tolerance is ``n_se``.
    """
    def run():
        worst = 0.0
        for _ in range(n_params):
            fd = random_fd(rng, 3)
            mc = mc_moments(fd, rng, n_samples)
            worst = max(worst,
                        np.max(np.abs(mc.mean - fd_mean(fd)) / mc.mean_se),
                        np.max(np.abs(mc.var - fd_variance(fd)) / mc.var_se))
        return worst
    return _timed("moments", n_se, run)


def check_gradients(rng):
    """Analytic backward pass against central differences on a 2-16-2 net."""
    def run():
        cfg = NetworkConfig(2, 2, hidden_dims=(16,), head_hidden_dims=(8,))
        params = init_params(cfg, rng)
        # random biases: zero biases can sit exactly on a ReLU kink
        for k, t in params.tensors.items():
            if k.endswith(".b"):
                t += 0.1 * rng.normal(size=t.shape)
        x = rng.normal(size=(8, 2))
        y = rng.integers(0, 2, size=8)
        return gradient_check(params, cfg, x, y)
    return _timed("gradients", 1e-4, run)


def check_spectral_norm(rng):
    """Normalised layers have largest singular value 1 after initialisation."""
    def run():
        cfg = NetworkConfig(8, 3, hidden_dims=(32, 32))
        sig = spectral_norms(init_params(cfg, rng), cfg)
        return max(abs(s - 1.0) for s in sig.values())
    return _timed("spectral_norm", 1e-6, run)


def check_uncertainty_identity(rng, n=1000):
    """Total uncertainty splits exactly into aleatoric plus epistemic."""
    def run():
        rep = uncertainties(random_fd(rng, 5, (n,)))
        return np.max(np.abs(rep.total - (rep.aleatoric_raw + rep.epistemic)))
    return _timed("tu_equals_au_plus_eu", 1e-12, run)


CHECKS = (
    check_edl_reduction,
    check_mixture_identity,
    check_decomposition,
    check_mean_identity,
    check_posterior_oracle,
    check_moments,
    check_gradients,
    check_spectral_norm,
    check_uncertainty_identity,
)


def run_suite(seed: int = 0) -> list[CheckResult]:
    """Run every check; each gets its own child stream of ``seed``."""
    streams = np.random.SeedSequence(seed).spawn(len(CHECKS))
    return [check(np.random.default_rng(s)) for check, s in zip(CHECKS, streams)]
