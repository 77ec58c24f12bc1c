"""Brute-force oracles: Monte-Carlo moments, grid Bayes, density normalisation.

These deliberately avoid the closed forms in :mod:`fedl.fd` so they can be
used to check them.  Grid methods only support K in {2, 3}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import integrate
from scipy.special import gammaln, logsumexp

from .errors import ContractError, DomainError
from .fd import FDParams, dirichlet_log_density, fd_log_density, fd_sample


@dataclass(frozen=True)
class GridSpec:
    resolution: int
    K: int

    def __post_init__(self):
        if self.K not in (2, 3):
            raise DomainError(f"grid oracles support K in {{2, 3}}, got K={self.K}")
        minimum = 100 if self.K == 2 else 50
        if self.resolution < minimum:
            raise ContractError(f"resolution must be >= {minimum} for K={self.K}")


class MCMoments(NamedTuple):
    mean: np.ndarray
    var: np.ndarray
    mean_se: np.ndarray
    var_se: np.ndarray


def mc_moments(params: FDParams, rng: np.random.Generator, n: int) -> MCMoments:
    """Sample mean/variance of ``n`` FD draws with per-component standard errors.

    The variance standard error uses the fourth central moment,
    ``se^2 = (m4 - s^4) / n``.
    """
    if n < 10_000:
        raise ContractError("mc_moments needs n >= 1e4")
    x = fd_sample(params, rng, n)
    mean = x.mean(axis=0)
    c = x - mean
    var = (c**2).mean(axis=0)
    m4 = (c**4).mean(axis=0)
    return MCMoments(
        mean=mean,
        var=var * n / (n - 1),
        mean_se=np.sqrt(var / n),
        var_se=np.sqrt(np.maximum(m4 - var**2, 0.0) / n),
    )


def grid_points(grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Interior grid points and their cell areas.

    K=2: midpoints of ``resolution`` equal cells on (0, 1), parametrised by
    ``pi_1``.  K=3: centroids of the ``resolution**2`` sub-triangles of the
    uniform triangulation of ``{pi_1 + pi_2 <= 1}``.
    """
    n = grid.resolution
    if grid.K == 2:
        x = (np.arange(n) + 0.5) / n
        pts = np.stack([x, 1.0 - x], axis=1)
        return pts, np.full(n, 1.0 / n)
    h = 1.0 / n
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    keep_up = i + j <= n - 1
    keep_dn = i + j <= n - 2
    up = np.stack([(i + 1 / 3) * h, (j + 1 / 3) * h], axis=-1)[keep_up]
    dn = np.stack([(i + 2 / 3) * h, (j + 2 / 3) * h], axis=-1)[keep_dn]
    xy = np.concatenate([up, dn])
    pts = np.column_stack([xy, 1.0 - xy.sum(axis=1)])
    return pts, np.full(len(pts), 0.5 * h * h)


def _mixture_log_prior(alpha, p, tau, pts):
    # sum_k p_k Dir(pts | alpha + tau e_k), written out independently of fd.py
    log_pi = np.log(pts)
    terms = []
    for k in range(len(alpha)):
        if p[k] == 0.0:
            continue
        a = alpha.copy()
        a[k] += tau
        log_norm = gammaln(a.sum()) - gammaln(a).sum()
        terms.append(np.log(p[k]) + log_norm + log_pi @ (a - 1.0))
    return logsumexp(np.stack(terms), axis=0)


def _unnormalized_log_posterior(prior: FDParams, counts, pts):
    alpha, p, tau = prior.alpha, prior.p, float(prior.tau)
    return _mixture_log_prior(alpha, p, tau, pts) + np.log(pts) @ counts


def grid_posterior_oracle(prior: FDParams, counts, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Posterior density at grid points from prior times likelihood.

    Returns ``(points, density)``.  The normaliser is obtained numerically:
    adaptive quadrature over the simplex (robust to the integrable
    boundary singularities that appear when some ``alpha_k < 1``).
    """
    if prior.K != grid.K or prior.batch_shape:
        raise DomainError("grid oracle needs an unbatched prior matching grid.K")
    counts = np.asarray(counts, dtype=np.float64)
    pts, area = grid_points(grid)
    log_unnorm = _unnormalized_log_posterior(prior, counts, pts)
    shift = log_unnorm.max()
    if grid.K == 2:

        def f(x):
            pt = np.array([[x, 1.0 - x]])
            return np.exp(_unnormalized_log_posterior(prior, counts, pt)[0] - shift)

        z, _ = integrate.quad(f, 0.0, 1.0, epsabs=0.0, epsrel=1e-12, limit=500)
    else:
        # scalar integrand in plain floats; dblquad calls it ~1e5 times
        comps = []
        for k in range(3):
            if prior.p[k] > 0.0:
                a = prior.alpha.copy()
                a[k] += float(prior.tau)
                lw = math.log(prior.p[k]) + math.lgamma(a.sum()) - sum(math.lgamma(v) for v in a)
                comps.append((lw - shift, *(a + counts - 1.0)))

        def f(y, x):
            z3 = 1.0 - x - y
            if x <= 0.0 or y <= 0.0 or z3 <= 0.0:
                return 0.0
            lx, ly, lz = math.log(x), math.log(y), math.log(z3)
            return sum(math.exp(c + e1 * lx + e2 * ly + e3 * lz) for c, e1, e2, e3 in comps)

        z, _ = integrate.dblquad(f, 0.0, 1.0, 0.0, lambda x: 1.0 - x, epsabs=0.0, epsrel=1e-10)
    return pts, np.exp(log_unnorm - shift) / z


def density_normalization_estimate(
    params: FDParams,
    method: str = "grid",
    budget: int = 400,
    rng: np.random.Generator | None = None,
) -> float:
    """Estimate the total mass of the FD density (should be 1).

    ``method="grid"``: midpoint/centroid rule with ``budget`` cells per edge.
    ``method="mc"``: importance sampling with ``budget`` draws from a
    ``Dir(alpha)`` proposal.  The mixture form bounds the weights, since
    ``FD / Dir(alpha) = sum_k p_k B(alpha)/B(alpha + tau e_k) pi_k^tau``.
    """
    if method == "grid":
        pts, area = grid_points(GridSpec(budget, params.K))
        return float(np.sum(np.exp(fd_log_density(params, pts)) * area))
    if method == "mc":
        rng = np.random.default_rng() if rng is None else rng
        x = rng.dirichlet(params.alpha, size=budget)
        x = np.clip(x, 1e-300, None)
        x /= x.sum(axis=1, keepdims=True)
        ok = np.all((x > 0) & (x < 1), axis=1)
        logw = fd_log_density(params, x[ok]) - dirichlet_log_density(params.alpha, x[ok])
        return float(np.exp(logw).sum() / budget)
    raise ContractError(f"unknown method {method!r}")

