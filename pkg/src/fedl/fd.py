"""
Flexible Dirichlet distribution.

A flexible Dirichlet ``FD(alpha, p, tau)`` on the (K-1)-simplex is obtained by
normalising a flexible Gamma basis::

    Y_k = W_k + Z_k * U,   W_k ~ Gamma(alpha_k),  U ~ Gamma(tau),  Z ~ Mu(1, p)
    X   = Y / sum(Y)

Equivalently it is the finite mixture ``sum_k p_k Dir(alpha + tau e_k)``; with
``tau = 1`` and ``p = alpha / alpha_0`` it collapses to ``Dir(alpha)``.

All parameter containers accept batched arrays: ``alpha`` and ``p`` have shape
``(..., K)`` and ``tau`` has shape ``(...)``.  Moment and decomposition
functions broadcast over the leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import stats
from scipy.special import gammaln, logsumexp

from .errors import DomainError

__all__ = [
    "FDParams",
    "DirichletParams",
    "SLOpinion",
    "Decomposition",
    "fd_mean",
    "fd_variance",
    "fd_log_density",
    "fd_density",
    "dirichlet_log_density",
    "fd_sample",
    "fd_posterior",
    "fd_marginal_density",
    "fd_mode_separation",
    "predictive_decomposition",
    "sl_opinions",
]

SIMPLEX_ATOL = 1e-12
POINT_ATOL = 1e-9


@dataclass(frozen=True)
class FDParams:
    """Parameters ``(alpha, p, tau)`` of one (or a batch of) FD distributions."""

    alpha: np.ndarray
    p: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=np.float64)
        p = np.asarray(self.p, dtype=np.float64)
        tau = np.asarray(self.tau, dtype=np.float64)
        if alpha.ndim == 0 or alpha.shape[-1] < 2:
            raise DomainError("alpha must have at least K=2 components")
        if p.shape != alpha.shape:
            raise DomainError(f"p has shape {p.shape}, expected {alpha.shape}")
        if tau.shape != alpha.shape[:-1]:
            raise DomainError(f"tau has shape {tau.shape}, expected {alpha.shape[:-1]}")
        if not np.all(alpha > 0) or not np.all(np.isfinite(alpha)):
            raise DomainError("alpha must be positive and finite")
        if not np.all(tau > 0) or not np.all(np.isfinite(tau)):
            raise DomainError("tau must be positive and finite")
        if np.any(p < 0) or np.any(p > 1):
            raise DomainError("p must lie in [0, 1]")
        if np.any(np.abs(p.sum(axis=-1) - 1.0) > SIMPLEX_ATOL):
            raise DomainError("p must sum to 1")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "tau", tau)

    @property
    def K(self) -> int:
        return self.alpha.shape[-1]

    @property
    def alpha0(self) -> np.ndarray:
        return self.alpha.sum(axis=-1)

    @property
    def batch_shape(self) -> tuple:
        return self.tau.shape

    def __len__(self):
        if not self.batch_shape:
            raise TypeError("unbatched FDParams has no length")
        return self.batch_shape[0]

    def __getitem__(self, idx) -> "FDParams":
        return FDParams(self.alpha[idx], self.p[idx], self.tau[idx])


@dataclass(frozen=True)
class DirichletParams:
    """Concentration vector of a Dirichlet distribution (EDL baseline)."""

    alpha: np.ndarray

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=np.float64)
        if alpha.ndim == 0 or alpha.shape[-1] < 2:
            raise DomainError("alpha must have at least K=2 components")
        if not np.all(alpha > 0) or not np.all(np.isfinite(alpha)):
            raise DomainError("alpha must be positive and finite")
        object.__setattr__(self, "alpha", alpha)

    @property
    def alpha0(self) -> np.ndarray:
        return self.alpha.sum(axis=-1)

    @property
    def K(self) -> int:
        return self.alpha.shape[-1]


@dataclass(frozen=True)
class SLOpinion:
    """Subjective-logic opinion: belief masses, uncertainty mass, base rate."""

    belief: np.ndarray
    uncertainty_mass: float
    base_rate: np.ndarray

    @property
    def projected(self) -> np.ndarray:
        return self.belief + self.uncertainty_mass * self.base_rate


class Decomposition(NamedTuple):
    w_edl: np.ndarray
    w_sm: np.ndarray
    p_edl: np.ndarray
    p_sm: np.ndarray
    p_pred: np.ndarray


# ----------------------------------------------------------------------------
# moments
# ----------------------------------------------------------------------------


def fd_mean(params: FDParams) -> np.ndarray:
    """Expected class probabilities ``(alpha_k + tau p_k) / (alpha_0 + tau)``."""
    tau = params.tau[..., None]
    return (params.alpha + tau * params.p) / (params.alpha0[..., None] + tau)


def fd_variance(params: FDParams) -> np.ndarray:
    """Per-class variance of ``pi_k``.

    The first term is the variance of a Dirichlet with concentration
    ``alpha + tau p``; the second is the extra spread contributed by the
    random allocation of the shared ``tau`` mass.
    """
    tau = params.tau[..., None]
    s = params.alpha0[..., None] + tau
    n = params.alpha + tau * params.p
    within = n * (s - n) / (s**2 * (s + 1.0))
    between = tau**2 * params.p * (1.0 - params.p) / (s * (s + 1.0))
    return within + between


# ----------------------------------------------------------------------------
# densities
# ----------------------------------------------------------------------------


def _check_point(params_K: int, point) -> np.ndarray:
    pi = np.asarray(point, dtype=np.float64)
    if pi.shape[-1] != params_K:
        raise DomainError(f"point has {pi.shape[-1]} components, expected {params_K}")
    if np.any(pi <= 0) or np.any(pi >= 1):
        raise DomainError("log-density undefined on the simplex boundary")
    if np.any(np.abs(pi.sum(axis=-1) - 1.0) > POINT_ATOL):
        raise DomainError("point does not lie on the simplex")
    return pi


def dirichlet_log_density(alpha, point) -> np.ndarray:
    """Log-density of ``Dir(alpha)`` at interior simplex points."""
    alpha = np.asarray(alpha, dtype=np.float64)
    pi = _check_point(alpha.shape[-1], point)
    log_norm = gammaln(alpha.sum(axis=-1)) - gammaln(alpha).sum(axis=-1)
    return log_norm + ((alpha - 1.0) * np.log(pi)).sum(axis=-1)


def fd_log_density(params: FDParams, point) -> np.ndarray:
    """Natural log of the FD density at interior point(s) ``point``.

    ``point`` may carry extra leading axes which broadcast against the batch
    shape of ``params``.  Points on the boundary raise :class:`DomainError`
    rather than being clamped.
    """
    pi = _check_point(params.K, point)
    alpha, p = params.alpha, params.p
    tau = params.tau[..., None]
    log_pi = np.log(pi)
    base = (
        gammaln(params.alpha0 + params.tau)
        - gammaln(alpha).sum(axis=-1)
        + ((alpha - 1.0) * log_pi).sum(axis=-1)
    )
    # log-sum-exp over mixture components; b=p drops p_k = 0 terms exactly
    comp = gammaln(alpha) - gammaln(alpha + tau) + tau * log_pi
    comp, b = np.broadcast_arrays(comp, p)
    return base + logsumexp(comp, axis=-1, b=b)


def fd_density(params: FDParams, point) -> np.ndarray:
    return np.exp(fd_log_density(params, point))


# ----------------------------------------------------------------------------
# sampling and conjugacy
# ----------------------------------------------------------------------------


def fd_sample(params: FDParams, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` points from an unbatched FD via the flexible Gamma basis.

    Gamma variates share scale 1 (any common scale cancels on normalisation).
    Returns an ``(n, K)`` array.
    """
    if params.batch_shape:
        raise DomainError("fd_sample expects a single (unbatched) FDParams")
    if n < 1:
        raise DomainError("n must be positive")
    K = params.K
    w = rng.standard_gamma(params.alpha, size=(n, K))
    u = rng.standard_gamma(float(params.tau), size=n)
    z = rng.choice(K, size=n, p=params.p)
    y = w
    y[np.arange(n), z] += u
    return y / y.sum(axis=1, keepdims=True)


def fd_posterior(prior: FDParams, counts) -> FDParams:
    """Conjugate update of an FD prior under a categorical likelihood.

    Concentrations absorb the counts, ``alpha' = alpha + counts``, and ``tau``
    is unchanged.  The allocation vector is reweighted as well: each mixture
    component ``Dir(alpha + tau e_k)`` gains evidence at a different rate, so

        p'_k  ∝  p_k * B(alpha' + tau e_k) / B(alpha + tau e_k) * B(alpha) / B(alpha')
              ∝  p_k * Γ(alpha_k) Γ(alpha'_k + tau) / (Γ(alpha_k + tau) Γ(alpha'_k))

    Keeping ``p`` fixed does not give the normalised posterior unless
    ``counts`` is zero (checked against a grid-Bayes oracle in the tests).
    Real-valued (pseudo-)counts are accepted.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts < 0):
        raise DomainError("counts must be non-negative")
    if not np.any(counts):
        return prior
    alpha_post = prior.alpha + counts
    tau = prior.tau[..., None]
    shift = (gammaln(alpha_post + tau) - gammaln(prior.alpha + tau)) - (
        gammaln(alpha_post) - gammaln(prior.alpha)
    )
    with np.errstate(divide="ignore"):
        logw = np.log(prior.p) + shift
    logw = logw - logsumexp(logw, axis=-1, keepdims=True)
    return FDParams(alpha_post, np.exp(logw), prior.tau)


# ----------------------------------------------------------------------------
# marginals and diagnostics
# ----------------------------------------------------------------------------


def fd_marginal_density(params: FDParams, k: int, x) -> np.ndarray:
    """Density of the k-th coordinate: a two-component Beta mixture."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= 0) or np.any(x >= 1):
        raise DomainError("x must lie in the open interval (0, 1)")
    if params.batch_shape:
        raise DomainError("fd_marginal_density expects an unbatched FDParams")
    if not 0 <= k < params.K:
        raise DomainError(f"class index {k} out of range")
    a_k = params.alpha[k]
    rest = params.alpha0 - a_k
    tau, p_k = float(params.tau), params.p[k]
    return p_k * stats.beta.pdf(x, a_k + tau, rest) + (1.0 - p_k) * stats.beta.pdf(
        x, a_k, rest + tau
    )


def fd_mode_separation(params: FDParams) -> np.ndarray:
    """Reported mode-separation diagnostic ``|tau / (alpha_0 + tau - 2)|``."""
    denom = params.alpha0 + params.tau - 2.0
    if np.any(denom == 0):
        raise DomainError("mode separation is singular at alpha_0 + tau = 2")
    return np.abs(params.tau / denom)


def predictive_decomposition(params: FDParams) -> Decomposition:
    """Split the predictive mean into an EDL part and a softmax part.

    ``p_pred = w_edl * alpha / alpha_0 + w_sm * p`` with
    ``w_edl = alpha_0 / (alpha_0 + tau)`` and ``w_sm = tau / (alpha_0 + tau)``.
    """
    a0 = params.alpha0
    s = a0 + params.tau
    w_edl = a0 / s
    w_sm = params.tau / s
    p_edl = params.alpha / a0[..., None]
    p_sm = params.p
    p_pred = w_edl[..., None] * p_edl + w_sm[..., None] * p_sm
    return Decomposition(w_edl, w_sm, p_edl, p_sm, p_pred)


def sl_opinions(params: FDParams) -> tuple[list[SLOpinion], np.ndarray]:
    """K subjective-logic opinions (one per base rate ``e_j``) and their weights.

    All opinions share ``belief = alpha / (alpha_0 + tau)`` and
    ``u = tau / (alpha_0 + tau)``; opinion ``j`` is selected with
    probability ``p_j``.
    """
    if params.batch_shape:
        raise DomainError("sl_opinions expects an unbatched FDParams")
    s = params.alpha0 + params.tau
    belief = params.alpha / s
    u = float(params.tau / s)
    eye = np.eye(params.K)
    opinions = [SLOpinion(belief.copy(), u, eye[j]) for j in range(params.K)]
    return opinions, params.p.copy()
