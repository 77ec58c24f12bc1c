"""Closed-form training objective and its analytic gradient.

For a one-hot label ``y`` the per-example loss is

    L = E_FD ||y - pi||^2 + ||y - p||^2
      = sum_k (y_k - m_k)^2 + sum_k Var(pi_k) + sum_k (y_k - p_k)^2

with ``m = E[pi]``.  Writing ``s = alpha_0 + tau`` and ``n = alpha + tau p``,
the variance sum is

    sum_k m_k (1 - m_k) / (s + 1) + tau^2 sum_k p_k (1 - p_k) / (s (s + 1)).

Everything here is vectorised over leading batch axes.  The gradient is taken
with respect to the raw ``(alpha, p, tau)`` treating ``p`` as a free vector,
so that chaining through a softmax in :mod:`fedl.network` is exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ContractError
from .fd import FDParams, fd_mean, fd_variance


@dataclass(frozen=True)
class LossBreakdown:
    mse_term: np.ndarray
    reg_term: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.mse_term + self.reg_term

    def mean(self) -> "LossBreakdown":
        return LossBreakdown(np.mean(self.mse_term), np.mean(self.reg_term))


class LossGradient(NamedTuple):
    alpha: np.ndarray
    p: np.ndarray
    tau: np.ndarray


def _check_onehot(params: FDParams, onehot) -> np.ndarray:
    y = np.asarray(onehot, dtype=np.float64)
    if y.shape[-1] != params.K:
        raise ContractError(f"label has {y.shape[-1]} classes, expected {params.K}")
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=-1) == 1)):
        raise ContractError("label must be one-hot")
    return y


def one_hot(labels, K: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if np.any(labels < 0) or np.any(labels >= K):
        raise ContractError("labels out of range for one-hot encoding")
    return np.eye(K)[labels]


def epistemic_variance_sum(params: FDParams) -> np.ndarray:
    """Variance sum in mean form, ``sum_k m_k(1-m_k)/(s+1) + tau^2 p_k(1-p_k)/(s(s+1))``."""
    m = fd_mean(params)
    s = (params.alpha0 + params.tau)[..., None]
    tau = params.tau[..., None]
    p = params.p
    terms = m * (1.0 - m) / (s + 1.0) + tau**2 * p * (1.0 - p) / (s * (s + 1.0))
    return terms.sum(axis=-1)


def loss(params: FDParams, onehot) -> LossBreakdown:
    """Per-example loss; no sampling involved.  Use ``.mean()`` for a batch."""
    y = _check_onehot(params, onehot)
    m = fd_mean(params)
    mse = ((y - m) ** 2).sum(axis=-1) + fd_variance(params).sum(axis=-1)
    reg = ((y - params.p) ** 2).sum(axis=-1)
    return LossBreakdown(mse, reg)


def loss_gradient(params: FDParams, onehot) -> LossGradient:
    """Exact partial derivatives of ``loss(params, onehot).total``.

    Per example, not divided by the batch size.
    """
    y = _check_onehot(params, onehot)
    alpha, p = params.alpha, params.p
    tau = params.tau[..., None]
    s = params.alpha0[..., None] + tau
    n = alpha + tau * p
    m = n / s
    P = (p * (1.0 - p)).sum(axis=-1, keepdims=True)
    M = (m * (1.0 - m)).sum(axis=-1, keepdims=True)

    # dL/dm holding s fixed
    g_m = -2.0 * (y - m) + (1.0 - 2.0 * m) / (s + 1.0)
    # dL/ds holding m, p, tau fixed
    g_s = -M / (s + 1.0) ** 2 - tau**2 * P * (2.0 * s + 1.0) / (s * (s + 1.0)) ** 2
    # m_k = n_k / s: dm_k/dn_k = 1/s, dm_k/ds = -m_k/s
    g_s_total = g_s - (g_m * m).sum(axis=-1, keepdims=True) / s

    g_alpha = g_m / s + g_s_total
    g_p = (
        g_m * tau / s
        + tau**2 * (1.0 - 2.0 * p) / (s * (s + 1.0))
        - 2.0 * (y - p)
    )
    g_tau = (
        (g_m * p).sum(axis=-1, keepdims=True) / s
        + g_s_total
        + 2.0 * tau * P / (s * (s + 1.0))
    )
    return LossGradient(g_alpha, g_p, g_tau[..., 0])
