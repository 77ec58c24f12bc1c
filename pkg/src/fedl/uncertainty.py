"""Prediction and label-wise variance uncertainty measures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .fd import DirichletParams, FDParams, fd_mean, fd_variance


@dataclass(frozen=True)
class UncertaintyReport:
    """Uncertainties for one input or a batch of inputs.

    ``aleatoric`` is clamped at zero; ``aleatoric_raw`` keeps the unclamped
    ``total - epistemic`` for exact identity checks.
    """

    predicted_class: np.ndarray
    expected_probs: np.ndarray
    total: np.ndarray
    aleatoric_raw: np.ndarray
    epistemic: np.ndarray
    per_class_total: np.ndarray

    @property
    def aleatoric(self) -> np.ndarray:
        return np.maximum(self.aleatoric_raw, 0.0)


def predict(params: FDParams) -> np.ndarray:
    """argmax of the expected class probabilities (lowest index wins ties)."""
    return np.argmax(fd_mean(params), axis=-1)


def uncertainties(params: FDParams) -> UncertaintyReport:
    m = fd_mean(params)
    per_class_total = m * (1.0 - m)
    total = 1.0 - (m**2).sum(axis=-1)
    epistemic = fd_variance(params).sum(axis=-1)
    return UncertaintyReport(
        predicted_class=np.argmax(m, axis=-1),
        expected_probs=m,
        total=total,
        aleatoric_raw=total - epistemic,
        epistemic=epistemic,
        per_class_total=per_class_total,
    )


def edl_uncertainties(d: DirichletParams) -> tuple[np.ndarray, np.ndarray]:
    """EDL baseline: ``AU = 1 - max_k alpha_k/alpha_0`` and ``EU = K/alpha_0``."""
    a0 = d.alpha0
    au = 1.0 - d.alpha.max(axis=-1) / a0
    eu = d.K / a0
    return au, eu


def normalize_batch(values, log_transform: bool = False) -> np.ndarray:
    """Min-max scale to [0, 1], optionally after a log transform.

    To put several datasets on a common scale, concatenate them before
    calling and split the result afterwards.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise DomainError("cannot normalise an empty batch")
    if log_transform:
        if np.any(v <= 0):
            raise DomainError("log transform needs strictly positive values")
        v = np.log(v)
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)
