"""Classification and ranking metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ContractError, UndefinedMetricError


@dataclass(frozen=True)
class RankingResult:
    aupr: float
    auroc: float
    n_pos: int
    n_neg: int


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ContractError("predictions and labels differ in length")
    if predictions.size == 0:
        raise ContractError("accuracy of an empty set is undefined")
    return float(np.mean(predictions == labels))


def ranking_metrics(scores, labels) -> RankingResult:
    """AUROC (Mann-Whitney, ties count 1/2) and AUPR (average precision).

    Higher scores should indicate the positive class.  Average precision is
    the step-wise sum over thresholds of ``precision * delta_recall`` with tied
    scores forming a single threshold.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ContractError("scores and labels must be equal-length vectors")
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ranking metrics need both positive and negative labels")

    ranks = rankdata(s)  # mid-ranks for ties
    auroc = (ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)

    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    last_of_group = np.r_[s_sorted[1:] != s_sorted[:-1], True]
    tp = np.cumsum(y_sorted)[last_of_group]
    seen = np.flatnonzero(last_of_group) + 1
    precision = tp / seen
    d_recall = np.diff(np.r_[0, tp]) / n_pos
    aupr = float(np.sum(precision * d_recall))
    return RankingResult(aupr=aupr, auroc=float(auroc), n_pos=n_pos, n_neg=n_neg)


def auroc_pairwise(scores, labels) -> float:
    """Brute-force AUROC over all (positive, negative) pairs."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    pos, neg = s[y][:, None], s[~y][None, :]
    wins = (pos > neg).sum() + 0.5 * (pos == neg).sum()
    return float(wins / (pos.size * neg.size))


def brier_score(expected_probs, labels) -> float:
    """Mean over examples of ``sum_k (prob_k - y_k)^2``.  Multiply by 100 for
    the percentage convention used in result tables."""
    probs = np.asarray(expected_probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or len(probs) != len(labels):
        raise ContractError("expected_probs must be (N, K) with N labels")
    y = np.zeros_like(probs)
    y[np.arange(len(labels)), labels] = 1.0
    return float(np.mean(((probs - y) ** 2).sum(axis=1)))
