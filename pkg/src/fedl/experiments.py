"""Downstream-task harness: misclassification and OOD detection, ambiguity
histograms, ablations and the data-scaling curve."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import spearmanr

from .data import AMBIGUOUS_ID, CLEAN_ID, OOD, LabeledDataset, split
from .errors import ContractError, DivergenceError
from .metrics import accuracy, brier_score, ranking_metrics
from .network import FEDLModel, NetworkConfig
from .trainer import TrainConfig, train
from .uncertainty import normalize_batch


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class TaskReport:
    task: str
    datasets: list[str]
    metrics: dict[str, float]
    score_convention: str = ""
    config: dict = field(default_factory=dict)
    seed: int | None = None

    def records(self) -> list[dict]:
        """One flat record per metric: ``{task, dataset, metric, value, seed, config_hash}``."""
        h = config_hash(self.config)
        ds = "+".join(self.datasets)
        return [
            {"task": self.task, "dataset": ds, "metric": k, "value": float(v),
             "seed": self.seed, "config_hash": h}
            for k, v in self.metrics.items()
        ]

    def to_dict(self) -> dict:
        return {"task": self.task, "datasets": self.datasets, "metrics": self.metrics,
                "score_convention": self.score_convention, "config": self.config,
                "seed": self.seed}


def _model_config(model: FEDLModel) -> dict:
    return {"network": model.config.to_dict()}


def classification_report(model: FEDLModel, dataset: LabeledDataset) -> TaskReport:
    """Accuracy and Brier score on labelled rows."""
    ds = dataset.subset(np.flatnonzero(dataset.labels >= 0), dataset.name)
    rep = model.report(ds.features)
    brier = brier_score(rep.expected_probs, ds.labels)
    return TaskReport(
        task="classification",
        datasets=[ds.name],
        metrics={"accuracy": accuracy(rep.predicted_class, ds.labels),
                 "brier": brier, "brier_x100": 100.0 * brier},
        config=_model_config(model),
    )


def run_misclassification_detection(model: FEDLModel, dataset: LabeledDataset) -> TaskReport:
    """Rank correct (1) above incorrect (0) predictions by ``-AU``."""
    ds = dataset.subset(np.flatnonzero(dataset.labels >= 0), dataset.name)
    if len(ds) == 0:
        raise ContractError("misclassification detection needs labelled rows")
    rep = model.report(ds.features)
    correct = (rep.predicted_class == ds.labels).astype(int)
    r = ranking_metrics(-rep.aleatoric, correct)
    return TaskReport(
        task="misclassification",
        datasets=[ds.name],
        metrics={"accuracy": float(correct.mean()), "aupr": r.aupr, "auroc": r.auroc,
                 "aupr_x100": 100.0 * r.aupr, "n_correct": r.n_pos, "n_wrong": r.n_neg},
        score_convention="score=-AU; correct=1, incorrect=0",
        config=_model_config(model),
    )


def run_ood_detection(model: FEDLModel, id_set: LabeledDataset, ood_set: LabeledDataset) -> TaskReport:
    """Rank ID (1) above OOD (0) by ``-EU``."""
    if len(id_set) == 0 or len(ood_set) == 0:
        raise ContractError("OOD detection needs non-empty ID and OOD sets")
    eu_id = model.report(id_set.features).epistemic
    eu_ood = model.report(ood_set.features).epistemic
    scores = -np.concatenate([eu_id, eu_ood])
    labels = np.r_[np.ones(len(eu_id), int), np.zeros(len(eu_ood), int)]
    r = ranking_metrics(scores, labels)
    return TaskReport(
        task="ood",
        datasets=[id_set.name, ood_set.name],
        metrics={"aupr": r.aupr, "auroc": r.auroc, "aupr_x100": 100.0 * r.aupr,
                 "auroc_x100": 100.0 * r.auroc, "mean_eu_id": float(eu_id.mean()),
                 "mean_eu_ood": float(eu_ood.mean())},
        score_convention="score=-EU; ID=1, OOD=0",
        config=_model_config(model),
    )


def histogram_overlap(a, b, bins: int = 20) -> float:
    """Overlap coefficient ``sum_i min(h_a[i], h_b[i])`` of two normalised
    histograms on [0, 1]; 1 means identical, 0 disjoint."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    ha, _ = np.histogram(a, bins=edges)
    hb, _ = np.histogram(b, bins=edges)
    return float(np.minimum(ha / ha.sum(), hb / hb.sum()).sum())


def ambiguity_report(model: FEDLModel, dataset: LabeledDataset,
                     ood_set: LabeledDataset | None = None) -> TaskReport:
    """Compare aleatoric/epistemic uncertainty on clean vs ambiguous ID rows.

    AU is min-max scaled and EU log-then-min-max scaled over the union of all
    compared rows (OOD included when given) before computing overlaps.
    """
    clean = dataset.with_role(CLEAN_ID)
    amb = dataset.with_role(AMBIGUOUS_ID)
    if len(clean) == 0 or len(amb) == 0:
        raise ContractError("ambiguity report needs both clean and ambiguous rows")
    groups = [clean, amb] + ([ood_set] if ood_set is not None and len(ood_set) else [])
    reps = [model.report(g.features) for g in groups]
    sizes = np.cumsum([0] + [len(g) for g in groups])
    au = normalize_batch(np.concatenate([r.aleatoric for r in reps]))
    eu = normalize_batch(np.concatenate([r.epistemic for r in reps]), log_transform=True)
    au_parts = [au[sizes[i]:sizes[i + 1]] for i in range(len(groups))]
    eu_parts = [eu[sizes[i]:sizes[i + 1]] for i in range(len(groups))]
    metrics = {
        "mean_au_clean": float(reps[0].aleatoric.mean()),
        "mean_au_ambiguous": float(reps[1].aleatoric.mean()),
        "au_overlap_clean_ambiguous": histogram_overlap(au_parts[0], au_parts[1]),
    }
    if len(groups) == 3:
        metrics["mean_au_ood"] = float(reps[2].aleatoric.mean())
        metrics["eu_overlap_id_ood"] = histogram_overlap(
            np.concatenate(eu_parts[:2]), eu_parts[2])
    return TaskReport(task="ambiguity", datasets=[g.name for g in groups], metrics=metrics,
                      score_convention="AU min-max, EU log then min-max, over all rows",
                      config=_model_config(model))


# ----------------------------------------------------------------------------
# training-based experiments
# ----------------------------------------------------------------------------


def run_ablation(net_config: NetworkConfig, train_config: TrainConfig, train_set: LabeledDataset,
                 id_test: LabeledDataset, ood_test: LabeledDataset,
                 variants=("none", "fix_p_uniform", "fix_p_normalized", "fix_tau"),
                 log=None) -> dict[str, TaskReport]:
    """Train one model per ablation variant (same seed) and score OOD detection."""
    out = {}
    for v in variants:
        cfg = replace(net_config, ablation=v)
        params, hist = train(cfg, train_config, train_set, np.random.default_rng(train_config.seed))
        model = FEDLModel(cfg, params)
        rep = run_ood_detection(model, id_test, ood_test)
        rep.metrics["test_accuracy"] = accuracy(
            model.predict(id_test.features[id_test.labels >= 0]), id_test.labels[id_test.labels >= 0])
        rep.task = "ablation"
        rep.config = {"network": cfg.to_dict(), "train": train_config.to_dict()}
        rep.seed = train_config.seed
        out[v] = rep
        if log is not None:
            log(f"ablation={v} ood_aupr={rep.metrics['aupr']:.4f} auroc={rep.metrics['auroc']:.4f}")
    return out


@dataclass
class ScalingResult:
    sizes: list[int]
    mean_eu: list[float]
    accuracy: list[float]
    errors: dict[int, str]
    subsets: list[np.ndarray]

    @property
    def spearman(self) -> float:
        ok = [i for i, v in enumerate(self.mean_eu) if np.isfinite(v)]
        if len(ok) < 2:
            return float("nan")
        return float(spearmanr(np.array(self.sizes)[ok], np.array(self.mean_eu)[ok]).statistic)


def data_scaling_experiment(net_config: NetworkConfig, train_config: TrainConfig, sizes,
                            dataset: LabeledDataset, rng: np.random.Generator,
                            held_out: LabeledDataset | None = None, log=None) -> ScalingResult:
    """Train on nested subsets of increasing size; track mean held-out EU.

    When ``held_out`` is omitted, 20% of the labelled rows are held out
    (stratified) before the nested chain is drawn from the remainder.
    Divergent runs are recorded in ``errors`` and yield NaN.
    """
    sizes = [int(s) for s in sizes]
    if sizes != sorted(sizes):
        raise ContractError("sizes must be ascending")
    labelled = dataset.subset(np.flatnonzero(dataset.labels >= 0), dataset.name)
    if held_out is None:
        pool, held_out = split(labelled, 0.8, seed=int(rng.integers(2**31)))
    else:
        pool = labelled
    if sizes[-1] > len(pool):
        raise ContractError(f"largest size {sizes[-1]} exceeds available rows {len(pool)}")
    order = rng.permutation(len(pool))
    result = ScalingResult(sizes, [], [], {}, [])
    for size in sizes:
        idx = np.sort(order[:size])
        result.subsets.append(idx)
        try:
            params, _ = train(net_config, train_config, pool.subset(idx),
                              np.random.default_rng(rng.integers(2**31)))
        except DivergenceError as exc:
            result.errors[size] = str(exc)
            result.mean_eu.append(float("nan"))
            result.accuracy.append(float("nan"))
            continue
        model = FEDLModel(net_config, params)
        rep = model.report(held_out.features)
        result.mean_eu.append(float(rep.epistemic.mean()))
        result.accuracy.append(accuracy(rep.predicted_class, held_out.labels))
        if log is not None:
            log(f"size={size} mean_eu={result.mean_eu[-1]:.6g} acc={result.accuracy[-1]:.4f}")
    return result


def ood_role_split(dataset: LabeledDataset) -> tuple[LabeledDataset, LabeledDataset]:
    """Split a dataset into its ID rows and its OOD rows by role tag."""
    return dataset.with_role(CLEAN_ID, AMBIGUOUS_ID), dataset.with_role(OOD)
