import numpy as np
import pytest

from fedl.data import SynthConfig, split, synth_generate
from fedl.errors import ContractError, DivergenceError, UndefinedMetricError
from fedl.experiments import (
    ambiguity_report,
    classification_report,
    config_hash,
    data_scaling_experiment,
    histogram_overlap,
    ood_role_split,
    run_ablation,
    run_misclassification_detection,
    run_ood_detection,
)
from fedl.metrics import ranking_metrics
from fedl.network import FEDLModel, NetworkConfig, init_params
from fedl.trainer import TrainConfig, train

SMALL = NetworkConfig(2, 3, hidden_dims=(16,), head_hidden_dims=(8,))
FAST = TrainConfig(max_epochs=15, batch_size=32, learning_rate=5e-3)


@pytest.fixture(scope="module")
def noisy_model():
    # 10% of training labels flipped; evaluation uses a fresh, clean draw
    # whose mistakes sit near class boundaries
    cfg = SynthConfig(n_per_class=150, class_separation=2.0, seed=0)
    ds = synth_generate(cfg)
    rng = np.random.default_rng(0)
    flip = rng.random(len(ds)) < 0.1
    ds.labels[flip] = (ds.labels[flip] + rng.integers(1, 3, flip.sum())) % 3
    params, _ = train(SMALL, FAST, ds)
    test = synth_generate(SynthConfig(n_per_class=300, class_separation=2.0, seed=1))
    return FEDLModel(SMALL, params), test


def test_config_hash_stable():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert len(config_hash({})) == 12


def test_records_shape(noisy_model):
    model, ds = noisy_model
    rep = classification_report(model, ds)
    for rec in rep.records():
        assert set(rec) == {"task", "dataset", "metric", "value", "seed", "config_hash"}
    assert abs(rep.metrics["brier_x100"] - 100 * rep.metrics["brier"]) < 1e-12


def test_misclassification_beats_random(noisy_model):
    model, ds = noisy_model
    rep = run_misclassification_detection(model, ds)
    correct = (model.predict(ds.features) == ds.labels).astype(int)
    perm = np.random.default_rng(1).permutation(len(correct))
    rand = ranking_metrics(-model.report(ds.features).aleatoric[perm], correct)
    assert rep.metrics["aupr"] > rand.aupr


def test_misclassification_deterministic(noisy_model):
    model, ds = noisy_model
    a = run_misclassification_detection(model, ds).metrics
    b = run_misclassification_detection(model, ds).metrics
    assert a == b


def test_misclassification_all_correct_raises():
    ds = synth_generate(SynthConfig(n_per_class=30, class_separation=30, seed=2))
    params, _ = train(SMALL, FAST, ds)
    with pytest.raises(UndefinedMetricError):
        run_misclassification_detection(FEDLModel(SMALL, params), ds)


def test_ood_self_split_is_chance(noisy_model):
    model, _ = noisy_model
    ds = synth_generate(SynthConfig(n_per_class=400, seed=7))
    a, b = split(ds, 0.5, seed=3)
    rep = run_ood_detection(model, a, b.retag("ood"))
    assert abs(rep.metrics["auroc"] - 0.5) <= 0.05


def test_ood_empty_raises(noisy_model):
    model, ds = noisy_model
    with pytest.raises(ContractError):
        run_ood_detection(model, ds, ds.with_role("ood"))


def test_histogram_overlap():
    assert histogram_overlap([0.1, 0.2], [0.1, 0.2]) == 1.0
    assert histogram_overlap([0.01, 0.02], [0.98, 0.99]) == 0.0


def test_ambiguity_report_fields(noisy_model):
    model, _ = noisy_model
    ds = synth_generate(SynthConfig(n_per_class=50, n_ambiguous=60, n_ood=40, seed=5))
    id_set, ood_set = ood_role_split(ds)
    rep = ambiguity_report(model, id_set, ood_set)
    for key in ("mean_au_clean", "mean_au_ambiguous", "au_overlap_clean_ambiguous",
                "eu_overlap_id_ood"):
        assert key in rep.metrics
    with pytest.raises(ContractError):
        ambiguity_report(model, ds.with_role("clean_id"))


def test_ablation_records_variant():
    tr = synth_generate(SynthConfig(n_per_class=60, seed=1))
    te = synth_generate(SynthConfig(n_per_class=30, n_ood=30, seed=2))
    id_set, ood_set = ood_role_split(te)
    out = run_ablation(SMALL, TrainConfig(max_epochs=2, batch_size=32), tr, id_set, ood_set,
                       variants=("none", "fix_tau"))
    assert set(out) == {"none", "fix_tau"}
    assert out["fix_tau"].config["network"]["ablation"] == "fix_tau"


class TestScaling:
    def test_nested_subsets(self):
        ds = synth_generate(SynthConfig(n_per_class=100, seed=0))
        res = data_scaling_experiment(SMALL, TrainConfig(max_epochs=2, batch_size=16),
                                      [40, 80, 160], ds, np.random.default_rng(0))
        for small, big in zip(res.subsets, res.subsets[1:]):
            assert set(small) <= set(big)
        assert len(res.mean_eu) == 3 and not res.errors

    def test_size_validation(self):
        ds = synth_generate(SynthConfig(n_per_class=20, seed=0))
        with pytest.raises(ContractError):
            data_scaling_experiment(SMALL, FAST, [50, 10], ds, np.random.default_rng(0))
        with pytest.raises(ContractError):
            data_scaling_experiment(SMALL, FAST, [10, 500], ds, np.random.default_rng(0))

    def test_divergence_recorded(self, monkeypatch):
        import fedl.experiments as ex

        real = ex.train
        calls = {"n": 0}

        def flaky(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] == 2:
                raise DivergenceError(3)
            return real(*args, **kwargs)

        monkeypatch.setattr(ex, "train", flaky)
        ds = synth_generate(SynthConfig(n_per_class=100, seed=0))
        res = data_scaling_experiment(SMALL, TrainConfig(max_epochs=1, batch_size=16),
                                      [40, 80, 160], ds, np.random.default_rng(0))
        assert 80 in res.errors and np.isnan(res.mean_eu[1])
        assert np.isfinite(res.mean_eu[2])
