"""Score far-away inputs by negative epistemic uncertainty and compare the
full model against its three ablations.

Run:  python3 demos/ood_and_ablations.py
"""

from fedl.data import SynthConfig, synth_generate
from fedl.experiments import ood_role_split, run_ablation
from fedl.network import NetworkConfig
from fedl.trainer import TrainConfig

train_set = synth_generate(SynthConfig(n_per_class=300, n_ambiguous=150, seed=0))
test = synth_generate(SynthConfig(n_per_class=200, n_ambiguous=100, n_ood=300, ood_offset=20.0, seed=1000))
id_set, ood_set = ood_role_split(test)

reports = run_ablation(NetworkConfig(2, 3), TrainConfig(seed=0), train_set, id_set, ood_set)
print(f"{'variant':18s} {'AUROC':>7s} {'AUPR':>7s} {'EU id':>9s} {'EU ood':>9s}")
for name, rep in reports.items():
    m = rep.metrics
    print(f"{name:18s} {m['auroc']:7.3f} {m['aupr']:7.3f} {m['mean_eu_id']:9.4f} {m['mean_eu_ood']:9.4f}")
