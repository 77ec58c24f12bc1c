"""Train on three Gaussian blobs plus a band of ambiguous points, then look at
how the two kinds of uncertainty spread over the input plane.

Run:  python3 demos/train_and_inspect.py
"""

import numpy as np

from fedl.data import SynthConfig, synth_generate
from fedl.experiments import ambiguity_report, ood_role_split
from fedl.network import FEDLModel, NetworkConfig
from fedl.trainer import TrainConfig, train

train_set = synth_generate(SynthConfig(n_per_class=300, n_ambiguous=150, seed=0))
net = NetworkConfig(input_dim=2, K=3)
params, hist = train(net, TrainConfig(seed=0), train_set)
model = FEDLModel(net, params)
print(f"trained {hist.epochs_run} epochs, best val acc {hist.val_acc[hist.best_epoch]:.3f}")

test = synth_generate(SynthConfig(n_per_class=200, n_ambiguous=100, n_ood=300, ood_offset=20.0, seed=1))
id_set, ood_set = ood_role_split(test)
for k, v in ambiguity_report(model, id_set, ood_set).metrics.items():
    print(f"  {k:28s} {v:.4f}")

# A coarse text map: AU is the first digit, EU (x100, capped) the second.
xs = np.linspace(-8, 8, 9)
grid = np.array([[a, b] for b in xs[::-1] for a in xs])
r = model.report(grid)
print("\nAU/EU map (each cell: 10*AU, 100*EU)")
for row in range(len(xs)):
    cells = [f"{int(10 * r.aleatoric[i]):d}{min(9, int(100 * r.epistemic[i])):d}"
             for i in range(row * len(xs), (row + 1) * len(xs))]
    print(" ".join(cells))
