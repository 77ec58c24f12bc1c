"""A short walk through the flexible Dirichlet: density, moments, and updating.

Run:  python3 demos/distribution_tour.py
"""

import numpy as np

from fedl.fd import FDParams, dirichlet_log_density, fd_log_density, fd_mean, fd_posterior, fd_variance
from fedl.oracles import mc_moments
from fedl.uncertainty import uncertainties

rng = np.random.default_rng(0)

# With tau = 1 and p proportional to alpha, the mixture collapses to a plain Dirichlet.
alpha = np.array([3.0, 1.5, 0.5])
q = FDParams(alpha, alpha / alpha.sum(), np.float64(1.0))
x = np.array([[0.6, 0.3, 0.1]])
print("reduces to Dirichlet:", float(fd_log_density(q, x)[0]), float(dirichlet_log_density(alpha, x)[0]))

# Moving p toward one class concentrates mass there without changing alpha.
for p in ([1 / 3] * 3, [0.8, 0.1, 0.1]):
    q = FDParams(alpha, np.array(p), np.float64(5.0))
    mc = mc_moments(q, rng, 200_000)
    print(f"p={np.round(p, 2)}  mean={np.round(fd_mean(q), 4)}  sampled={np.round(mc.mean, 4)}")
    print(f"{'':20}var ={np.round(fd_variance(q), 5)}  sampled={np.round(mc.var, 5)}")

# More evidence shrinks epistemic uncertainty; a balanced split keeps aleatoric high.
prior = FDParams(np.ones(3), np.full(3, 1 / 3), np.float64(1.0))
for n in (0, 10, 100, 1000):
    post = fd_posterior(prior, np.array([n / 2, n / 2, 0.0]))
    u = uncertainties(post)
    print(f"counts={n:5d}  TU={float(u.total):.4f}  AU={float(u.aleatoric):.4f}  EU={float(u.epistemic):.5f}")
