"""
Dense F-EDL predictor with a hand-written backward pass.

Architecture::

    z     = f_theta(x)                          # ReLU MLP, spectrally normalised
    alpha = exp(clip(W_a z + b_a, -30, 30))     # single affine head, normalised
    p     = softmax(g_p(z))                     # shallow ReLU MLP
    tau   = softplus(g_tau(z)) + tau_floor      # shallow ReLU MLP

Weights are stored as ``(fan_in, fan_out)`` matrices so a layer is
``x @ W + b`` on row-major batches.  Spectral normalisation is applied as a
projection after each optimiser step (see :func:`spectral_normalize`), not as a
reparametrisation, so gradients flow to the raw weights.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, ContractError
from .fd import FDParams
from .objective import loss, loss_gradient, one_hot
from .uncertainty import UncertaintyReport, uncertainties

ABLATIONS = ("none", "fix_p_uniform", "fix_p_normalized", "fix_tau")
SN_GROUPS = ("f", "alpha", "p", "tau")


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int
    K: int
    hidden_dims: tuple[int, ...] = (64, 64)
    head_hidden_dims: tuple[int, ...] = (64,)
    activation: str = "relu"
    spectral_norm_layers: tuple[str, ...] = ("f", "alpha")
    power_iterations: int = 1
    ablation: str = "none"
    alpha_clamp: float = 30.0
    tau_floor: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        object.__setattr__(self, "head_hidden_dims", tuple(int(h) for h in self.head_hidden_dims))
        object.__setattr__(self, "spectral_norm_layers", tuple(self.spectral_norm_layers))
        if not set(self.spectral_norm_layers) <= set(SN_GROUPS):
            raise ConfigurationError(f"spectral_norm_layers must be drawn from {SN_GROUPS}")
        if self.K < 2:
            raise ConfigurationError("K must be >= 2")
        if self.input_dim < 1:
            raise ConfigurationError("input_dim must be >= 1")
        if not self.hidden_dims or min(self.hidden_dims) < 1:
            raise ConfigurationError("hidden_dims must be a non-empty list of positive ints")
        if self.head_hidden_dims and min(self.head_hidden_dims) < 1:
            raise ConfigurationError("head_hidden_dims must be positive")
        if self.activation != "relu":
            raise ConfigurationError(f"unsupported activation {self.activation!r}")
        if self.power_iterations < 1:
            raise ConfigurationError("power_iterations must be >= 1")
        if self.ablation not in ABLATIONS:
            raise ConfigurationError(f"ablation must be one of {ABLATIONS}")

    @property
    def feature_dim(self) -> int:
        return self.hidden_dims[-1]

    def layer_shapes(self) -> dict[str, tuple[int, int]]:
        shapes = {}
        dims = (self.input_dim, *self.hidden_dims)
        for i in range(len(self.hidden_dims)):
            shapes[f"f.{i}"] = (dims[i], dims[i + 1])
        H = self.feature_dim
        shapes["alpha"] = (H, self.K)
        for head, out in (("p", self.K), ("tau", 1)):
            hd = (H, *self.head_hidden_dims)
            for i in range(len(self.head_hidden_dims)):
                shapes[f"{head}.{i}"] = (hd[i], hd[i + 1])
            shapes[f"{head}.out"] = (hd[-1], out)
        return shapes

    def normalized_layers(self) -> list[str]:
        groups = set(self.spectral_norm_layers)
        return [name for name in self.layer_shapes() if name.split(".")[0] in groups]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        d["head_hidden_dims"] = list(self.head_hidden_dims)
        d["spectral_norm_layers"] = list(self.spectral_norm_layers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**d)


@dataclass
class NetworkParams:
    """Weights ``"<layer>.W"`` / biases ``"<layer>.b"`` and power-iteration vectors."""

    tensors: dict[str, np.ndarray]
    sn_u: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            {k: v.copy() for k, v in self.tensors.items()},
            {k: v.copy() for k, v in self.sn_u.items()},
        )

    def __getitem__(self, name):
        return self.tensors[name]


class ForwardTrace(NamedTuple):
    layer_inputs: dict
    pre_acts: dict
    alpha_logits: np.ndarray
    p_logits: np.ndarray
    tau_logit: np.ndarray
    fd: FDParams
    signature: tuple


def _signature(params: NetworkParams, config: NetworkConfig, n: int) -> tuple:
    return (config, n, tuple((k, v.shape) for k, v in params.tensors.items()))


# ----------------------------------------------------------------------------
# construction and spectral normalisation
# ----------------------------------------------------------------------------


def _power_iteration(W, u, n_iter):
    for _ in range(n_iter):
        v = W @ u
        v /= np.linalg.norm(v) + 1e-300
        u = W.T @ v
        u /= np.linalg.norm(u) + 1e-300
    sigma = float(v @ W @ u)
    return sigma, u


def init_params(config: NetworkConfig, rng: np.random.Generator) -> NetworkParams:
    """He-scaled Gaussian weights, zero biases, spectrally normalised.

    Power-iteration vectors are random unit vectors, iterated to convergence
    once here so later single-step updates start from an accurate estimate.
    """
    tensors = {}
    for name, (fan_in, fan_out) in config.layer_shapes().items():
        tensors[f"{name}.W"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        tensors[f"{name}.b"] = np.zeros(fan_out)
    sn_u = {}
    for name in config.normalized_layers():
        u = rng.normal(size=tensors[f"{name}.W"].shape[1])
        sn_u[name] = u / np.linalg.norm(u)
    params = NetworkParams(tensors, sn_u)
    converge_power_iteration(params, config)
    return spectral_normalize(params, config)


def converge_power_iteration(params: NetworkParams, config: NetworkConfig, tol=1e-12, max_iter=5000):
    """Run power iteration on each normalised layer until sigma stabilises."""
    for name in config.normalized_layers():
        W, u = params.tensors[f"{name}.W"], params.sn_u[name]
        sigma_old = np.inf
        for _ in range(max_iter):
            sigma, u = _power_iteration(W, u, 1)
            if abs(sigma - sigma_old) <= tol * max(abs(sigma), 1e-300):
                break
            sigma_old = sigma
        params.sn_u[name] = u
    return params


def spectral_normalize(params: NetworkParams, config: NetworkConfig, n_iter: int | None = None) -> NetworkParams:
    """Divide each designated weight matrix by its estimated top singular value.

    Updates ``params`` in place (weights and warm-start vectors) and returns
    it.  Biases are untouched.  All-zero matrices are left alone.
    """
    n_iter = config.power_iterations if n_iter is None else n_iter
    for name in config.normalized_layers():
        W = params.tensors[f"{name}.W"]
        sigma, u = _power_iteration(W, params.sn_u[name], n_iter)
        params.sn_u[name] = u
        if sigma > 1e-12:
            W /= sigma
    return params


def spectral_norms(params: NetworkParams, config: NetworkConfig) -> dict[str, float]:
    """Exact largest singular value of each normalised layer (dense SVD)."""
    return {
        name: float(np.linalg.norm(params.tensors[f"{name}.W"], ord=2))
        for name in config.normalized_layers()
    }


# ----------------------------------------------------------------------------
# forward / backward
# ----------------------------------------------------------------------------


def _mlp_forward(params, names, x, trace_in, trace_pre, final_linear):
    h = x
    for i, name in enumerate(names):
        trace_in[name] = h
        a = h @ params[f"{name}.W"] + params[f"{name}.b"]
        if final_linear and i == len(names) - 1:
            return a
        trace_pre[name] = a
        h = np.maximum(a, 0.0)
    return h


def _mlp_backward(params, names, grad_out, trace_in, trace_pre, final_linear, grads):
    g = grad_out
    for i in reversed(range(len(names))):
        name = names[i]
        if not (final_linear and i == len(names) - 1):
            g = g * (trace_pre[name] > 0.0)
        grads[f"{name}.W"] = trace_in[name].T @ g
        grads[f"{name}.b"] = g.sum(axis=0)
        g = g @ params[f"{name}.W"].T
    return g


def _head_names(config, head):
    return [f"{head}.{i}" for i in range(len(config.head_hidden_dims))] + [f"{head}.out"]


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(params: NetworkParams, config: NetworkConfig, inputs) -> tuple[FDParams, ForwardTrace]:
    """Map a batch ``(N, D)`` of inputs to batched FD parameters."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != config.input_dim:
        raise ConfigurationError(f"inputs must have shape (N, {config.input_dim}), got {x.shape}")
    trace_in, trace_pre = {}, {}
    f_names = [f"f.{i}" for i in range(len(config.hidden_dims))]
    z = _mlp_forward(params, f_names, x, trace_in, trace_pre, final_linear=False)
    a_logits = _mlp_forward(params, ["alpha"], z, trace_in, trace_pre, final_linear=True)
    p_logits = _mlp_forward(params, _head_names(config, "p"), z, trace_in, trace_pre, True)
    t_logit = _mlp_forward(params, _head_names(config, "tau"), z, trace_in, trace_pre, True)[:, 0]

    c = config.alpha_clamp
    alpha = np.exp(np.clip(a_logits, -c, c))
    n, K = alpha.shape
    if config.ablation == "fix_p_uniform":
        p = np.full((n, K), 1.0 / K)
    elif config.ablation == "fix_p_normalized":
        p = alpha / alpha.sum(axis=1, keepdims=True)
    else:
        p = _softmax(p_logits)
    if config.ablation == "fix_tau":
        tau = np.ones(n)
    else:
        tau = np.logaddexp(0.0, t_logit) + config.tau_floor
    fd = FDParams(alpha, p, tau)
    trace = ForwardTrace(trace_in, trace_pre, a_logits, p_logits, t_logit, fd,
                         _signature(params, config, n))
    return fd, trace


def backward(params: NetworkParams, config: NetworkConfig, trace: ForwardTrace,
             grad_alpha, grad_p, grad_tau) -> dict[str, np.ndarray]:
    """Gradients of the loss for every tensor, given dL/d(alpha, p, tau).

    ``grad_*`` are the upstream derivatives with respect to the head outputs
    (after exp/softmax/softplus); the activations and ablation couplings are
    differentiated here.
    """
    n = trace.alpha_logits.shape[0]
    if trace.signature != _signature(params, config, n):
        raise ContractError("forward trace does not match these parameters/config")
    g_alpha = np.asarray(grad_alpha, dtype=np.float64)
    g_p = np.asarray(grad_p, dtype=np.float64)
    g_tau = np.asarray(grad_tau, dtype=np.float64)
    if g_alpha.shape != trace.fd.alpha.shape or g_p.shape != trace.fd.p.shape or g_tau.shape != (n,):
        raise ContractError("upstream gradient shapes do not match the trace")

    alpha, p = trace.fd.alpha, trace.fd.p
    g_p_logits = np.zeros_like(p)
    if config.ablation == "fix_p_normalized":
        a0 = alpha.sum(axis=1, keepdims=True)
        g_alpha = g_alpha + (g_p - (g_p * p).sum(axis=1, keepdims=True)) / a0
    elif config.ablation != "fix_p_uniform":
        g_p_logits = p * (g_p - (g_p * p).sum(axis=1, keepdims=True))
    c = config.alpha_clamp
    g_a_logits = g_alpha * alpha * (np.abs(trace.alpha_logits) < c)
    if config.ablation == "fix_tau":
        g_t_logit = np.zeros((n, 1))
    else:
        g_t_logit = (g_tau * expit(trace.tau_logit))[:, None]

    grads = {}
    ti, tp = trace.layer_inputs, trace.pre_acts
    g_z = _mlp_backward(params, ["alpha"], g_a_logits, ti, tp, True, grads)
    g_z = g_z + _mlp_backward(params, _head_names(config, "p"), g_p_logits, ti, tp, True, grads)
    g_z = g_z + _mlp_backward(params, _head_names(config, "tau"), g_t_logit, ti, tp, True, grads)
    f_names = [f"f.{i}" for i in range(len(config.hidden_dims))]
    _mlp_backward(params, f_names, g_z, ti, tp, False, grads)
    return {k: grads[k] for k in params.tensors}


def loss_and_grads(params: NetworkParams, config: NetworkConfig, inputs, labels):
    """Mean batch loss and its gradient for every tensor."""
    fd, trace = forward(params, config, inputs)
    y = one_hot(labels, config.K)
    n = len(y)
    value = float(loss(fd, y).total.mean())
    g = loss_gradient(fd, y)
    grads = backward(params, config, trace, g.alpha / n, g.p / n, g.tau / n)
    return value, grads


def gradient_check(params: NetworkParams, config: NetworkConfig, inputs, labels,
                   eps: float = 1e-5, floor: float = 1e-6) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``; ``floor`` keeps
    entries whose true gradient is ~0 from dominating through rounding noise.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ContractError("eps must lie in [1e-7, 1e-3]")
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(labels)
    _, grads = loss_and_grads(params, config, x, y)
    work = params.copy()
    target = one_hot(y, config.K)

    def total():
        fd, _ = forward(work, config, x)
        return float(loss(fd, target).total.mean())

    worst = 0.0
    for name, tensor in work.tensors.items():
        flat = tensor.reshape(-1)
        g = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = total()
            flat[i] = orig - eps
            dn = total()
            flat[i] = orig
            num = (up - dn) / (2.0 * eps)
            err = abs(g[i] - num) / max(abs(g[i]), abs(num), floor)
            worst = max(worst, err)
    return worst


# ----------------------------------------------------------------------------
# convenience wrapper
# ----------------------------------------------------------------------------


@dataclass
class FEDLModel:
    config: NetworkConfig
    params: NetworkParams

    def fd_params(self, inputs, batch_size: int = 4096) -> FDParams:
        x = np.asarray(inputs, dtype=np.float64)
        parts = [forward(self.params, self.config, x[i:i + batch_size])[0]
                 for i in range(0, len(x), batch_size)]
        return FDParams(
            np.concatenate([q.alpha for q in parts]),
            np.concatenate([q.p for q in parts]),
            np.concatenate([q.tau for q in parts]),
        )

    def report(self, inputs) -> UncertaintyReport:
        return uncertainties(self.fd_params(inputs))

    def predict(self, inputs) -> np.ndarray:
        return self.report(inputs).predicted_class
