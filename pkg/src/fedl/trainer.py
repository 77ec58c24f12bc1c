"""Mini-batch training loop: Adam, step learning-rate decay, spectral
normalisation after every step, early stopping on validation loss."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .data import LabeledDataset, split
from .errors import ConfigurationError, DivergenceError, DomainError
from .network import (
    NetworkConfig,
    NetworkParams,
    converge_power_iteration,
    forward,
    init_params,
    loss_and_grads,
    spectral_normalize,
    spectral_norms,
)
from .objective import loss, one_hot
from .uncertainty import predict


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 5e-4
    lr_step_size: int = 20
    lr_gamma: float = 0.5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    early_stop_patience: int = 10
    seed: int = 0
    val_fraction: float = 0.05

    def __post_init__(self):
        for name in ("max_epochs", "batch_size", "lr_step_size", "early_stop_patience"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be a positive integer")
        if self.learning_rate <= 0 or self.adam_eps <= 0:
            raise ConfigurationError("learning_rate and adam_eps must be positive")
        for name in ("lr_gamma", "adam_beta1", "adam_beta2", "val_fraction"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must lie in (0, 1)")

    def lr_at(self, epoch: int) -> float:
        return self.learning_rate * self.lr_gamma ** (epoch // self.lr_step_size)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: NetworkParams) -> "AdamState":
        return cls({k: np.zeros_like(w) for k, w in params.tensors.items()},
                   {k: np.zeros_like(w) for k, w in params.tensors.items()}, 0)

    def copy(self) -> "AdamState":
        return AdamState({k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()}, self.t)


def adam_update(params: NetworkParams, grads: dict, state: AdamState, lr: float,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam step, applied in place.  Returns ``(params, state)``."""
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for name, w in params.tensors.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        w -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    max_sigma_error: list[float] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False
    optimizer_state: AdamState | None = None

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "val_acc": self.val_acc,
            "lr": self.lr,
            "max_sigma_error": self.max_sigma_error,
            "best_epoch": self.best_epoch,
            "stopped_early": self.stopped_early,
        }


def evaluate_loss(params: NetworkParams, config: NetworkConfig, x, y, batch_size=4096):
    """Mean loss and accuracy over a labelled set."""
    total, correct = 0.0, 0
    for i in range(0, len(x), batch_size):
        fd, _ = forward(params, config, x[i:i + batch_size])
        yb = y[i:i + batch_size]
        total += float(loss(fd, one_hot(yb, config.K)).total.sum())
        correct += int(np.sum(predict(fd) == yb))
    return total / len(x), correct / len(x)


def train(net_config: NetworkConfig, train_config: TrainConfig, dataset: LabeledDataset,
          rng: np.random.Generator | None = None, log=None,
          validation: LabeledDataset | None = None) -> tuple[NetworkParams, TrainHistory]:
    """Train an F-EDL network; returns the best-validation weights and history.

    Only labelled rows (label >= 0) are used.  Unless ``validation`` is
    given, a stratified ``val_fraction`` of the rows is held out.  ``log``
    receives one progress line per epoch.
    """
    rng = np.random.default_rng(train_config.seed) if rng is None else rng
    labelled = dataset.subset(np.flatnonzero(dataset.labels >= 0))
    if len(np.unique(labelled.labels)) < 2:
        raise ConfigurationError("training needs at least two classes")
    if len(labelled) < 2 * train_config.batch_size:
        raise ConfigurationError(
            f"dataset too small: {len(labelled)} rows < 2 x batch_size ({train_config.batch_size})")
    if labelled.dim != net_config.input_dim:
        raise ConfigurationError("dataset dimension does not match input_dim")
    if not np.all(np.isfinite(labelled.features)):
        raise ConfigurationError("features contain NaN or infinite values")
    if validation is None:
        tr, va = split(labelled, 1.0 - train_config.val_fraction, seed=int(rng.integers(2**31)))
    else:
        tr, va = labelled, validation.subset(np.flatnonzero(validation.labels >= 0))

    params = init_params(net_config, rng)
    state = AdamState.zeros_like(params)
    history = TrainHistory()
    best = (np.inf, params.copy(), state.copy())
    since_best = 0
    x, y = tr.features, tr.labels
    n, B = len(y), train_config.batch_size

    for epoch in range(train_config.max_epochs):
        lr = train_config.lr_at(epoch)
        order = rng.permutation(n)
        running = 0.0
        for start in range(0, n, B):
            idx = order[start:start + B]
            try:
                value, grads = loss_and_grads(params, net_config, x[idx], y[idx])
            except DomainError as exc:
                # non-finite weights surface as invalid FD parameters
                raise DivergenceError(epoch, f"non-finite outputs at epoch {epoch}: {exc}") from exc
            if not np.isfinite(value):
                raise DivergenceError(epoch)
            running += value * len(idx)
            adam_update(params, grads, state, lr, train_config.adam_beta1,
                        train_config.adam_beta2, train_config.adam_eps)
            spectral_normalize(params, net_config)
        # per-step single power iterations drift when top singular values
        # crowd together; settle the estimate before each checkpoint
        converge_power_iteration(params, net_config)
        spectral_normalize(params, net_config)
        train_loss = running / n
        try:
            val_loss, val_acc = evaluate_loss(params, net_config, va.features, va.labels)
        except DomainError as exc:
            raise DivergenceError(epoch, f"non-finite outputs at epoch {epoch}: {exc}") from exc
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise DivergenceError(epoch)
        sig = spectral_norms(params, net_config)
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        history.val_acc.append(val_acc)
        history.lr.append(lr)
        history.max_sigma_error.append(max((abs(s - 1.0) for s in sig.values()), default=0.0))
        if log is not None:
            log(f"epoch={epoch} train_loss={train_loss:.6f} val_loss={val_loss:.6f} "
                f"val_acc={val_acc:.4f} lr={lr:.6g}")
        if val_loss < best[0]:
            best = (val_loss, params.copy(), state.copy())
            history.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= train_config.early_stop_patience:
                history.stopped_early = True
                break

    history.optimizer_state = best[2]
    return best[1], history

