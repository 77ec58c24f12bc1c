"""Datasets: synthetic blobs, IDX/CSV loaders and deterministic splitting."""

from __future__ import annotations

import csv
import gzip
import struct
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError

CLEAN_ID = "clean_id"
AMBIGUOUS_ID = "ambiguous_id"
OOD = "ood"
ROLES = (CLEAN_ID, AMBIGUOUS_ID, OOD)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    roles: np.ndarray
    K: int
    name: str = "dataset"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.roles = np.asarray(self.roles, dtype=object)
        n = len(self.features)
        if self.features.ndim != 2:
            raise ConfigurationError("features must be an (N, D) matrix")
        if len(self.labels) != n or len(self.roles) != n:
            raise ConfigurationError("features, labels and roles must have equal length")
        if np.any(self.labels >= self.K):
            raise ConfigurationError("labels must be < K")
        bad = (self.labels < 0) & (self.roles != OOD)
        if np.any(bad):
            raise ConfigurationError("negative labels are only allowed on OOD rows")

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx, name: str | None = None) -> "LabeledDataset":
        idx = np.asarray(idx)
        return LabeledDataset(self.features[idx], self.labels[idx], self.roles[idx], self.K,
                              name or self.name)

    def with_role(self, *roles: str) -> "LabeledDataset":
        mask = np.isin(self.roles, roles)
        return self.subset(np.flatnonzero(mask), f"{self.name}[{'+'.join(roles)}]")

    def retag(self, role: str) -> "LabeledDataset":
        return replace(self, roles=np.full(len(self), role, dtype=object))


@dataclass
class SynthConfig:
    K: int = 3
    n_per_class: int = 300
    dim: int = 2
    class_separation: float = 4.0
    noise_sigma: float = 1.0
    n_ambiguous: int = 0
    n_ood: int = 0
    ood_offset: float = 20.0
    imbalance_rho: float = 1.0
    seed: int = 0
    name: str = "synth"

    def __post_init__(self):
        if self.K < 2 or self.dim < 2:
            raise ConfigurationError("synthetic data needs K >= 2 and dim >= 2")
        if self.n_per_class < 1 or self.n_ambiguous < 0 or self.n_ood < 0:
            raise ConfigurationError("sample counts must be non-negative (n_per_class >= 1)")
        if self.class_separation <= 0 or self.noise_sigma <= 0 or self.ood_offset <= 0:
            raise ConfigurationError("separation, noise and OOD offset must be positive")
        if not 0 < self.imbalance_rho <= 1:
            raise ConfigurationError("imbalance_rho must lie in (0, 1]")


def class_sizes(n_per_class: int, K: int, rho: float) -> np.ndarray:
    """Long-tailed profile ``n_k = round(n * rho^(k/(K-1)))``."""
    k = np.arange(K)
    return np.round(n_per_class * rho ** (k / (K - 1))).astype(np.int64)


def class_means(config: SynthConfig) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(config.K) / config.K
    means = np.zeros((config.K, config.dim))
    means[:, 0] = config.class_separation * np.cos(angles)
    means[:, 1] = config.class_separation * np.sin(angles)
    return means


def ood_center(config: SynthConfig) -> np.ndarray:
    """Centre of the OOD blob.

    With ``dim >= 3`` it sits on the axis orthogonal to the plane of class
    means (equidistant from all of them, at distance >= ood_offset); in 2-D it
    lies beyond the circle of means along the bisector between classes 0 and 1.
    """
    c = np.zeros(config.dim)
    if config.dim >= 3:
        c[2] = config.ood_offset
    else:
        theta = np.pi / config.K
        r = config.class_separation + config.ood_offset
        c[0], c[1] = r * np.cos(theta), r * np.sin(theta)
    return c


def synth_generate(config: SynthConfig, rng: np.random.Generator | None = None) -> LabeledDataset:
    """Gaussian blobs on a circle, plus optional ambiguous midpoints and an OOD blob.

    Ambiguous rows are centred on the midpoint of each pair of adjacent class
    means (cycling over pairs) and labelled with one of the two classes by a
    fair coin.  OOD rows carry label -1.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    means = class_means(config)
    sizes = class_sizes(config.n_per_class, config.K, config.imbalance_rho)
    sigma = config.noise_sigma

    feats, labels, roles = [], [], []
    for k, n_k in enumerate(sizes):
        feats.append(means[k] + sigma * rng.standard_normal((n_k, config.dim)))
        labels.append(np.full(n_k, k))
        roles.append(np.full(n_k, CLEAN_ID, dtype=object))
    if config.n_ambiguous:
        pair = np.arange(config.n_ambiguous) % config.K
        mid = 0.5 * (means[pair] + means[(pair + 1) % config.K])
        feats.append(mid + sigma * rng.standard_normal((config.n_ambiguous, config.dim)))
        coin = rng.integers(0, 2, config.n_ambiguous)
        labels.append(np.where(coin == 0, pair, (pair + 1) % config.K))
        roles.append(np.full(config.n_ambiguous, AMBIGUOUS_ID, dtype=object))
    if config.n_ood:
        center = ood_center(config)
        feats.append(center + sigma * rng.standard_normal((config.n_ood, config.dim)))
        labels.append(np.full(config.n_ood, -1))
        roles.append(np.full(config.n_ood, OOD, dtype=object))
    return LabeledDataset(np.concatenate(feats), np.concatenate(labels),
                          np.concatenate(roles), config.K, config.name)


# ----------------------------------------------------------------------------
# IDX
# ----------------------------------------------------------------------------


def _open_binary(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx(path, expected_magic, what):
    with _open_binary(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError(f"{what}: magic: file too short")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{what}: magic: expected 0x{expected_magic:08x}, got 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{what}: dims: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise FormatError(f"{what}: payload: expected {size} bytes, got {len(raw) - header}")
    if len(raw) - header > size:
        raise FormatError(f"{what}: payload: {len(raw) - header - size} trailing bytes")
    data = np.frombuffer(raw, dtype=np.uint8, count=size, offset=header)
    return data.reshape(dims)


def load_idx(images_path, labels_path, name: str | None = None, K: int | None = None) -> LabeledDataset:
    """Load an MNIST-style IDX image/label pair.

    Pixels are widened to float64 in [0, 1] and flattened row-major.
    """
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, "images")
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, "labels").astype(np.int64)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"count: {images.shape[0]} images but {labels.shape[0]} labels")
    feats = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    K = int(labels.max()) + 1 if K is None else K
    return LabeledDataset(feats, labels, np.full(len(labels), CLEAN_ID, dtype=object), K,
                          name or Path(images_path).name)


def write_idx(images, labels, images_path, labels_path):
    """Write uint8 images ``(N, R, C)`` and labels ``(N,)`` as IDX files."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">I", IDX_IMAGES_MAGIC))
        fh.write(struct.pack(">3I", *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        fh.write(labels.tobytes())


# ----------------------------------------------------------------------------
# CSV
# ----------------------------------------------------------------------------


def _sort_key(values):
    try:
        return sorted(values, key=float)
    except ValueError:
        return sorted(values)


def load_csv(path, label_column: str = "label", role_column: str | None = "role",
             name: str | None = None) -> LabeledDataset:
    """Read a header-first CSV; every column except label (and role) is a feature.

    Labels are densified to ``0..K-1`` in sorted order of the original values
    (numeric order if they all parse as numbers).  An optional ``role`` column
    is honoured; rows whose role is ``ood`` may carry the label ``-1``.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if label_column not in header:
        raise ConfigurationError(f"{path}: missing label column {label_column!r}")
    li = header.index(label_column)
    ri = header.index(role_column) if role_column and role_column in header else None
    fcols = [i for i in range(len(header)) if i not in (li, ri)]
    if not body:
        raise FormatError(f"{path}: no data rows")

    feats = np.empty((len(body), len(fcols)))
    raw_labels, roles = [], []
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise FormatError(f"{path}: row {r}: expected {len(header)} cells, got {len(row)}")
        for j, c in enumerate(fcols):
            try:
                feats[r - 2, j] = float(row[c])
            except ValueError:
                raise FormatError(f"{path}: row {r}, column {header[c]!r}: not a number: {row[c]!r}") from None
        roles.append(row[ri] if ri is not None else CLEAN_ID)
        raw_labels.append(row[li])
    roles = np.array(roles, dtype=object)
    if not set(roles) <= set(ROLES):
        raise FormatError(f"{path}: unknown role(s) {sorted(set(roles) - set(ROLES))}")

    is_ood = roles == OOD
    id_values = _sort_key({v for v, o in zip(raw_labels, is_ood) if not o or v != "-1"})
    lookup = {v: i for i, v in enumerate(id_values)}
    labels = np.array([-1 if (o and v == "-1") else lookup[v] for v, o in zip(raw_labels, is_ood)])
    return LabeledDataset(feats, labels, roles, max(len(id_values), 2), name or path.stem)


def save_csv(dataset: LabeledDataset, path, label_column: str = "label"):
    """Write features with ``repr`` (shortest round-trip) plus label and role."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j}" for j in range(dataset.dim)] + [label_column, "role"])
        for x, y, role in zip(dataset.features, dataset.labels, dataset.roles):
            w.writerow([repr(float(v)) for v in x] + [int(y), role])


# ----------------------------------------------------------------------------
# splitting
# ----------------------------------------------------------------------------


@dataclass
class SplitResult:
    a: LabeledDataset
    b: LabeledDataset
    stratified: bool = True
    warnings: list[str] = field(default_factory=list)

    def __iter__(self):
        return iter((self.a, self.b))


def split(dataset: LabeledDataset, fraction: float, seed: int = 0) -> SplitResult:
    """Deterministic (stratified where possible) split into ``fraction`` / rest.

    The first part has exactly ``round(fraction * N)`` rows; per-class quotas
    use largest-remainder rounding.  Falls back to an unstratified shuffle
    (with a recorded warning) if any class has fewer than two rows.
    """
    if not 0 < fraction < 1:
        raise ConfigurationError("fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    n = len(dataset)
    n_a = int(round(fraction * n))
    classes, counts = np.unique(dataset.labels, return_counts=True)
    notes = []
    if np.any(counts < 2):
        msg = "a class has fewer than 2 rows; falling back to an unstratified split"
        warnings.warn(msg, stacklevel=2)
        notes.append(msg)
        perm = rng.permutation(n)
        a_idx, b_idx = perm[:n_a], perm[n_a:]
        stratified = False
    else:
        quota = fraction * counts
        take = np.floor(quota).astype(int)
        rem = n_a - take.sum()
        order = np.argsort(-(quota - take), kind="stable")
        take[order[:rem]] += 1
        a_parts, b_parts = [], []
        for c, t in zip(classes, take):
            idx = rng.permutation(np.flatnonzero(dataset.labels == c))
            a_parts.append(idx[:t])
            b_parts.append(idx[t:])
        a_idx, b_idx = np.concatenate(a_parts), np.concatenate(b_parts)
        stratified = True
    a_idx, b_idx = np.sort(a_idx), np.sort(b_idx)
    return SplitResult(dataset.subset(a_idx), dataset.subset(b_idx), stratified, notes)
