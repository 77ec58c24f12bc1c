"""Versioned binary checkpoint container.

Layout::

    magic  b"FEDLCKPT"                 8 bytes
    format_version                     uint32 little-endian
    header length                      uint64 little-endian
    header                             UTF-8 JSON
    payload                            float64 little-endian tensors, back to back
    digest                             sha256 over everything above, 32 bytes

The header records every tensor's name, shape and byte offset.  A probe batch
and its forward outputs are stored so a load can prove bit-exact restoration.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointVersionError, FormatError
from .network import FEDLModel, NetworkConfig, NetworkParams, forward
from .trainer import AdamState, TrainConfig

MAGIC = b"FEDLCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_LE_F64 = np.dtype("<f8")


@dataclass
class Checkpoint:
    net_config: NetworkConfig
    params: NetworkParams
    train_config: TrainConfig | None = None
    optimizer_state: AdamState | None = None
    metadata: dict = field(default_factory=dict)
    seed: int | None = None
    probe_inputs: np.ndarray | None = None
    probe_outputs: dict[str, np.ndarray] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @property
    def model(self) -> FEDLModel:
        return FEDLModel(self.net_config, self.params)

    def attach_probe(self, inputs) -> "Checkpoint":
        """Store ``inputs`` and the current forward outputs on them."""
        self.probe_inputs = np.asarray(inputs, dtype=np.float64).copy()
        fd, _ = forward(self.params, self.net_config, self.probe_inputs)
        self.probe_outputs = {"alpha": fd.alpha, "p": fd.p, "tau": fd.tau}
        return self

    def probe_matches(self) -> bool:
        """True when forward outputs on the stored probe batch are bit-identical."""
        if self.probe_inputs is None:
            return True
        fd, _ = forward(self.params, self.net_config, self.probe_inputs)
        now = {"alpha": fd.alpha, "p": fd.p, "tau": fd.tau}
        return all(np.array_equal(now[k], self.probe_outputs[k]) for k in now)


def _tensor_table(ckpt: Checkpoint) -> dict[str, np.ndarray]:
    table = {f"param/{k}": v for k, v in ckpt.params.tensors.items()}
    table.update({f"sn_u/{k}": v for k, v in ckpt.params.sn_u.items()})
    if ckpt.optimizer_state is not None:
        table.update({f"adam_m/{k}": v for k, v in ckpt.optimizer_state.m.items()})
        table.update({f"adam_v/{k}": v for k, v in ckpt.optimizer_state.v.items()})
    if ckpt.probe_inputs is not None:
        table["probe/inputs"] = ckpt.probe_inputs
        table.update({f"probe/{k}": v for k, v in ckpt.probe_outputs.items()})
    return table


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    table = _tensor_table(ckpt)
    manifest, chunks, offset = [], [], 0
    for name, arr in table.items():
        raw = np.ascontiguousarray(arr, dtype=_LE_F64).tobytes()
        manifest.append({"name": name, "shape": list(np.shape(arr)), "offset": offset,
                         "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "net_config": ckpt.net_config.to_dict(),
        "train_config": None if ckpt.train_config is None else ckpt.train_config.to_dict(),
        "adam_t": None if ckpt.optimizer_state is None else ckpt.optimizer_state.t,
        "metadata": ckpt.metadata,
        "seed": ckpt.seed,
        "tensors": manifest,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(head)) + head + b"".join(chunks)
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load_checkpoint(path) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc.strerror}") from exc
    if len(blob) < _PREFIX.size + 32:
        raise FormatError("checkpoint truncated")
    magic, version, head_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    if version > FORMAT_VERSION or version < 1:
        raise CheckpointVersionError(
            f"checkpoint format_version {version} unsupported (reader supports {FORMAT_VERSION})")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise FormatError("checkpoint digest mismatch (corrupt payload)")
    start = _PREFIX.size
    try:
        header = json.loads(body[start:start + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"checkpoint header is not valid JSON: {exc}") from exc
    payload = memoryview(body)[start + head_len:]

    table = {}
    for entry in header["tensors"]:
        lo, n = entry["offset"], entry["nbytes"]
        if lo + n > len(payload) or n != 8 * int(np.prod(entry["shape"], dtype=np.int64)):
            raise FormatError(f"tensor {entry['name']} overruns the payload")
        table[entry["name"]] = np.frombuffer(payload[lo:lo + n], dtype=_LE_F64).astype(
            np.float64).reshape(entry["shape"])

    def group(prefix):
        return {k.split("/", 1)[1]: v for k, v in table.items() if k.startswith(prefix + "/")}

    net_config = NetworkConfig.from_dict(header["net_config"])
    params = NetworkParams(group("param"), group("sn_u"))
    expected = {f"{n}.{s}" for n in net_config.layer_shapes() for s in "Wb"}
    if set(params.tensors) != expected:
        raise FormatError("checkpoint tensors do not match net_config")
    state = None
    if header.get("adam_t") is not None:
        state = AdamState(group("adam_m"), group("adam_v"), int(header["adam_t"]))
    probe = group("probe")
    tc = header.get("train_config")
    return Checkpoint(
        net_config=net_config,
        params=params,
        train_config=None if tc is None else TrainConfig.from_dict(tc),
        optimizer_state=state,
        metadata=header.get("metadata", {}),
        seed=header.get("seed"),
        probe_inputs=probe.pop("inputs", None),
        probe_outputs=probe,
        format_version=version,
    )
