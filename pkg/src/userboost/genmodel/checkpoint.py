"""Versioned binary model checkpoints with a JSON training-curve sidecar.

Layout: magic ``UBAE``, little-endian (version, header length), a JSON
header (architecture, seed, users, loss weights, train config, channel
statistics, tensor manifest), then the raw float32 little-endian tensor
blobs in manifest order.  Weights round-trip bit-exactly, so a reloaded
model encodes and decodes identically to the one that was saved.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..errors import DataError
from .nets import ArchConfig, GestureAutoencoder
from .objectives import LossWeights
from .train import EpochRecord, TrainConfig, TrainResult

_MAGIC = b"UBAE"
_VERSION = 1


def _curves_path(path: str | Path) -> Path:
    return Path(str(path) + ".curves.json")


def save_model(path: str | Path, result: TrainResult) -> None:
    """Write the model checkpoint and its training-curve sidecar."""
    state = result.model.state_dict()
    manifest = []
    blobs = []
    for name, tensor in state.items():
        if tensor.dtype != torch.float32:
            raise ValueError(f"unexpected non-float32 tensor {name!r} in state dict")
        array = tensor.detach().cpu().numpy().astype("<f4")
        manifest.append({"name": name, "shape": list(array.shape)})
        blobs.append(array.tobytes())
    header = {
        "arch": dataclasses.asdict(result.model.arch),
        "seed": result.model.seed,
        "users": list(result.users),
        "loss_weights": dataclasses.asdict(result.weights),
        "train_config": dataclasses.asdict(result.config),
        "channel_means": [float(v) for v in result.channel_means],
        "channel_stds": [float(v) for v in result.channel_stds],
        "best_epoch": result.best_epoch,
        "best_val_loss": result.best_val_loss,
        "tensors": manifest,
    }
    payload = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(payload)))
        fh.write(payload)
        for blob in blobs:
            fh.write(blob)
    _curves_path(path).write_text(
        json.dumps([dataclasses.asdict(record) for record in result.curves], indent=2)
        + "\n"
    )


def load_model(path: str | Path) -> TrainResult:
    """Rebuild a :class:`TrainResult` from a checkpoint (curves included
    when the sidecar file is still present)."""
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise DataError(f"{path}: not a model checkpoint (bad magic)")
    version, header_len = struct.unpack_from("<II", raw, 4)
    if version != _VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    offset = 4 + 8
    header = json.loads(raw[offset : offset + header_len].decode("utf-8"))
    offset += header_len

    arch = ArchConfig(**header["arch"])
    model = GestureAutoencoder(arch, seed=header["seed"])
    state = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        array = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += array.nbytes
        state[entry["name"]] = torch.from_numpy(array.copy())
    model.load_state_dict(state)
    model.eval()

    curves: tuple[EpochRecord, ...] = ()
    sidecar = _curves_path(path)
    if sidecar.exists():
        curves = load_curves(path)
    return TrainResult(
        model=model,
        config=TrainConfig(**header["train_config"]),
        weights=LossWeights(**header["loss_weights"]),
        users=tuple(int(u) for u in header["users"]),
        channel_means=np.asarray(header["channel_means"], dtype=np.float64),
        channel_stds=np.asarray(header["channel_stds"], dtype=np.float64),
        curves=curves,
        best_epoch=int(header["best_epoch"]),
        best_val_loss=float(header["best_val_loss"]),
    )


def load_curves(path: str | Path) -> tuple[EpochRecord, ...]:
    """Read the training-curve sidecar that accompanies a checkpoint."""
    records = json.loads(_curves_path(path).read_text())
    return tuple(EpochRecord(**record) for record in records)
