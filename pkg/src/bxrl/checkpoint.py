"""Binary model checkpoints.

Layout (all integers little-endian): magic ``BXRL``, u32 format version,
u32 metadata length + UTF-8 JSON metadata, u32 tensor count, then per tensor
a u16-length name, u8 rank, u32 dims, and the float64 payload. Loaders
reject unknown versions.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .bc import BcConfig, BcModel
from .data import ActionSpec, ObservationSpec
from .errors import IoError, ParseError, UnsupportedVersion
from .vqvae import VQVAE, TrainConfig

MAGIC = b"BXRL"
VERSION = 1


def save_checkpoint(path, kind: str, metadata: dict,
                    tensors: list[tuple[str, np.ndarray]]) -> None:
    meta = dict(metadata)
    meta["kind"] = kind
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION)
    buf += struct.pack("<I", len(meta_bytes))
    buf += meta_bytes
    buf += struct.pack("<I", len(tensors))
    for name, arr in tensors:
        # asarray, not ascontiguousarray: the latter promotes 0-d to 1-d,
        # and tobytes() already emits C order.
        arr = np.asarray(arr, dtype="<f8")
        name_bytes = name.encode("utf-8")
        buf += struct.pack("<H", len(name_bytes))
        buf += name_bytes
        buf += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            buf += struct.pack("<I", dim)
        buf += arr.tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(bytes(buf))
    except OSError as exc:
        raise IoError(f"cannot write checkpoint to {path!r}: {exc}") from exc


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint from {path!r}: {exc}") from exc
    view = memoryview(raw)
    if len(raw) < 12 or bytes(view[:4]) != MAGIC:
        raise ParseError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", view, 4)
    if version != VERSION:
        raise UnsupportedVersion(
            f"{path}: checkpoint format version {version} unsupported (expected {VERSION})"
        )
    (meta_len,) = struct.unpack_from("<I", view, 8)
    offset = 12
    try:
        metadata = json.loads(bytes(view[offset : offset + meta_len]).decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: bad checkpoint metadata: {exc}") from exc
    offset += meta_len
    (count,) = struct.unpack_from("<I", view, offset)
    offset += 4
    tensors: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", view, offset)
            offset += 2
            name = bytes(view[offset : offset + name_len]).decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", view, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", view, offset) if ndim else ()
            offset += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(view, dtype="<f8", count=size, offset=offset)
            offset += 8 * size
            tensors[name] = arr.reshape(shape).astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise ParseError(f"{path}: truncated or corrupt tensor table: {exc}") from exc
    return metadata, tensors


def save_vqvae(model: VQVAE, path, extra_metadata: dict | None = None) -> None:
    metadata = {
        "obs_spec": model.obs_spec.to_json(),
        "act_spec": model.act_spec.to_json(),
        "train_config": model.cfg.to_json(),
    }
    if extra_metadata:
        metadata.update(extra_metadata)
    save_checkpoint(path, "vqvae", metadata,
                    [(name, p.data) for name, p in model.named_parameters()])


def load_vqvae(path) -> tuple[VQVAE, dict]:
    metadata, tensors = load_checkpoint(path)
    if metadata.get("kind") != "vqvae":
        raise ParseError(f"{path}: expected a vqvae checkpoint, got {metadata.get('kind')!r}")
    obs_spec = ObservationSpec.from_json(metadata["obs_spec"])
    act_spec = ActionSpec.from_json(metadata["act_spec"])
    cfg = TrainConfig.from_json(metadata["train_config"])
    model = VQVAE(obs_spec, act_spec, cfg)
    model.load_state(tensors)
    return model, metadata


def save_bc(model: BcModel, path, extra_metadata: dict | None = None) -> None:
    metadata = {
        "obs_spec": model.obs_spec.to_json(),
        "act_spec": model.act_spec.to_json(),
        "bc_config": model.cfg.to_json(),
        "scope": model.scope,
    }
    if extra_metadata:
        metadata.update(extra_metadata)
    save_checkpoint(path, "bc", metadata,
                    [(name, p.data) for name, p in model.named_parameters()])


def load_bc(path) -> tuple[BcModel, dict]:
    metadata, tensors = load_checkpoint(path)
    if metadata.get("kind") != "bc":
        raise ParseError(f"{path}: expected a bc checkpoint, got {metadata.get('kind')!r}")
    obs_spec = ObservationSpec.from_json(metadata["obs_spec"])
    act_spec = ActionSpec.from_json(metadata["act_spec"])
    cfg = BcConfig.from_json(metadata["bc_config"])
    model = BcModel(obs_spec, act_spec, cfg, scope=metadata.get("scope", "policy"))
    model.load_state(tensors)
    return model, metadata
