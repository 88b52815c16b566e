"""Binary checkpoint container.

Layout (all integers little-endian)::

    offset 0   8 bytes   magic b"VARMAECK"
    offset 8   uint32    format version (currently 1)
    offset 12  uint64    header length H in bytes
    offset 20  H bytes   UTF-8 JSON header, keys sorted, no whitespace
    ...        N bytes   array payload: float64 little-endian, row-major,
                         arrays back to back in header order
    end - 32   32 bytes  SHA-256 of every preceding byte

The header holds the model configuration echo, the vocabulary hash, the
RNG state, the optimizer step counter, free-form metadata and the array
table. Each array entry has a name, a group (``param``, ``extra``,
``adam.m`` or ``adam.v``), a shape and a byte offset into the payload.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .cul import CULConfig
from .diffcore import Rng, Tensor
from .encoder import EncoderConfig
from .errors import CheckpointError
from .io import atomic_write_bytes
from .model import VarMAEModel

MAGIC = b"VARMAECK"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")
_DIGEST = 32
GROUPS = ("param", "extra", "adam.m", "adam.v")


@dataclass
class Checkpoint:
    header: dict
    arrays: dict = field(default_factory=dict)   # group -> {name: ndarray}

    @property
    def vocab_hash(self) -> str:
        return self.header["vocab_hash"]

    @property
    def metadata(self) -> dict:
        return self.header.get("metadata", {})

    def rng(self) -> Rng | None:
        st = self.header.get("rng")
        return Rng.from_state(st) if st else None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def encode_checkpoint(model: VarMAEModel, *, vocab_hash: str, rng: Rng | None = None,
                      optimizer_state=None, metadata: dict | None = None) -> bytes:
    groups: dict[str, dict[str, np.ndarray]] = {
        "param": {n: p.data for n, p in model.named_parameters()},
        "extra": dict(model.extra_state()),
        "adam.m": {}, "adam.v": {},
    }
    step = 0
    if optimizer_state is not None:
        step = optimizer_state.step
        groups["adam.m"] = dict(sorted(optimizer_state.m.items()))
        groups["adam.v"] = dict(sorted(optimizer_state.v.items()))
    table, chunks, offset = [], [], 0
    for group in GROUPS:
        for name, arr in groups[group].items():
            a = np.ascontiguousarray(arr, dtype="<f8")
            table.append({"name": name, "group": group, "shape": list(a.shape), "offset": offset})
            chunks.append(a.tobytes())
            offset += a.nbytes
    header = {
        "format": "varmae-checkpoint",
        "config": model.config_dict(),
        "vocab_hash": vocab_hash,
        "rng": rng.state() if rng is not None else None,
        "optimizer": {"step": step},
        "frozen": sorted(model.frozen),
        "task_heads": sorted(model.task_heads),
        "metadata": metadata or {},
        "arrays": table,
        "payload_bytes": offset,
    }
    hbytes = json.dumps(_jsonable(header), sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = _PREFIX.pack(MAGIC, VERSION, len(hbytes)) + hbytes + b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(path, model: VarMAEModel, **kwargs) -> None:
    """Serialize ``model`` (see :func:`encode_checkpoint`) and write it atomically."""
    atomic_write_bytes(path, encode_checkpoint(model, **kwargs))


def decode_checkpoint(blob: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(blob) < _PREFIX.size + _DIGEST:
        raise CheckpointError(f"{source}: file too short to be a checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CheckpointError(f"{source}: bad magic header {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version}")
    body, digest = blob[:-_DIGEST], blob[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{source}: checksum mismatch (truncated or corrupted file)")
    start = _PREFIX.size
    try:
        header = json.loads(body[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: unreadable header ({exc})") from exc
    payload = memoryview(body)[start + hlen:]
    if len(payload) != header.get("payload_bytes"):
        raise CheckpointError(f"{source}: payload length {len(payload)} does not match header")
    arrays: dict[str, dict[str, np.ndarray]] = {g: {} for g in GROUPS}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        lo = entry["offset"]
        raw = payload[lo:lo + 8 * count]
        if len(raw) != 8 * count or entry["group"] not in arrays:
            raise CheckpointError(f"{source}: bad array table entry {entry['name']!r}")
        arrays[entry["group"]][entry["name"]] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    return Checkpoint(header, arrays)


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode_checkpoint(blob, str(path))


def restore_model(ckpt: Checkpoint) -> VarMAEModel:
    """Rebuild the model recorded in ``ckpt`` with its parameters and batch-norm statistics."""
    cfg = ckpt.header["config"]
    try:
        enc = EncoderConfig(**cfg["encoder"])
        cul = CULConfig(**cfg["cul"])
    except TypeError as exc:
        raise CheckpointError(f"checkpoint config does not match this version: {exc}") from exc
    model = VarMAEModel(enc, cul, Rng(0))
    params = model.parameters()
    stored = ckpt.arrays["param"]
    for name in ckpt.header.get("task_heads", []):
        model.task_heads[name] = Tensor(stored[name].copy(), True, name)
    params = model.parameters()
    missing = sorted(set(params) - set(stored))
    extra = sorted(set(stored) - set(params))
    if missing or extra:
        raise CheckpointError(f"parameter mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
    for name, p in params.items():
        if p.shape != stored[name].shape:
            raise CheckpointError(f"shape mismatch for {name}: {p.shape} vs {stored[name].shape}")
        p.data[...] = stored[name]
    model.load_extra_state(ckpt.arrays["extra"])
    model.set_freeze_policy(ckpt.header.get("frozen") or "none")
    return model


def restore_optimizer(ckpt: Checkpoint):
    from .pretrain import AdamState

    state = AdamState()
    state.step = int(ckpt.header["optimizer"]["step"])
    state.m = {k: v.copy() for k, v in ckpt.arrays["adam.m"].items()}
    state.v = {k: v.copy() for k, v in ckpt.arrays["adam.v"].items()}
    return state
