"""Versioned binary checkpoints: parameters, optimizer, RNG, provenance.

Layout (all integers little-endian):

    magic               8 bytes  b"CMMATCH\\0"
    version             u32
    hyper block         u64 length + JSON (hyperparameter dict)
    tensor count        u32
    tensor records      name (u16 len + utf-8), dtype code (u8),
                        ndim (u8), dims (u64 each),
                        values as float64 little-endian
    adam scalar block   u64 length + JSON (lr, betas, eps, step) or empty
    adam moment count   u32 (m and v records follow, same record format)
    rng block           u64 length + JSON bit-generator state or empty
    tail block          u64 length + JSON {"best_metric": float|null}

Values are stored as float64; float32 tensors upcast exactly on save and
cast back on load, so a save/load/save cycle is byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .config import Hyperparams
from .errors import CheckpointError
from .optim import AdamState

MAGIC = b"CMMATCH\x00"
FORMAT_VERSION = 1

_DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_CODE_DTYPES = {code: dt for dt, code in _DTYPE_CODES.items()}


@dataclass
class Checkpoint:
    """Everything needed to resume or evaluate a training run."""

    hyper: Hyperparams
    tensors: dict[str, np.ndarray]
    adam: AdamState | None = None
    rng_state: dict | None = None
    best_metric: float | None = None
    version: int = FORMAT_VERSION


def _write_block(fh, payload: bytes) -> None:
    fh.write(struct.pack("<Q", len(payload)))
    fh.write(payload)


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def _read_block(fh, what: str) -> bytes:
    (length,) = struct.unpack("<Q", _read_exact(fh, 8, f"{what} length"))
    return _read_exact(fh, length, what)


def _write_tensor(fh, name: str, arr: np.ndarray) -> None:
    code = _DTYPE_CODES.get(arr.dtype)
    if code is None:
        raise CheckpointError(f"tensor '{name}' has unsupported dtype {arr.dtype}")
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<BB", code, arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<Q", dim))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_tensor(fh) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<H", _read_exact(fh, 2, "tensor name length"))
    name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
    code, ndim = struct.unpack("<BB", _read_exact(fh, 2, f"tensor '{name}' header"))
    dtype = _CODE_DTYPES.get(code)
    if dtype is None:
        raise CheckpointError(f"tensor '{name}' has unknown dtype code {code}")
    shape = tuple(
        struct.unpack("<Q", _read_exact(fh, 8, f"tensor '{name}' dims"))[0]
        for _ in range(ndim))
    count = int(np.prod(shape)) if shape else 1
    raw = _read_exact(fh, count * 8, f"tensor '{name}' values")
    values = np.frombuffer(raw, dtype="<f8").reshape(shape)
    return name, values.astype(dtype)


def save_checkpoint(path: str, ckpt: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", ckpt.version))
        _write_block(fh, json.dumps(ckpt.hyper.as_dict(), sort_keys=True).encode("utf-8"))

        fh.write(struct.pack("<I", len(ckpt.tensors)))
        for name, arr in ckpt.tensors.items():
            _write_tensor(fh, name, arr)

        if ckpt.adam is None:
            _write_block(fh, b"")
            fh.write(struct.pack("<I", 0))
        else:
            scalars = {
                "learning_rate": ckpt.adam.learning_rate,
                "beta1": ckpt.adam.beta1,
                "beta2": ckpt.adam.beta2,
                "eps": ckpt.adam.eps,
                "step": ckpt.adam.step,
            }
            _write_block(fh, json.dumps(scalars, sort_keys=True).encode("utf-8"))
            fh.write(struct.pack("<I", len(ckpt.adam.m)))
            for name in ckpt.adam.m:
                _write_tensor(fh, name, ckpt.adam.m[name])
                _write_tensor(fh, name, ckpt.adam.v[name])

        rng_payload = b"" if ckpt.rng_state is None else json.dumps(
            ckpt.rng_state, sort_keys=True).encode("utf-8")
        _write_block(fh, rng_payload)
        _write_block(fh, json.dumps({"best_metric": ckpt.best_metric}).encode("utf-8"))


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, len(MAGIC), "magic")
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: checkpoint format version {version} is incompatible "
                f"with supported version {FORMAT_VERSION}")
        hyper = Hyperparams.from_dict(json.loads(_read_block(fh, "hyperparameters")))

        (n_tensors,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        tensors = {}
        for _ in range(n_tensors):
            name, arr = _read_tensor(fh)
            tensors[name] = arr

        adam_payload = _read_block(fh, "optimizer scalars")
        adam = None
        if adam_payload:
            scalars = json.loads(adam_payload)
            (n_moments,) = struct.unpack("<I", _read_exact(fh, 4, "moment count"))
            m: dict[str, np.ndarray] = {}
            v: dict[str, np.ndarray] = {}
            for _ in range(n_moments):
                name_m, arr_m = _read_tensor(fh)
                name_v, arr_v = _read_tensor(fh)
                if name_m != name_v:
                    raise CheckpointError(f"optimizer moment pair mismatch: {name_m!r} vs {name_v!r}")
                m[name_m] = arr_m
                v[name_v] = arr_v
            adam = AdamState(learning_rate=scalars["learning_rate"], beta1=scalars["beta1"],
                             beta2=scalars["beta2"], eps=scalars["eps"],
                             step=int(scalars["step"]), m=m, v=v)
        else:
            (n_moments,) = struct.unpack("<I", _read_exact(fh, 4, "moment count"))
            if n_moments != 0:
                raise CheckpointError("optimizer moments present without scalar block")

        rng_payload = _read_block(fh, "rng state")
        rng_state = json.loads(rng_payload) if rng_payload else None
        tail = json.loads(_read_block(fh, "tail"))
        return Checkpoint(hyper=hyper, tensors=tensors, adam=adam,
                          rng_state=rng_state, best_metric=tail.get("best_metric"),
                          version=version)
