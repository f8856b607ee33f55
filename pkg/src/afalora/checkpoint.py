"""Binary checkpoint container.

Layout, all integers little-endian::

    b"AFAL"                      magic
    u32 version                  FORMAT_VERSION
    u32 meta_len, meta bytes     UTF-8 key=value text (run config + run state)
    u32 n_tensors
    n_tensors x record:
        u32 name_len, name bytes
        u64 rows, u64 cols
        u8 dtype tag             1 = float64, 2 = float32
        rows*cols raw values     row-major, little-endian
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MAGIC",
    "FORMAT_VERSION",
    "CheckpointError",
    "BadMagicError",
    "VersionMismatchError",
    "TruncatedCheckpointError",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "atomic_write",
    "model_to_checkpoint",
    "model_from_checkpoint",
]

MAGIC = b"AFAL"
FORMAT_VERSION = 1
_DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<f4")}
_TAGS = {np.dtype("float64"): 1, np.dtype("float32"): 2}


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    def __init__(self, found: int, expected: int):
        super().__init__(f"checkpoint format version {found} is not supported by this reader "
                         f"(reader version {expected})")
        self.found = found
        self.expected = expected


class TruncatedCheckpointError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    tensors: dict = field(default_factory=dict)  # name -> 2-D ndarray
    meta: dict = field(default_factory=dict)     # str -> str


def atomic_write(path: str | os.PathLike, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode(ckpt: Checkpoint, version: int = FORMAT_VERSION) -> bytes:
    parts = [MAGIC, struct.pack("<I", version)]
    meta = "".join(f"{k}={v}\n" for k, v in ckpt.meta.items()).encode("utf-8")
    parts += [struct.pack("<I", len(meta)), meta, struct.pack("<I", len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise ValueError(f"tensor {name!r} must be 2-D, got shape {arr.shape}")
        if arr.dtype not in _TAGS:
            raise ValueError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        tag = _TAGS[arr.dtype]
        raw = name.encode("utf-8")
        parts += [struct.pack("<I", len(raw)), raw, struct.pack("<QQB", arr.shape[0], arr.shape[1], tag),
                  np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()]
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedCheckpointError(
                f"checkpoint truncated while reading {what} at byte {self.pos} "
                f"(need {n}, have {len(self.data) - self.pos})"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode(data: bytes) -> Checkpoint:
    r = _Reader(data)
    if len(data) < 4:
        raise TruncatedCheckpointError("checkpoint truncated before magic")
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = r.unpack("<I", "version")
    if version != FORMAT_VERSION:
        raise VersionMismatchError(version, FORMAT_VERSION)
    (meta_len,) = r.unpack("<I", "metadata length")
    meta_text = r.take(meta_len, "metadata").decode("utf-8")
    meta = {}
    for line in meta_text.splitlines():
        if line:
            k, v = line.split("=", 1)
            meta[k] = v
    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    for i in range(count):
        (name_len,) = r.unpack("<I", f"name length of tensor {i}")
        name = r.take(name_len, f"name of tensor {i}").decode("utf-8")
        rows, cols, tag = r.unpack("<QQB", f"header of tensor {name!r}")
        if tag not in _DTYPES:
            raise CheckpointError(f"tensor {name!r} has unknown dtype tag {tag}")
        dt = _DTYPES[tag]
        raw = r.take(rows * cols * dt.itemsize, f"values of tensor {name!r}")
        tensors[name] = np.frombuffer(raw, dtype=dt).reshape(rows, cols).astype(dt.newbyteorder("="))
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after last tensor")
    return Checkpoint(tensors, meta)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    atomic_write(path, encode(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode(fh.read())


def model_to_checkpoint(model, meta: dict | None = None) -> Checkpoint:
    """Pack an :class:`~afalora.models.MLP` with enough metadata to rebuild it."""
    from .adapters import AdapterLayer

    out = dict(meta or {})
    out["model.n_layers"] = str(len(model.layers))
    for i, layer in enumerate(model.layers):
        p = f"layer{i}."
        if isinstance(layer, AdapterLayer):
            c = layer.config
            out.update({
                p + "kind": "adapter", p + "rank": str(c.rank), p + "alpha": repr(float(c.alpha)),
                p + "placement": c.placement.name, p + "activation": c.activation.value,
                p + "dora": str(c.dora).lower(), p + "trainable_base": str(layer.trainable_base).lower(),
            })
        else:
            out.update({p + "kind": "linear", p + "trainable": str(layer.trainable).lower()})
    tensors = {name: t.values for name, t in model.named_tensors().items()}
    return Checkpoint(tensors, out)


def model_from_checkpoint(ckpt: Checkpoint):
    from .adapters import AdapterConfig, AdapterLayer
    from .autodiff import Tensor
    from .models import MLP, Linear

    meta, tens = ckpt.meta, ckpt.tensors
    try:
        n = int(meta["model.n_layers"])
        layers = []
        for i in range(n):
            p = f"layer{i}."
            if meta[p + "kind"] == "adapter":
                W0 = tens[p + "W0"]
                cfg = AdapterConfig(d_in=W0.shape[1], d_out=W0.shape[0], rank=int(meta[p + "rank"]),
                                    alpha=float(meta[p + "alpha"]), placement=meta[p + "placement"],
                                    activation=meta[p + "activation"], dora=meta[p + "dora"] == "true")
                trainable = meta[p + "trainable_base"] == "true"
                m = Tensor(tens[p + "m"], requires_grad=True, name="m") if p + "m" in tens else None
                bias = Tensor(tens[p + "bias"], name="bias") if p + "bias" in tens else None
                layers.append(AdapterLayer(cfg, Tensor(W0, name="W0"),
                                           Tensor(tens[p + "A"], requires_grad=True, name="A"),
                                           Tensor(tens[p + "B"], requires_grad=True, name="B"),
                                           m=m, bias=bias, trainable_base=trainable))
            else:
                layers.append(Linear(tens[p + "weight"], tens.get(p + "bias"),
                                     trainable=meta[p + "trainable"] == "true"))
    except KeyError as exc:
        raise CheckpointError(f"checkpoint is missing entry {exc.args[0]!r}") from None
    return MLP(layers)
