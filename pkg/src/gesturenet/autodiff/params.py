"""Named parameter collection, Adam, and the GFCK checkpoint container.

GFCK layout (all integers little-endian)::

    b"GFCK"  uint32 version  uint32 n_records
    per record:
        uint32 name_len, name (utf-8), uint8 dtype tag (1=f32, 2=f64),
        uint32 rank, uint64 extent * rank, raw little-endian scalars
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Iterator, Mapping, Optional

import numpy as np

from .tensor import Tensor

CHECKPOINT_MAGIC = b"GFCK"
CHECKPOINT_VERSION = 1
_DTYPE_TAGS = {np.dtype("float32"): 1, np.dtype("float64"): 2}
_TAG_DTYPES = {tag: dt.newbyteorder("<") for dt, tag in _DTYPE_TAGS.items()}


class ParamStore:
    """Ordered map of trainable tensors plus their Adam moments."""

    def __init__(self, params: Optional[Mapping[str, np.ndarray]] = None):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        tensor = Tensor(np.array(value), requires_grad=True)
        self.params[name] = tensor
        self.m[name] = np.zeros_like(tensor.data)
        self.v[name] = np.zeros_like(tensor.data)
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def names(self) -> list[str]:
        return list(self.params)

    def count(self, prefix: str = "") -> int:
        return sum(t.data.size for n, t in self.params.items() if n.startswith(prefix))

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        """Current gradients, zeros for parameters the last backward did not reach."""
        return {n: (t.grad if t.grad is not None else np.zeros_like(t.data)) for n, t in self.params.items()}

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore({n: t.data.astype(dtype) for n, t in self.params.items()})
        return out

    def copy(self) -> "ParamStore":
        out = ParamStore({n: t.data.copy() for n, t in self.params.items()})
        for n in self.params:
            out.m[n] = self.m[n].copy()
            out.v[n] = self.v[n].copy()
        out.t = self.t
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.params.items()}

    # -- checkpoint I/O -------------------------------------------------

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(CHECKPOINT_MAGIC)
        buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(self.params)))
        for name, tensor in self.params.items():
            arr = tensor.data
            tag = _DTYPE_TAGS.get(arr.dtype)
            if tag is None:
                raise TypeError(f"parameter {name!r} has unsupported dtype {arr.dtype}")
            encoded = name.encode("utf-8")
            buf.write(struct.pack("<I", len(encoded)))
            buf.write(encoded)
            buf.write(struct.pack("<BI", tag, arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            buf.write(np.ascontiguousarray(arr, dtype=_TAG_DTYPES[tag]).tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, payload: bytes) -> "ParamStore":
        view = memoryview(payload)
        if bytes(view[:4]) != CHECKPOINT_MAGIC:
            raise ValueError("not a GFCK checkpoint (bad magic)")
        version, count = struct.unpack_from("<II", view, 4)
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported GFCK version {version}")
        offset = 12
        params: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", view, offset)
            offset += 4
            name = bytes(view[offset : offset + name_len]).decode("utf-8")
            offset += name_len
            tag, rank = struct.unpack_from("<BI", view, offset)
            offset += 5
            shape = struct.unpack_from(f"<{rank}Q", view, offset)
            offset += 8 * rank
            if tag not in _TAG_DTYPES:
                raise ValueError(f"parameter {name!r}: unknown dtype tag {tag}")
            dtype = _TAG_DTYPES[tag]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if offset + nbytes > len(view):
                raise ValueError(f"parameter {name!r}: truncated payload")
            arr = np.frombuffer(view[offset : offset + nbytes], dtype=dtype).reshape(shape)
            params[name] = arr.astype(dtype.newbyteorder("="))
            offset += nbytes
        if offset != len(view):
            raise ValueError("trailing bytes after last GFCK record")
        return cls(params)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ParamStore":
        return cls.from_bytes(Path(path).read_bytes())


def adam_step(
    store: ParamStore,
    grads: Mapping[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParamStore:
    """One bias-corrected Adam update, in place. Returns ``store``."""
    missing = [n for n in store.params if n not in grads]
    if missing:
        raise KeyError(f"missing gradient for parameter(s): {', '.join(missing)}")
    extra = [n for n in grads if n not in store.params]
    if extra:
        raise KeyError(f"gradient for unknown parameter(s): {', '.join(extra)}")
    store.t += 1
    t = store.t
    correction1 = 1 - beta1**t
    correction2 = 1 - beta2**t
    for name, tensor in store.params.items():
        g = np.asarray(grads[name], dtype=tensor.dtype)
        if g.shape != tensor.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, expected {tensor.shape}")
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        tensor.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(tensor.dtype)
    return store
