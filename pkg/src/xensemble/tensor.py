"""Dense float64 tensor and the ``TENSOR v1`` binary file format.

A :class:`Tensor` is an immutable view over a row-major float64 buffer.
Internally the rest of the package works on plain numpy arrays; Tensor is
the typed payload at serialization boundaries and the place where the
shape contracts (scalar-only broadcasting, lowest-index argmax) live.

File format, one block per tensor::

    TENSOR v1 <rank> <d1> ... <dk>\\n
    <product(d) little-endian float64 values>

Blocks may be concatenated in one file.
"""

from __future__ import annotations

import io
import operator
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "TensorFormatError",
    "elementwise",
    "matmul",
    "reduce",
    "write_tensors",
    "read_tensors",
]

_MAGIC = b"TENSOR v1"
_LE_F64 = np.dtype("<f8")

_OPS = {
    "add": operator.add,
    "sub": operator.sub,
    "mul": operator.mul,
    "div": operator.truediv,
    "max": np.maximum,
    "min": np.minimum,
}


class ShapeError(ValueError):
    pass


class TensorFormatError(ValueError):
    pass


class Tensor:
    __slots__ = ("_a",)

    def __init__(self, values, shape: Sequence[int] | None = None):
        a = np.array(values, dtype=np.float64, copy=True)
        if shape is not None:
            shape = tuple(int(d) for d in shape)
            if a.size != int(np.prod(shape, dtype=np.int64)):
                raise ShapeError(f"data length {a.size} does not match shape {list(shape)}")
            a = a.reshape(shape)
        if any(d <= 0 for d in a.shape):
            raise ShapeError(f"dimensions must be positive, got {list(a.shape)}")
        a.setflags(write=False)
        self._a = a

    @classmethod
    def _wrap(cls, a: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        a = np.ascontiguousarray(a, dtype=np.float64)
        if a.base is not None or a.flags.writeable:
            a = a.copy()
        a.setflags(write=False)
        t._a = a
        return t

    @property
    def shape(self) -> list[int]:
        return list(self._a.shape)

    @property
    def rank(self) -> int:
        return self._a.ndim

    @property
    def data(self) -> list[float]:
        return self._a.ravel().tolist()

    def numpy(self) -> np.ndarray:
        """Read-only ndarray view of the payload."""
        return self._a

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return self._a.shape == other._a.shape and bool(np.array_equal(self._a, other._a))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    @classmethod
    def zeros(cls, shape):
        return cls._wrap(np.zeros(shape))

    @classmethod
    def ones_like(cls, t: "Tensor") -> "Tensor":
        return cls._wrap(np.ones(t._a.shape))


def _as_array(x) -> np.ndarray:
    return x._a if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def elementwise(op: str, a, b) -> Tensor:
    """Apply ``op`` cell by cell. ``b`` may be a scalar (or size-1 tensor)."""
    try:
        fn = _OPS[op]
    except KeyError:
        raise ValueError(f"unknown op {op!r}; expected one of {sorted(_OPS)}") from None
    x, y = _as_array(a), _as_array(b)
    if y.size == 1 and y.shape != x.shape:
        y = y.reshape(())
    elif x.shape != y.shape:
        raise ShapeError(f"shape mismatch: {list(x.shape)} vs {list(y.shape)}")
    return Tensor._wrap(fn(x, y))


def matmul(a, b) -> Tensor:
    x, y = _as_array(a), _as_array(b)
    if x.ndim != 2 or y.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {list(x.shape)} and {list(y.shape)}")
    if x.shape[1] != y.shape[0]:
        raise ShapeError(f"inner dimensions differ: {list(x.shape)} @ {list(y.shape)}")
    return Tensor._wrap(x @ y)


def reduce(op: str, t, axis: int | None = None):
    """Reduce along ``axis`` (or everything when None).

    ``argmax`` returns an int (axis=None on a vector) or an int array;
    exact ties resolve to the lowest index.
    """
    x = _as_array(t)
    if axis is not None and not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"axis {axis} out of range for rank {x.ndim}")
    if op == "sum":
        r = x.sum(axis=axis)
    elif op == "mean":
        r = x.mean(axis=axis)
    elif op == "argmax":
        # np.argmax already returns the first occurrence of the maximum
        if axis is None:
            return int(np.argmax(x))
        return np.argmax(x, axis=axis)
    else:
        raise ValueError(f"unknown reduction {op!r}")
    if np.ndim(r) == 0:
        return float(r)
    return Tensor._wrap(r)


# ---------------------------------------------------------------------------
# TENSOR v1 I/O
# ---------------------------------------------------------------------------

def _write_block(fh: BinaryIO, a: np.ndarray) -> None:
    a = np.ascontiguousarray(a, dtype=_LE_F64)
    if a.ndim == 0:
        a = a.reshape(1)
    dims = " ".join(str(d) for d in a.shape)
    fh.write(_MAGIC + f" {a.ndim} {dims}\n".encode("ascii"))
    fh.write(a.tobytes(order="C"))


def write_tensors(path, tensors: Iterable) -> None:
    """Write tensors (or arrays) as concatenated TENSOR v1 blocks."""
    with open(path, "wb") as fh:
        for t in tensors:
            _write_block(fh, _as_array(t))


def _read_block(buf: bytes, pos: int) -> tuple[np.ndarray, int]:
    nl = buf.find(b"\n", pos)
    if nl < 0:
        raise TensorFormatError(f"unterminated header at byte {pos}")
    parts = buf[pos:nl].split()
    if len(parts) < 3 or b" ".join(parts[:2]) != _MAGIC:
        raise TensorFormatError(f"bad magic at byte {pos}: {buf[pos:nl][:32]!r}")
    try:
        rank = int(parts[2])
        dims = [int(d) for d in parts[3:]]
    except ValueError:
        raise TensorFormatError(f"non-integer header field at byte {pos}") from None
    if rank != len(dims) or any(d <= 0 for d in dims):
        raise TensorFormatError(f"inconsistent header at byte {pos}: rank {rank}, dims {dims}")
    count = int(np.prod(dims, dtype=np.int64))
    start = nl + 1
    end = start + 8 * count
    if end > len(buf):
        raise TensorFormatError(
            f"truncated payload: block at byte {pos} needs {8 * count} bytes, "
            f"{len(buf) - start} available"
        )
    a = np.frombuffer(buf, dtype=_LE_F64, count=count, offset=start).astype(np.float64).reshape(dims)
    return a, end


def read_tensors(path_or_bytes) -> list[Tensor]:
    if isinstance(path_or_bytes, (bytes, bytearray)):
        buf = bytes(path_or_bytes)
    else:
        buf = Path(path_or_bytes).read_bytes()
    out, pos = [], 0
    while pos < len(buf):
        a, pos = _read_block(buf, pos)
        out.append(Tensor._wrap(a))
    return out


def tensor_bytes(tensors: Iterable) -> bytes:
    fh = io.BytesIO()
    for t in tensors:
        _write_block(fh, _as_array(t))
    return fh.getvalue()
