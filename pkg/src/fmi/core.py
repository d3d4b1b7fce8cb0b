"""Shared domain types: typed buffers, reduction operators, and the error taxonomy.

Every channel and collective moves :class:`DataBuffer` values around; element
byte order is little-endian everywhere so buffers are wire-compatible across
hosts.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ErrorKind(enum.Enum):
    TIMEOUT = "Timeout"
    PEER_FAILURE = "PeerFailure"
    CHANNEL_FAILURE = "ChannelFailure"
    MESSAGE_TOO_LARGE = "MessageTooLarge"
    PROTOCOL_VIOLATION = "ProtocolViolation"
    JOIN_FAILED = "JoinFailed"
    RETRIES_EXHAUSTED = "RetriesExhausted"


class FmiError(Exception):
    """Base error; every public operation fails with exactly one kind."""

    kind: ErrorKind = ErrorKind.CHANNEL_FAILURE

    def __init__(self, detail: str = ""):
        super().__init__(detail)
        self.detail = detail

    def __str__(self):
        return f"{self.kind.value}: {self.detail}"


class Timeout(FmiError):
    kind = ErrorKind.TIMEOUT


class PeerFailure(FmiError):
    kind = ErrorKind.PEER_FAILURE


class ChannelFailure(FmiError):
    kind = ErrorKind.CHANNEL_FAILURE


class MessageTooLarge(FmiError):
    kind = ErrorKind.MESSAGE_TOO_LARGE


class ProtocolViolation(FmiError):
    kind = ErrorKind.PROTOCOL_VIOLATION


class JoinFailed(FmiError):
    kind = ErrorKind.JOIN_FAILED


class RetriesExhausted(FmiError):
    kind = ErrorKind.RETRIES_EXHAUSTED


ERROR_CLASSES = {cls.kind: cls for cls in (
    Timeout, PeerFailure, ChannelFailure, MessageTooLarge,
    ProtocolViolation, JoinFailed, RetriesExhausted,
)}


@dataclass(frozen=True)
class Datatype:
    """Element type descriptor: a kind name plus its width in bytes."""

    kind: str
    width: int
    np_dtype: str = field(compare=False, repr=False, default="")

    def __post_init__(self):
        if self.width not in (1, 4, 8):
            raise ProtocolViolation(f"unsupported element width {self.width}")


INT32 = Datatype("int32", 4, "<i4")
INT64 = Datatype("int64", 8, "<i8")
FLOAT64 = Datatype("float64", 8, "<f8")
BYTE = Datatype("byte", 1, "<u1")

DATATYPES = {dt.kind: dt for dt in (INT32, INT64, FLOAT64, BYTE)}


@dataclass(frozen=True)
class DataBuffer:
    """Raw little-endian bytes plus the element datatype and count.

    Immutable value type; safe to share between threads and to hand to any
    channel unchanged.
    """

    data: bytes
    dtype: Datatype
    count: int

    def __post_init__(self):
        if self.count < 0:
            raise ProtocolViolation("negative element count")
        if len(self.data) != self.count * self.dtype.width:
            raise ProtocolViolation(
                f"buffer is {len(self.data)} bytes but {self.count} x "
                f"{self.dtype.width}-byte elements were declared"
            )

    @property
    def nbytes(self) -> int:
        return len(self.data)

    def values(self) -> list:
        """Unpack back into a list of Python scalars."""
        arr = np.frombuffer(self.data, dtype=self.dtype.np_dtype)
        return arr.tolist()

    def slice_elements(self, start: int, stop: int) -> "DataBuffer":
        w = self.dtype.width
        return DataBuffer(self.data[start * w:stop * w], self.dtype, stop - start)


def buffer_of(values: Sequence, dtype: Datatype) -> DataBuffer:
    """Pack a homogeneous element list into a little-endian DataBuffer."""
    arr = np.asarray(values, dtype=dtype.np_dtype)
    if arr.ndim > 1:
        raise ProtocolViolation("expected a flat element list")
    return DataBuffer(arr.tobytes(), dtype, int(arr.size))


def bytes_buffer(data: bytes) -> DataBuffer:
    """Wrap raw bytes as a byte-typed buffer."""
    return DataBuffer(bytes(data), BYTE, len(data))


@dataclass(frozen=True)
class ReductionOp:
    """An associative binary element operation.

    ``fn`` combines two scalars. When ``vectorized`` names a numpy ufunc the
    fast path applies it array-wise; user callables go through a per-element
    loop. Non-commutative ops are evaluated in ascending-rank fold order by
    every collective.
    """

    name: str
    fn: Callable
    commutative: bool = True
    vectorized: str | None = None


SUM = ReductionOp("sum", lambda a, b: a + b, vectorized="add")
PROD = ReductionOp("prod", lambda a, b: a * b, vectorized="multiply")
MIN = ReductionOp("min", lambda a, b: a if a <= b else b, vectorized="minimum")
MAX = ReductionOp("max", lambda a, b: a if a >= b else b, vectorized="maximum")
# Identity projection; needed so barrier can ride on allreduce with no work.
NOOP = ReductionOp("noop", lambda a, b: a)

BUILTIN_OPS = {op.name: op for op in (SUM, PROD, MIN, MAX, NOOP)}


def _wrap_integral(value, dtype: Datatype):
    # user callables may overflow the element range; match wraparound
    if dtype.kind == "byte":
        return value & 0xFF
    if dtype.kind == "float64":
        return value
    bits = dtype.width * 8
    return ((int(value) + (1 << (bits - 1))) & ((1 << bits) - 1)) - (1 << (bits - 1))


def apply_reduce(op: ReductionOp, a: DataBuffer, b: DataBuffer) -> DataBuffer:
    """Element-wise ``op.fn(a[i], b[i])`` over two equally shaped buffers."""
    if a.dtype != b.dtype:
        raise ProtocolViolation(f"dtype mismatch: {a.dtype.kind} vs {b.dtype.kind}")
    if a.count != b.count:
        raise ProtocolViolation(f"count mismatch: {a.count} vs {b.count}")
    if a.count == 0:
        return a
    xs = np.frombuffer(a.data, dtype=a.dtype.np_dtype)
    ys = np.frombuffer(b.data, dtype=b.dtype.np_dtype)
    if op.vectorized is not None:
        out = getattr(np, op.vectorized)(xs, ys)
    else:
        # Slow path for user-supplied callables: per-element upcalls.
        out = np.array([_wrap_integral(op.fn(x, y), a.dtype)
                        for x, y in zip(xs.tolist(), ys.tolist())],
                       dtype=a.dtype.np_dtype)
    return DataBuffer(out.astype(a.dtype.np_dtype).tobytes(), a.dtype, a.count)
