"""Synthetic (q, k, v) traces and the KVTR binary trace format.

All randomness comes from numpy's PCG64 bit generator seeded with the trace
seed, so traces are reproducible across platforms.

KVTR layout (little-endian)::

    magic    4s   b"KVTR"
    version  u32  1
    head_dim u32
    steps    u64
    seed     u64
    kind     u8   0=external 1=gaussian 2=heavy_hitter
    records  steps * (3 * head_dim) f64, each record q | k | v

Records have a fixed stride, so any step can be read without scanning.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

MAGIC = b"KVTR"
VERSION = 1
HEADER = struct.Struct("<4sIIQQB")

KIND_TAGS = {"external": 0, "gaussian": 1, "heavy_hitter": 2}
KIND_NAMES = {v: k for k, v in KIND_TAGS.items()}


class TraceFormatError(ValueError):
    pass


class UnsupportedVersionError(TraceFormatError):
    pass


class TruncatedTraceError(TraceFormatError):
    def __init__(self, record_index: int, message: str):
        super().__init__(message)
        self.record_index = record_index


class StepRecord(NamedTuple):
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray


@dataclass
class Trace:
    """``T`` steps of query/key/value vectors stored as three ``(T, d)`` arrays."""

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    seed: int = 0
    kind: str = "external"

    def __post_init__(self):
        self.q = np.ascontiguousarray(self.q, dtype=np.float64)
        self.k = np.ascontiguousarray(self.k, dtype=np.float64)
        self.v = np.ascontiguousarray(self.v, dtype=np.float64)
        if self.q.ndim != 2 or not self.q.shape == self.k.shape == self.v.shape:
            raise ValueError(f"q, k, v must share a (T, d) shape, got {self.q.shape}, {self.k.shape}, {self.v.shape}")
        if self.kind not in KIND_TAGS:
            raise ValueError(f"unknown trace kind {self.kind!r}")

    @property
    def head_dim(self) -> int:
        return self.q.shape[1]

    def __len__(self) -> int:
        return self.q.shape[0]

    def __iter__(self) -> Iterator[StepRecord]:
        for i in range(len(self)):
            yield StepRecord(self.q[i], self.k[i], self.v[i])

    @property
    def steps(self) -> list[StepRecord]:
        return list(self)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return (
            self.seed == other.seed
            and self.kind == other.kind
            and self.q.tobytes() == other.q.tobytes()
            and self.k.tobytes() == other.k.tobytes()
            and self.v.tobytes() == other.v.tobytes()
            and self.q.shape == other.q.shape
        )


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _check_shape(T: int, d: int) -> None:
    if T < 1:
        raise ValueError(f"trace length must be >= 1, got {T}")
    if d < 1:
        raise ValueError(f"head dimension must be >= 1, got {d}")


def _gaussian_base(T: int, d: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((T, 3, d))


def gen_gaussian(T: int, d: int, seed: int) -> Trace:
    _check_shape(T, d)
    x = _gaussian_base(T, d, _rng(seed))
    return Trace(x[:, 0], x[:, 1], x[:, 2], seed, "gaussian")


def gen_heavy_hitter(T: int, d: int, n_hot: int, gain: float, seed: int) -> Trace:
    """Gaussian trace plus ``n_hot`` early tokens every later query is drawn to.

    A random unit direction ``u`` is fixed. Hot keys are shifted by
    ``gain * sqrt(d) * u`` and every query from the first hot position on is
    shifted by ``gain * u``, adding about ``gain**2`` to the hot tokens'
    logits. Hot positions are drawn from the first quarter of the trace.
    The base draw comes first, so ``gain=0`` reproduces :func:`gen_gaussian`.
    """
    _check_shape(T, d)
    if not 0 <= n_hot <= T:
        raise ValueError(f"n_hot must lie in [0, T={T}], got {n_hot}")
    if gain < 0:
        raise ValueError(f"gain must be >= 0, got {gain}")
    rng = _rng(seed)
    x = _gaussian_base(T, d, rng)
    q, k, v = x[:, 0].copy(), x[:, 1].copy(), x[:, 2]
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    hot = np.sort(rng.choice(max(n_hot, T // 4), size=n_hot, replace=False))
    if n_hot and gain:
        k[hot] += gain * np.sqrt(d) * u
        q[hot[0]:] += gain * u
    return Trace(q, k, v, seed, "heavy_hitter")


def hot_positions(T: int, d: int, n_hot: int, seed: int) -> np.ndarray:
    """0-based hot indices that :func:`gen_heavy_hitter` picks for these arguments."""
    rng = _rng(seed)
    _gaussian_base(T, d, rng)
    rng.standard_normal(d)
    return np.sort(rng.choice(max(n_hot, T // 4), size=n_hot, replace=False))


def encode_trace(trace: Trace) -> bytes:
    T, d = trace.q.shape
    header = HEADER.pack(MAGIC, VERSION, d, T, trace.seed, KIND_TAGS[trace.kind])
    body = np.stack([trace.q, trace.k, trace.v], axis=1).astype("<f8", copy=False)
    return header + body.tobytes()


def write_trace(trace: Trace, path) -> None:
    data = encode_trace(trace)
    with open(path, "wb") as fh:
        fh.write(data)


def _parse_header(buf: bytes) -> tuple[int, int, int, str]:
    if len(buf) < HEADER.size:
        raise TraceFormatError(f"header is {len(buf)} bytes, expected {HEADER.size}")
    magic, version, d, T, seed, tag = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise TraceFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported trace version {version}, expected {VERSION}")
    if d == 0:
        raise TraceFormatError("header declares head_dim 0")
    if tag not in KIND_NAMES:
        raise TraceFormatError(f"unknown kind tag {tag}")
    return d, T, seed, KIND_NAMES[tag]


def decode_trace(buf: bytes, head_dim: int | None = None) -> Trace:
    d, T, seed, kind = _parse_header(buf)
    if head_dim is not None and d != head_dim:
        raise TraceFormatError(f"trace head_dim {d} does not match expected {head_dim}")
    stride = 3 * d * 8
    body = memoryview(buf)[HEADER.size:]
    if len(body) < T * stride:
        bad = len(body) // stride
        raise TruncatedTraceError(bad, f"trace truncated at record {bad} of {T}")
    if len(body) > T * stride:
        raise TraceFormatError(f"{len(body) - T * stride} trailing bytes after record {T - 1}")
    x = np.frombuffer(body, dtype="<f8").reshape(T, 3, d).astype(np.float64)
    return Trace(x[:, 0], x[:, 1], x[:, 2], seed, kind)


def read_trace(path, head_dim: int | None = None) -> Trace:
    with open(path, "rb") as fh:
        return decode_trace(fh.read(), head_dim)


def read_steps(path, start: int, stop: int) -> list[StepRecord]:
    """Read records ``start:stop`` by seeking, without loading the whole file."""
    with open(path, "rb") as fh:
        d, T, _, _ = _parse_header(fh.read(HEADER.size))
        if not 0 <= start <= stop <= T:
            raise IndexError(f"record range {start}:{stop} outside 0:{T}")
        stride = 3 * d * 8
        fh.seek(HEADER.size + start * stride, os.SEEK_SET)
        raw = fh.read((stop - start) * stride)
    if len(raw) < (stop - start) * stride:
        bad = start + len(raw) // stride
        raise TruncatedTraceError(bad, f"trace truncated at record {bad} of {T}")
    x = np.frombuffer(raw, dtype="<f8").reshape(-1, 3, d)
    return [StepRecord(r[0].copy(), r[1].copy(), r[2].copy()) for r in x]
