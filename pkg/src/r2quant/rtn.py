"""Round-to-nearest baseline on a static, uniformly spaced integer lattice.

Signed asymmetric affine quantization per group::

    s     = (r_max - r_min) / (q_max - q_min)
    z     = round(q_min - r_min / s)
    code  = clip(round(w / s) + z, q_min, q_max)
    w_hat = s * (code - z)

``round`` is half-away-from-zero everywhere.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeMismatch
from .tensor import GroupScheme, as_matrix, as_scheme, group_view

RTN_MAGIC = b"RTN1"
_HEADER = struct.Struct("<4sIIIiB")
DEFAULT_VERSION = 2
_GROUP_RECORDS = {
    1: np.dtype([("s", "<f4"), ("z", "<i4")]),
    2: np.dtype([("s", "<f8"), ("z", "<i4")]),
}

MIN_BITS, MAX_BITS = 2, 8
# scales are floored at this fraction of the group's magnitude so that
# |z| stays below 2**24 + 2**(k-1) and fits the i32 zero-point field
_REL_SCALE_FLOOR = 2.0**-24
_ABS_SCALE_FLOOR = 1e-12


def qrange(k: int) -> tuple[int, int]:
    return -(2 ** (k - 1)), 2 ** (k - 1) - 1


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


@dataclass(frozen=True, eq=False)
class RTNTensor:
    codes: np.ndarray  # int8 matrix, each in [q_min, q_max]
    scales: np.ndarray  # float64 per group, > 0
    zero_points: np.ndarray  # int64 per group
    k: int
    scheme: GroupScheme

    def __post_init__(self):
        if not MIN_BITS <= self.k <= MAX_BITS:
            raise ValueError(f"bit width must be in [{MIN_BITS}, {MAX_BITS}], got {self.k}")
        rows, cols = self.codes.shape
        n = self.scheme.num_groups(rows, cols)
        if self.scales.shape != (n,) or self.zero_points.shape != (n,):
            raise ShapeMismatch("one scale and zero-point per group expected")
        lo, hi = qrange(self.k)
        if self.codes.size and (self.codes.min() < lo or self.codes.max() > hi):
            raise ValueError("codes outside the signed k-bit range")
        if np.any(self.scales <= 0):
            raise ValueError("scales must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return self.codes.shape

    @property
    def group_size(self) -> int:
        return self.scheme.effective_size(self.shape[1])

    def __eq__(self, other):
        if not isinstance(other, RTNTensor):
            return NotImplemented
        return (
            self.k == other.k
            and self.scheme == other.scheme
            and np.array_equal(self.codes, other.codes)
            and np.array_equal(self.scales, other.scales)
            and np.array_equal(self.zero_points, other.zero_points)
        )


def quantize_rtn(m, s=GroupScheme(), k: int = 2) -> RTNTensor:
    m = as_matrix(m)
    s = as_scheme(s)
    if not MIN_BITS <= k <= MAX_BITS:
        raise ValueError(f"bit width must be in [{MIN_BITS}, {MAX_BITS}], got {k}")
    qmin, qmax = qrange(k)
    groups = group_view(m, s)
    rmin = groups.min(axis=1)
    rmax = groups.max(axis=1)

    scale = (rmax - rmin) / (qmax - qmin)
    floor = np.maximum(_ABS_SCALE_FLOOR, _REL_SCALE_FLOOR * np.maximum(np.abs(rmin), np.abs(rmax)))
    scale = np.maximum(scale, floor)

    zero = round_half_away(qmin - rmin / scale)
    codes = np.clip(round_half_away(groups / scale[:, None]) + zero[:, None], qmin, qmax)
    return RTNTensor(
        codes.astype(np.int8).reshape(m.shape),
        scale,
        zero.astype(np.int64),
        k,
        s,
    )


def dequantize_rtn(t: RTNTensor) -> np.ndarray:
    codes = t.codes.reshape(-1, t.group_size).astype(np.float64)
    return (t.scales[:, None] * (codes - t.zero_points[:, None])).reshape(t.shape)


def levels(t: RTNTensor) -> np.ndarray:
    """Lattice index (``code - q_min``) of every weight, in ``[0, 2**k)``."""
    return t.codes.astype(np.int64) - qrange(t.k)[0]


# -- serialization ---------------------------------------------------------


def pack_codes(codes: np.ndarray, k: int) -> np.ndarray:
    """Two's-complement k-bit codes, row-major, LSB first."""
    u = codes.ravel().astype(np.int64) & ((1 << k) - 1)
    bits = ((u[:, None] >> np.arange(k)) & 1).astype(np.uint8)
    return np.packbits(bits.ravel(), bitorder="little")


def unpack_codes(packed: np.ndarray, n: int, k: int) -> np.ndarray:
    bits = np.unpackbits(packed, count=n * k, bitorder="little").reshape(n, k)
    u = bits.astype(np.int64) @ (1 << np.arange(k))
    return np.where(u >= 1 << (k - 1), u - (1 << k), u).astype(np.int8)


def to_bytes(t: RTNTensor, version: int = DEFAULT_VERSION) -> bytes:
    if version not in _GROUP_RECORDS:
        raise ValueError(f"unknown RTN format version {version}")
    rows, cols = t.shape
    header = _HEADER.pack(RTN_MAGIC, version, rows, cols, t.scheme.group_size, t.k)
    records = np.empty(t.scales.size, dtype=_GROUP_RECORDS[version])
    records["s"] = t.scales
    records["z"] = t.zero_points
    return header + pack_codes(t.codes, t.k).tobytes() + records.tobytes()


def from_bytes(buf: bytes) -> RTNTensor:
    if len(buf) < _HEADER.size:
        raise FormatError("truncated RTN header")
    magic, version, rows, cols, group_size, k = _HEADER.unpack_from(buf)
    if magic != RTN_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {RTN_MAGIC!r}")
    if version not in _GROUP_RECORDS:
        raise FormatError(f"unsupported RTN version {version}")
    if not MIN_BITS <= k <= MAX_BITS:
        raise FormatError(f"bad bit width {k}")
    try:
        scheme = GroupScheme(group_size)
        ngroups = scheme.num_groups(rows, cols)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    rec = _GROUP_RECORDS[version]
    ncode = (rows * cols * k + 7) // 8
    if len(buf) != _HEADER.size + ncode + ngroups * rec.itemsize:
        raise FormatError("RTN payload length does not match header")

    packed = np.frombuffer(buf, np.uint8, ncode, _HEADER.size)
    codes = unpack_codes(packed, rows * cols, k).reshape(rows, cols)
    records = np.frombuffer(buf, rec, ngroups, _HEADER.size + ncode)
    try:
        return RTNTensor(
            codes,
            records["s"].astype(np.float64),
            records["z"].astype(np.int64),
            k,
            scheme,
        )
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def save(path, t: RTNTensor, version: int = DEFAULT_VERSION) -> None:
    Path(path).write_bytes(to_bytes(t, version))


def load(path) -> RTNTensor:
    return from_bytes(Path(path).read_bytes())
