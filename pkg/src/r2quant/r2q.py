"""Residual Refinement Quantization: 2-bit weights as two 1-bit kernels.

``quantize`` binarizes the weights (coarse kernel), binarizes what is left
over (residual kernel), and the reconstruction is ``a1*q1 + a2*q2`` per
group, so every group lives on the 4-point codebook ``{±a1 ± a2}``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, IndexOutOfRange, ShapeMismatch
from .onebit import BinaryKernel, binarize_matrix, dequantize_onebit, packed_nbytes
from .tensor import GroupScheme, as_matrix, as_scheme

R2Q_MAGIC = b"R2Q1"
_HEADER = struct.Struct("<4sIIIi")

# version 1 stores reals as float32, version 2 as float64 (lossless)
REAL_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
DEFAULT_VERSION = 2


@dataclass(frozen=True, eq=False)
class R2QTensor:
    kernel1: BinaryKernel
    kernel2: BinaryKernel

    def __post_init__(self):
        if self.kernel1.shape != self.kernel2.shape or self.kernel1.scheme != self.kernel2.scheme:
            raise ShapeMismatch("both kernels must share shape and scheme")

    @property
    def shape(self) -> tuple[int, int]:
        return self.kernel1.shape

    @property
    def scheme(self) -> GroupScheme:
        return self.kernel1.scheme

    @property
    def num_groups(self) -> int:
        return self.kernel1.alphas.size

    def __eq__(self, other):
        if not isinstance(other, R2QTensor):
            return NotImplemented
        return self.kernel1 == other.kernel1 and self.kernel2 == other.kernel2


def residual(m, k: BinaryKernel) -> np.ndarray:
    m = as_matrix(m)
    if m.shape != k.shape:
        raise ShapeMismatch(f"matrix {m.shape} vs kernel {k.shape}")
    return m - dequantize_onebit(k)


def quantize(m, s=GroupScheme()) -> R2QTensor:
    m = as_matrix(m)
    s = as_scheme(s)
    coarse = binarize_matrix(m, s)
    fine = binarize_matrix(residual(m, coarse), s)
    return R2QTensor(coarse, fine)


def dequantize(t: R2QTensor) -> np.ndarray:
    g = t.kernel1.group_size
    q1 = t.kernel1.signs().reshape(-1, g)
    q2 = t.kernel2.signs().reshape(-1, g)
    out = q1 * t.kernel1.alphas[:, None] + q2 * t.kernel2.alphas[:, None]
    return out.reshape(t.shape)


def codebook(t: R2QTensor, group_index: int) -> tuple[float, float, float, float]:
    """The group's four levels in the order ``-a1-a2, -a1+a2, a1-a2, a1+a2``.

    No sorting is applied: when ``a2 > a1`` the middle two swap places.
    """
    if not 0 <= group_index < t.num_groups:
        raise IndexOutOfRange(f"group {group_index} out of range [0, {t.num_groups})")
    a1 = float(t.kernel1.alphas[group_index])
    a2 = float(t.kernel2.alphas[group_index])
    return (-a1 - a2, -a1 + a2, a1 - a2, a1 + a2)


def level_indices(t: R2QTensor) -> np.ndarray:
    """Index into :func:`codebook` order for every weight, as an int matrix."""
    b1 = (t.kernel1.signs() > 0).astype(np.int64)
    b2 = (t.kernel2.signs() > 0).astype(np.int64)
    return 2 * b1 + b2


# -- serialization ---------------------------------------------------------


def to_bytes(t: R2QTensor, version: int = DEFAULT_VERSION) -> bytes:
    if version not in REAL_DTYPES:
        raise ValueError(f"unknown R2Q format version {version}")
    real = REAL_DTYPES[version]
    rows, cols = t.shape
    parts = [_HEADER.pack(R2Q_MAGIC, version, rows, cols, t.scheme.group_size)]
    for k in (t.kernel1, t.kernel2):
        parts.append(k.packed.tobytes())
        parts.append(k.alphas.astype(real).tobytes())
    return b"".join(parts)


def from_bytes(buf: bytes) -> R2QTensor:
    if len(buf) < _HEADER.size:
        raise FormatError("truncated R2Q header")
    magic, version, rows, cols, group_size = _HEADER.unpack_from(buf)
    if magic != R2Q_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {R2Q_MAGIC!r}")
    if version not in REAL_DTYPES:
        raise FormatError(f"unsupported R2Q version {version}")
    real = REAL_DTYPES[version]
    try:
        scheme = GroupScheme(group_size)
        ngroups = scheme.num_groups(rows, cols)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    nbits = packed_nbytes(rows, cols)
    nalpha = ngroups * real.itemsize
    if len(buf) != _HEADER.size + 2 * (nbits + nalpha):
        raise FormatError("R2Q payload length does not match header")

    kernels = []
    pos = _HEADER.size
    for _ in range(2):
        packed = np.frombuffer(buf, np.uint8, nbits, pos).copy()
        pos += nbits
        alphas = np.frombuffer(buf, real, ngroups, pos).astype(np.float64)
        pos += nalpha
        try:
            kernels.append(BinaryKernel(packed, alphas, (rows, cols), scheme))
        except ValueError as exc:
            raise FormatError(str(exc)) from exc
    return R2QTensor(*kernels)


def save(path, t: R2QTensor, version: int = DEFAULT_VERSION) -> None:
    Path(path).write_bytes(to_bytes(t, version))


def load(path) -> R2QTensor:
    return from_bytes(Path(path).read_bytes())
