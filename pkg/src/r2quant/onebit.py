"""Closed-form optimal 1-bit binarization.

For a group ``w`` of length G the problem ``min ||w - alpha*q||^2`` over
``q in {-1,+1}^G`` and ``alpha >= 0`` is solved exactly by ``q = sign(w)``
(with sign(0) = +1) and ``alpha = mean(|w|)``.  :func:`brute_force_onebit`
enumerates every sign vector and exists only to check that claim.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyGroup, GroupTooLarge, ShapeMismatch
from .tensor import GroupScheme, as_matrix, as_scheme, group_view

BRUTE_FORCE_MAX_G = 16


def sign_indicator(w):
    """+1 where ``w >= 0`` and -1 elsewhere.  Works on scalars and arrays."""
    out = np.where(np.asarray(w) >= 0, 1, -1).astype(np.int8)
    return int(out) if out.ndim == 0 else out


def _l1_mean(groups: np.ndarray) -> np.ndarray:
    # cumsum accumulates strictly left to right, unlike np.sum's pairwise tree
    g = groups.shape[1]
    return np.cumsum(np.abs(groups), axis=1)[:, -1] / g


def binarize_group(w) -> tuple[np.ndarray, float]:
    """Optimal ``(q, alpha)`` for a single group."""
    w = np.asarray(w, dtype=np.float64).ravel()
    if w.size == 0:
        raise EmptyGroup("cannot binarize an empty group")
    return sign_indicator(w), float(_l1_mean(w[None, :])[0])


def pack_signs(signs: np.ndarray) -> np.ndarray:
    """Pack a ±1 array row-major, LSB first; bit 1 means +1."""
    bits = (np.asarray(signs).ravel() > 0).astype(np.uint8)
    return np.packbits(bits, bitorder="little")


def unpack_signs(packed: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    n = shape[0] * shape[1]
    bits = np.unpackbits(np.asarray(packed, dtype=np.uint8), count=n, bitorder="little")
    return (bits.astype(np.int8) * 2 - 1).reshape(shape)


def packed_nbytes(rows: int, cols: int) -> int:
    return (rows * cols + 7) // 8


@dataclass(frozen=True, eq=False)
class BinaryKernel:
    """Packed sign matrix with one non-negative scale per group."""

    packed: np.ndarray  # uint8, packed_nbytes(rows, cols) long
    alphas: np.ndarray  # float64, one per group in partition order
    shape: tuple[int, int]
    scheme: GroupScheme

    def __post_init__(self):
        rows, cols = self.shape
        if self.packed.dtype != np.uint8 or self.packed.shape != (packed_nbytes(rows, cols),):
            raise ShapeMismatch("packed sign buffer has the wrong size")
        if self.alphas.shape != (self.scheme.num_groups(rows, cols),):
            raise ShapeMismatch("one alpha per group expected")
        if np.any(self.alphas < 0):
            raise ValueError("alphas must be non-negative")

    @property
    def group_size(self) -> int:
        return self.scheme.effective_size(self.shape[1])

    def signs(self) -> np.ndarray:
        """Unpacked ±1 matrix as int8."""
        return unpack_signs(self.packed, self.shape)

    def __eq__(self, other):
        if not isinstance(other, BinaryKernel):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.scheme == other.scheme
            and np.array_equal(self.packed, other.packed)
            and np.array_equal(self.alphas, other.alphas)
        )


def binarize_matrix(m, s=GroupScheme()) -> BinaryKernel:
    m = as_matrix(m)
    s = as_scheme(s)
    groups = group_view(m, s)
    alphas = _l1_mean(groups)
    return BinaryKernel(pack_signs(sign_indicator(m)), alphas, m.shape, s)


def dequantize_onebit(k: BinaryKernel) -> np.ndarray:
    signs = k.signs().reshape(-1, k.group_size)
    return (signs * k.alphas[:, None]).reshape(k.shape)


def brute_force_onebit(w) -> tuple[np.ndarray, float, float]:
    """Exhaustive search over all 2**G sign vectors.

    Each candidate ``q`` gets its own best scale ``max(0, <w, q> / G)``; the
    returned triple is ``(q, alpha, squared_error)`` of the first minimizer.
    """
    w = np.asarray(w, dtype=np.float64).ravel()
    g = w.size
    if g == 0:
        raise EmptyGroup("cannot binarize an empty group")
    if g > BRUTE_FORCE_MAX_G:
        raise GroupTooLarge(f"brute force limited to G <= {BRUTE_FORCE_MAX_G}, got {g}")
    codes = np.arange(2**g)[:, None] >> np.arange(g)[None, :]
    cands = ((codes & 1) * 2 - 1).astype(np.float64)
    alphas = np.maximum(0.0, cands @ w / g)
    errors = np.sum((w[None, :] - alphas[:, None] * cands) ** 2, axis=1)
    best = int(np.argmin(errors))
    return cands[best].astype(np.int8), float(alphas[best]), float(errors[best])
