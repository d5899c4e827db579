"""Addition-only matrix multiply over packed sign kernels.

``W_hat @ X = a1 * (Q1 @ X) + a2 * (Q2 @ X)`` with row-wise ``a``.  The two
sign products need only additions and subtractions of rows of ``X``; the
only floating multiplications are the ``2*M*N`` row scalings.  Every kernel
returns the result together with an :class:`OpCount` tally of the floating
operations it actually issued.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch, UnsupportedScheme
from .r2q import R2QTensor, dequantize, quantize
from .tensor import as_matrix


@dataclass
class OpCount:
    float_muls: int = 0
    float_adds: int = 0
    sign_flips_or_adds: int = 0  # add/sub issued inside the binary accumulation

    def __add__(self, other: "OpCount") -> "OpCount":
        return OpCount(
            self.float_muls + other.float_muls,
            self.float_adds + other.float_adds,
            self.sign_flips_or_adds + other.sign_flips_or_adds,
        )


def _operand(x) -> np.ndarray:
    # object arrays pass through untouched so tests can feed op-counting scalars
    if isinstance(x, np.ndarray) and x.dtype == object:
        if x.ndim != 2:
            raise ShapeMismatch(f"expected a 2-D matrix, got ndim={x.ndim}")
        return x
    return as_matrix(x)


def _check_inner(m: int, k: int, x: np.ndarray) -> None:
    if x.shape[0] != k:
        raise ShapeMismatch(f"inner dimensions disagree: ({m}, {k}) @ {x.shape}")


def _sign_bits(packed: np.ndarray, rows: int, cols: int, col: int) -> np.ndarray:
    """Bits of column ``col`` of a row-major LSB-first packed sign matrix."""
    idx = np.arange(rows) * cols + col
    return ((packed[idx >> 3] >> (idx & 7).astype(np.uint8)) & 1).astype(bool)


def matmul_binary(packed: np.ndarray, shape: tuple[int, int], x) -> tuple[np.ndarray, OpCount]:
    """``Q @ x`` for a packed ±1 matrix ``Q`` of ``shape`` (M, K).

    Accumulates over k in ascending order, selecting ``+x[k]`` or ``-x[k]``
    per output row straight from the packed bits.
    """
    x = _operand(x)
    m, k = shape
    _check_inner(m, k, x)
    n = x.shape[1]
    if k == 0:
        return np.zeros((m, n)), OpCount()
    bits = _sign_bits(packed, m, k, 0)
    acc = np.where(bits[:, None], x[0], -x[0])
    for col in range(1, k):
        bits = _sign_bits(packed, m, k, col)
        pos = x[col]
        acc += np.where(bits[:, None], pos, -pos)
    adds = m * n * (k - 1)
    return acc, OpCount(float_muls=0, float_adds=adds, sign_flips_or_adds=adds)


def matmul_r2q(
    t: R2QTensor, x, *, parallel: bool = True, fallback: bool = True
) -> tuple[np.ndarray, OpCount]:
    """Multiply an R2Q weight (M, K) by ``x`` (K, N).

    Only per-channel tensors take the addition-only path.  Grouped tensors
    fall back to dequantize plus :func:`matmul_reference` unless
    ``fallback=False``, in which case :class:`UnsupportedScheme` is raised.
    """
    x = _operand(x)
    m, k = t.shape
    _check_inner(m, k, x)
    if not t.scheme.is_per_channel and k > 0:
        if not fallback:
            raise UnsupportedScheme(f"fast path needs per-channel scales, got {t.scheme}")
        return matmul_reference(dequantize(t), x)

    kernels = (t.kernel1, t.kernel2)
    if parallel:
        with ThreadPoolExecutor(max_workers=2) as pool:
            results = list(pool.map(lambda kern: matmul_binary(kern.packed, t.shape, x), kernels))
    else:
        results = [matmul_binary(kern.packed, t.shape, x) for kern in kernels]
    (p1, c1), (p2, c2) = results

    n = x.shape[1]
    out = t.kernel1.alphas[:, None] * p1
    out += t.kernel2.alphas[:, None] * p2
    counts = c1 + c2 + OpCount(float_muls=2 * m * n, float_adds=m * n)
    return out, counts


def matmul_reference(w, x) -> tuple[np.ndarray, OpCount]:
    """Dense product with k-ascending accumulation; the oracle for the fast paths."""
    w = as_matrix(w)
    x = as_matrix(x)
    m, k = w.shape
    _check_inner(m, k, x)
    n = x.shape[1]
    acc = np.zeros((m, n))
    if k == 0:
        return acc, OpCount()
    acc[:] = w[:, 0:1] * x[0]
    for col in range(1, k):
        acc += w[:, col : col + 1] * x[col]
    return acc, OpCount(float_muls=m * n * k, float_adds=m * n * (k - 1))


def complexity_table(m: int, n: int, k: int) -> dict[str, OpCount]:
    """Predicted operation counts for an (M, K) @ (K, N) product.

    The INT2 row counts ``MNK + MN`` multiplications (dequantize then multiply).
    """
    if min(m, n, k) < 1:
        raise ValueError("dimensions must be positive")
    acc = m * n * (k - 1)
    return {
        "dense": OpCount(float_muls=m * n * k, float_adds=acc),
        "int2": OpCount(float_muls=m * n * k + m * n, float_adds=acc),
        "r2q": OpCount(float_muls=2 * m * n, float_adds=2 * acc + m * n, sign_flips_or_adds=2 * acc),
    }


BENCH_COLUMNS = (
    "M", "N", "K", "method", "float_muls", "float_adds", "wall_ns",
    "predicted_muls", "predicted_adds",
)


def bench(dims, *, seed: int = 0, repeats: int = 3) -> list[dict]:
    """Time the dense and R2Q paths on random per-channel instances.

    Returns one row per (dims, method) with measured and predicted counts;
    ``wall_ns`` is the best of ``repeats`` runs.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for m, n, k in dims:
        w = rng.standard_normal((m, k))
        x = rng.standard_normal((k, n))
        t = quantize(w)
        w_hat = dequantize(t)
        predicted = complexity_table(m, n, k)
        for method, fn in (
            ("dense", lambda: matmul_reference(w_hat, x)),
            ("r2q", lambda: matmul_r2q(t, x)),
        ):
            best = None
            for _ in range(repeats):
                t0 = time.perf_counter_ns()
                _, counts = fn()
                elapsed = time.perf_counter_ns() - t0
                best = elapsed if best is None else min(best, elapsed)
            rows.append({
                "M": m, "N": n, "K": k, "method": method,
                "float_muls": counts.float_muls, "float_adds": counts.float_adds,
                "wall_ns": best,
                "predicted_muls": predicted[method].float_muls,
                "predicted_adds": predicted[method].float_adds,
            })
    return rows
