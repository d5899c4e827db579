"""Quantization error and lattice-utilization reports.

Covers the per-layer weight MSE averaged over layers, how many weights of
each group land on each quantization level, a simple storage model for the
compression ratio, and a method x granularity comparison table.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import r2q, rtn
from .errors import ShapeMismatch
from .onebit import BinaryKernel, binarize_matrix, dequantize_onebit
from .tensor import GroupScheme, as_matrix, as_scheme

BASELINE_BITS = 16
SCALE_BITS = 32
ZERO_POINT_BITS = 32


# -- quantizer dispatch ----------------------------------------------------


def parse_method(method: str) -> tuple[str, int]:
    """``"r2q"``, ``"onebit"`` or ``"rtn"``/``"rtn-k3"`` -> (name, bits)."""
    name = method.lower()
    if name in ("r2q", "onebit"):
        return name, 2 if name == "r2q" else 1
    if name == "rtn":
        return "rtn", 2
    if name.startswith("rtn-k") and name[5:].isdigit():
        return "rtn", int(name[5:])
    raise ValueError(f"unknown method {method!r}")


def quantize_with(method: str, m, scheme=GroupScheme()):
    """Quantize ``m`` and return ``(tensor, dequantized matrix)``."""
    name, k = parse_method(method)
    scheme = as_scheme(scheme)
    if name == "r2q":
        t = r2q.quantize(m, scheme)
        return t, r2q.dequantize(t)
    if name == "onebit":
        t = binarize_matrix(m, scheme)
        return t, dequantize_onebit(t)
    t = rtn.quantize_rtn(m, scheme, k)
    return t, rtn.dequantize_rtn(t)


def fake_quantize(method: str, m, scheme=GroupScheme()) -> np.ndarray:
    return quantize_with(method, m, scheme)[1]


# -- error -----------------------------------------------------------------


@dataclass
class ErrorReport:
    per_layer_mse: list[tuple[str, float]]
    method: str = ""
    scheme: str = ""

    @property
    def mean(self) -> float:
        if not self.per_layer_mse:
            return 0.0
        return float(np.mean([e for _, e in self.per_layer_mse]))


def mse(w, w_hat) -> float:
    w = as_matrix(w)
    w_hat = as_matrix(w_hat)
    if w.shape != w_hat.shape:
        raise ShapeMismatch(f"{w.shape} vs {w_hat.shape}")
    return float(np.mean((w - w_hat) ** 2))


def row_mse(w, w_hat) -> np.ndarray:
    """Per-output-channel MSE."""
    w = as_matrix(w)
    w_hat = as_matrix(w_hat)
    if w.shape != w_hat.shape:
        raise ShapeMismatch(f"{w.shape} vs {w_hat.shape}")
    return np.mean((w - w_hat) ** 2, axis=1)


def layer_mse(
    originals: Sequence, quantized: Sequence, *, layer_ids=None, method: str = "", scheme: str = ""
) -> ErrorReport:
    """Mean over layers of each layer's mean squared weight error."""
    if len(originals) != len(quantized):
        raise ShapeMismatch(f"{len(originals)} original layers vs {len(quantized)} quantized")
    ids = list(layer_ids) if layer_ids is not None else [str(i) for i in range(len(originals))]
    per_layer = [(lid, mse(w, wq)) for lid, w, wq in zip(ids, originals, quantized)]
    return ErrorReport(per_layer, method, scheme)


# -- occupancy -------------------------------------------------------------


@dataclass
class OccupancyHistogram:
    counts: np.ndarray  # (groups, levels)
    group_size: int

    @property
    def num_levels(self) -> int:
        return self.counts.shape[1]

    def levels_used(self) -> np.ndarray:
        return np.count_nonzero(self.counts, axis=1)

    def max_share(self) -> np.ndarray:
        """Fraction of each group's weights sitting on its busiest level."""
        return self.counts.max(axis=1) / self.group_size

    def digest(self) -> dict[str, float]:
        return {
            "levels_used": float(self.levels_used().mean()),
            "max_share": float(self.max_share().mean()),
        }


def occupancy(t) -> OccupancyHistogram:
    """Count the weights of each group per level.

    R2Q levels follow :func:`r2q.codebook` order; RTN levels are the integer
    codes from ``q_min`` upward; a lone binary kernel has levels (-a, +a).
    """
    if isinstance(t, BinaryKernel):
        idx, nlev, g = (t.signs() > 0).astype(np.int64), 2, t.group_size
    elif isinstance(t, r2q.R2QTensor):
        idx, nlev, g = r2q.level_indices(t), 4, t.kernel1.group_size
    elif isinstance(t, rtn.RTNTensor):
        idx, nlev, g = rtn.levels(t), 2**t.k, t.group_size
    else:
        raise TypeError(f"cannot compute occupancy of {type(t).__name__}")
    groups = idx.reshape(-1, g)
    counts = np.stack([(groups == lev).sum(axis=1) for lev in range(nlev)], axis=1)
    return OccupancyHistogram(counts, g)


# -- storage ---------------------------------------------------------------


def compression_ratio(shape, scheme, method: str = "r2q", k: int = 2) -> float:
    """Quantized footprint over the 16-bit footprint.

    R2Q: 2 bits per weight plus two 32-bit scales per group.
    RTN: k bits per weight plus a 32-bit scale and 32-bit zero-point per group.
    """
    rows, cols = shape
    n = rows * cols
    groups = as_scheme(scheme).num_groups(rows, cols)
    name = method.lower()
    if name == "r2q":
        bits = 2 * n + 2 * SCALE_BITS * groups
    elif name == "onebit":
        bits = n + SCALE_BITS * groups
    elif name.startswith("rtn"):
        if name != "rtn":
            k = parse_method(name)[1]
        bits = k * n + (SCALE_BITS + ZERO_POINT_BITS) * groups
    else:
        raise ValueError(f"unknown method {method!r}")
    return bits / (BASELINE_BITS * n)


# -- comparison ------------------------------------------------------------


@dataclass
class CompareRow:
    method: str
    scheme: str
    mse: float
    levels_used: float
    max_share: float
    cr: float
    stability_delta: float = float("nan")
    per_channel_mse: np.ndarray = field(default=None, repr=False)


def compare(m, schemes: Iterable, methods: Iterable[str]) -> list[CompareRow]:
    """One row per (method, scheme).

    ``stability_delta`` is the coarsest-minus-finest scheme MSE for the
    row's method; it is NaN when only one scheme is given.
    """
    m = as_matrix(m)
    schemes = [as_scheme(s) for s in schemes]
    rows = []
    for method in methods:
        mine = []
        for s in schemes:
            t, w_hat = quantize_with(method, m, s)
            occ = occupancy(t).digest()
            per_ch = row_mse(m, w_hat)
            mine.append(CompareRow(
                method, str(s), float(per_ch.mean()), occ["levels_used"], occ["max_share"],
                compression_ratio(m.shape, s, method), per_channel_mse=per_ch,
            ))
        if len(schemes) > 1:
            sizes = [s.effective_size(m.shape[1]) for s in schemes]
            coarse = mine[int(np.argmax(sizes))].mse
            fine = mine[int(np.argmin(sizes))].mse
            for row in mine:
                row.stability_delta = coarse - fine
        rows.extend(mine)
    return rows


REPORT_COLUMNS = ("method", "scheme", "mse", "levels_used", "max_share", "cr", "stability_delta")


def report_csv(rows: Sequence[CompareRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    for r in rows:
        writer.writerow([r.method, r.scheme] + [repr(float(getattr(r, c))) for c in REPORT_COLUMNS[2:]])
    return buf.getvalue()


def report_long_csv(rows: Sequence[CompareRow], layer: str = "0") -> str:
    """Plot-ready long format: method, scheme, layer, metric, value."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("method", "scheme", "layer", "metric", "value"))
    for r in rows:
        for metric in REPORT_COLUMNS[2:]:
            writer.writerow((r.method, r.scheme, layer, metric, repr(float(getattr(r, metric)))))
    return buf.getvalue()


def report_text(rows: Sequence[CompareRow]) -> str:
    header = f"{'method':<8} {'scheme':<12} {'mse':>12} {'levels':>7} {'max_share':>9} {'cr':>8} {'delta':>12}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r.method:<8} {r.scheme:<12} {r.mse:>12.6g} {r.levels_used:>7.3f} "
            f"{r.max_share:>9.3f} {r.cr:>8.4f} {r.stability_delta:>12.6g}"
        )
    return "\n".join(lines)


# -- synthetic weights -----------------------------------------------------

DISTRIBUTIONS = ("gaussian", "laplace", "student-t", "uniform")


def sample_weights(dist: str, shape, *, seed=None, rng=None, scale: float = 1.0, df: float = 3.0) -> np.ndarray:
    """Synthetic weight matrix; ``scale`` is the std for gaussian, the
    diversity for laplace, the half-width for uniform."""
    if rng is None:
        rng = np.random.default_rng(seed)
    if dist == "gaussian":
        return rng.normal(0.0, scale, shape)
    if dist == "laplace":
        return rng.laplace(0.0, scale, shape)
    if dist == "student-t":
        return scale * rng.standard_t(df, shape)
    if dist == "uniform":
        return rng.uniform(-scale, scale, shape)
    raise ValueError(f"unknown distribution {dist!r}; choose from {DISTRIBUTIONS}")
