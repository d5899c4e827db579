"""Dense matrices, group partitioning and the R2QM matrix file format.

A "matrix" throughout the package is a 2-D C-contiguous ``float64`` numpy
array.  Groups are contiguous runs inside a single row; they never span
rows.  ``PER_CHANNEL`` (-1) means one group per row.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ParseError, SchemeMismatch, ShapeMismatch

PER_CHANNEL = -1

MATRIX_MAGIC = b"R2QM"
MATRIX_VERSION = 1
_MATRIX_HEADER = struct.Struct("<4sIII")


def as_matrix(data, *, copy: bool = False) -> np.ndarray:
    """Validate ``data`` as a finite 2-D matrix and return it as float64."""
    m = np.array(data, dtype=np.float64, copy=copy or None, order="C")
    if m.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D matrix, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains NaN or Inf")
    return m


@dataclass(frozen=True)
class GroupScheme:
    group_size: int = PER_CHANNEL

    def __post_init__(self):
        if self.group_size != PER_CHANNEL and self.group_size < 1:
            raise SchemeMismatch(f"group_size must be positive or -1, got {self.group_size}")

    @classmethod
    def per_channel(cls) -> "GroupScheme":
        return cls(PER_CHANNEL)

    @property
    def is_per_channel(self) -> bool:
        return self.group_size == PER_CHANNEL

    def effective_size(self, cols: int) -> int:
        """Group length for a row of ``cols`` values."""
        if self.is_per_channel:
            return cols
        if cols % self.group_size:
            raise SchemeMismatch(f"group_size {self.group_size} does not divide {cols} columns")
        return self.group_size

    def groups_per_row(self, cols: int) -> int:
        return cols // self.effective_size(cols)

    def num_groups(self, rows: int, cols: int) -> int:
        return rows * self.groups_per_row(cols)

    def __str__(self) -> str:
        return "per-channel" if self.is_per_channel else f"g{self.group_size}"


def as_scheme(s) -> GroupScheme:
    if isinstance(s, GroupScheme):
        return s
    return GroupScheme(int(s))


def partition(m, s) -> np.ndarray:
    """Split ``m`` into groups, one per row of the returned ``(N, G)`` array.

    Groups are ordered row-major: all groups of row 0 first, left to right.
    """
    m = as_matrix(m)
    s = as_scheme(s)
    g = s.effective_size(m.shape[1])
    return m.reshape(-1, g).copy()


def reassemble(groups, rows: int, cols: int, s) -> np.ndarray:
    """Inverse of :func:`partition`."""
    s = as_scheme(s)
    groups = np.asarray(groups, dtype=np.float64)
    if groups.ndim != 2:
        raise ShapeMismatch("groups must be a 2-D (N, G) array")
    try:
        g = s.effective_size(cols)
    except SchemeMismatch as exc:
        raise ShapeMismatch(str(exc)) from exc
    expected = (rows * (cols // g), g)
    if groups.shape != expected:
        raise ShapeMismatch(f"expected groups of shape {expected}, got {groups.shape}")
    return groups.reshape(rows, cols).copy()


def group_view(m: np.ndarray, s: GroupScheme) -> np.ndarray:
    """Reshape without copying; ``m`` must already be validated."""
    return m.reshape(-1, s.effective_size(m.shape[1]))


# -- file formats ----------------------------------------------------------


def matrix_to_bytes(m) -> bytes:
    m = as_matrix(m)
    rows, cols = m.shape
    header = _MATRIX_HEADER.pack(MATRIX_MAGIC, MATRIX_VERSION, rows, cols)
    return header + m.astype("<f4").tobytes()


def matrix_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < _MATRIX_HEADER.size:
        raise FormatError("truncated matrix header")
    magic, version, rows, cols = _MATRIX_HEADER.unpack_from(buf)
    if magic != MATRIX_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MATRIX_MAGIC!r}")
    if version != MATRIX_VERSION:
        raise FormatError(f"unsupported matrix version {version}")
    payload = buf[_MATRIX_HEADER.size:]
    if len(payload) != 4 * rows * cols:
        raise FormatError(f"payload is {len(payload)} bytes, expected {4 * rows * cols}")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return data.reshape(rows, cols)


def save_matrix(path, m) -> None:
    Path(path).write_bytes(matrix_to_bytes(m))


def load_matrix_text(path) -> np.ndarray:
    """One row per line, whitespace separated decimals.  Blank lines are skipped."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rows.append([float(tok) for tok in line.split()])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path}: no data")
    if len({len(r) for r in rows}) != 1:
        raise ParseError(f"{path}: ragged rows")
    try:
        return as_matrix(rows)
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def load_matrix(path) -> np.ndarray:
    """Load a matrix, binary if it starts with the R2QM magic, text otherwise."""
    raw = Path(path).read_bytes()
    if raw[:4] == MATRIX_MAGIC:
        return matrix_from_bytes(raw)
    return load_matrix_text(path)

