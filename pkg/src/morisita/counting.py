"""Grid cell counting and the multipoint Morisita index.

Cells are never materialized: a point's cell is the tuple of its per-axis
indices, packed into int64 keys and aggregated by sorting. Only the
occupied cells (at most N) are ever stored.
"""
from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

logger = logging.getLogger(__name__)

_KEY_LIMIT = 2**62
_CHUNK = 4096


@dataclass(frozen=True)
class ScaleSet:
    """Strictly increasing grid resolutions (cells per axis)."""

    values: tuple[int, ...]

    def __post_init__(self):
        vals = tuple(int(v) for v in self.values)
        if not vals:
            raise ValueError("a ScaleSet needs at least one scale")
        if vals[0] < 1:
            raise ValueError("scales must be >= 1")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError(f"scales must be strictly increasing: {vals}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def parse(cls, text: str) -> "ScaleSet":
        return cls(tuple(int(t) for t in text.split(",") if t.strip()))

    @classmethod
    def geometric(cls, upper: int, ratio: int = 2) -> "ScaleSet":
        vals, v = [], 1
        while v <= upper:
            vals.append(v)
            v *= ratio
        return cls(tuple(vals))

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class CellOccupancy:
    scale: int
    counts: np.ndarray  # points per occupied cell
    n_points: int
    dim: int

    @property
    def n_cells(self) -> int:
        return len(self.counts)

    def histogram(self) -> dict[int, int]:
        """Map from points-per-cell to the number of cells holding that many."""
        vals, mult = np.unique(self.counts, return_counts=True)
        return dict(zip(vals.tolist(), mult.tolist()))


def cell_indices(x: np.ndarray, scale: int) -> np.ndarray:
    """Per-axis integer cell index of every point; 1.0 falls in the last cell."""
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    # truncation is floor for the non-negative rescaled values
    idx = (np.asarray(x, dtype=np.float64) * scale).astype(np.int64)
    np.clip(idx, 0, scale - 1, out=idx)
    return idx


def _compress(keys: np.ndarray) -> tuple[np.ndarray, int]:
    uniq, inv = np.unique(keys, return_inverse=True)
    return inv.reshape(-1).astype(np.int64), len(uniq)


def cell_keys(
    idx: np.ndarray,
    scale: int,
    prefix: tuple[np.ndarray, int] | None = None,
    *,
    dense: bool = False,
) -> tuple[np.ndarray, int]:
    """Pack per-axis cell indices into one int64 key per point.

    ``prefix`` is an already packed ``(keys, radix)`` pair for other columns
    at the same scale; the new columns are appended to it. Keys are
    re-labelled densely whenever the next column would overflow int64, so
    any number of columns can be combined. Returns ``(keys, radix)`` where
    every key lies in ``[0, radix)``.
    """
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim == 1:
        idx = idx[:, None]
    cols = np.ascontiguousarray(idx.T)
    if prefix is None:
        keys, radix = cols[0].copy(), scale
        cols = cols[1:]
    else:
        keys, radix = prefix
    for col in cols:
        if radix * scale >= _KEY_LIMIT:
            keys, radix = _compress(keys)
        keys = keys * scale
        keys += col
        radix *= scale
    if dense:
        keys, radix = _compress(keys)
    return keys, radix


def grid_keys(x: np.ndarray, scale: int) -> tuple[np.ndarray, int]:
    """Packed cell keys of every row of ``x`` at one scale.

    Rows are processed in cache-sized blocks so the cost stays linear in N.
    Falls back to :func:`cell_keys` when ``scale**E`` does not fit in int64.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n, dim = x.shape
    if scale < 1:
        raise ValueError(f"scale must be >= 1, got {scale}")
    if scale**dim >= _KEY_LIMIT:
        return cell_keys(cell_indices(x, scale), scale)
    powers = scale ** np.arange(dim - 1, -1, -1, dtype=np.int64)
    keys = np.empty(n, dtype=np.int64)
    for start in range(0, n, _CHUNK):
        idx = (x[start:start + _CHUNK] * scale).astype(np.int64)
        np.minimum(idx, scale - 1, out=idx)
        np.dot(idx, powers, out=keys[start:start + _CHUNK])
    return keys, scale**dim


def counts_from_keys(keys: np.ndarray, radix: int | None = None) -> np.ndarray:
    """Points per occupied cell, in increasing key order."""
    if radix is not None and radix <= 4 * len(keys):
        c = np.bincount(keys, minlength=radix)
        return c[c > 0]
    s = np.sort(keys)
    edges = np.flatnonzero(np.diff(s)) + 1
    bounds = np.concatenate(([0], edges, [len(s)]))
    return np.diff(bounds)


def count_cells(m, scale: int) -> CellOccupancy:
    """Occupancy of the ``scale``-per-axis grid over rescaled data ``m``.

    ``m`` is a RescaledMatrix or a bare (N, E) array with values in [0, 1].
    """
    x = np.asarray(getattr(m, "values", m), dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    keys, radix = grid_keys(x, scale)
    return CellOccupancy(int(scale), counts_from_keys(keys, radix), x.shape[0], x.shape[1])


def falling_factorial_sum(counts: Iterable[int], m_order: int) -> int:
    """Exact sum over cells of n(n-1)...(n-m+1)."""
    hist = Counter(int(c) for c in np.asarray(counts).tolist())
    return sum(mult * math.perm(c, m_order) for c, mult in hist.items())


def log_morisita(counts, n_points: int, dim: int, scale: int, m_order: int = 2):
    """Natural-log multipoint Morisita index and a validity flag.

    The cell count Q = scale**dim only enters through dim*log(scale), so the
    value stays finite for any dimension. When no cell holds ``m_order``
    points the index is zero and ``(nan, False)`` is returned.
    """
    if m_order < 2:
        raise ValueError("m_order must be >= 2")
    if n_points < m_order:
        raise ValueError(f"need at least {m_order} points, got {n_points}")
    if m_order == 2:
        c = np.asarray(counts, dtype=np.int64)
        numerator = int(np.dot(c, c - 1))
    else:
        numerator = falling_factorial_sum(counts, m_order)
    if numerator == 0:
        return math.nan, False
    log_q = dim * math.log(scale)
    value = (m_order - 1) * log_q + math.log(numerator) - math.log(math.perm(n_points, m_order))
    return value, True


def morisita_index(occ: CellOccupancy, m_order: int = 2):
    """``(log I, valid)`` for an occupancy; see :func:`log_morisita`."""
    return log_morisita(occ.counts, occ.n_points, occ.dim, occ.scale, m_order)


def same_cell_pairs(x: np.ndarray, scale: int) -> int:
    """Number of unordered point pairs sharing a cell."""
    keys, radix = grid_keys(x, scale)
    c = counts_from_keys(keys, radix)
    return int(np.dot(c, c - 1)) // 2


def max_valid_scale(m, cap: int = 4096, min_pairs: int = 1) -> int:
    """Largest scale in 1, 2, 4, ..., cap with at least ``min_pairs`` same-cell pairs.

    With the default ``min_pairs=1`` this is the largest scale at which some
    cell still holds two points. Returns ``cap`` (and logs a note) when the
    points never separate, e.g. with duplicated rows. Successive powers of
    two give nested partitions, so the pair count never increases along the
    scan and it stops at the first failing scale.
    """
    x = np.asarray(getattr(m, "values", m), dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise ValueError("need at least 2 points")
    if min_pairs < 1:
        raise ValueError("min_pairs must be >= 1")
    candidates = [s for s in ScaleSet.geometric(cap).values if s > 1]
    if cap > 1 and candidates[-1:] != [cap]:
        candidates.append(cap)
    best = 1
    for scale in candidates:
        if same_cell_pairs(x, scale) < min_pairs:
            return best
        best = scale
    if candidates:
        logger.warning("max_valid_scale: cap %d reached; points never separate", cap)
    return best


def write_occupancy_csv(path, occupancies: Iterable[CellOccupancy]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scale", "cell_count", "multiplicity"])
        for occ in occupancies:
            for count, mult in sorted(occ.histogram().items()):
                w.writerow([occ.scale, count, mult])
