"""Tabular data loading, rescaling and synthetic benchmark generation."""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

BUTTERFLY_COLUMNS = ("F1", "F2", "F3", "F4", "F5", "F6", "F7", "F8")
BUTTERFLY_NOISY = ("F3", "F4", "F5", "F7", "F8")

# stream tags for per-purpose RNG derivation
_STREAM_BASE = 0
_STREAM_NOISE = 1
_STREAM_SHUFFLE = 2


class DataError(ValueError):
    """Raised when tabular input fails validation."""


@dataclass(frozen=True)
class FeatureMatrix:
    """An N x E table of finite reals with unique column names."""

    names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DataError(f"expected a 2-D array, got shape {values.shape}")
        names = tuple(str(n) for n in self.names)
        if len(names) != values.shape[1]:
            raise DataError(f"{len(names)} names for {values.shape[1]} columns")
        if values.shape[0] < 2:
            raise DataError(f"at least 2 rows are required, got {values.shape[0]}")
        if any(not n for n in names):
            raise DataError("column names must be non-empty")
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise DataError(f"duplicate column names: {', '.join(dupes)}")
        if not np.all(np.isfinite(values)):
            row, col = np.argwhere(~np.isfinite(values))[0]
            raise DataError(f"non-finite value at row {row}, column {names[col]!r}")
        values.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "values", values)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.index_of(name)]

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"no column named {name!r}") from None

    def select(self, names: Sequence[str]) -> "FeatureMatrix":
        idx = [self.index_of(n) for n in names]
        return FeatureMatrix(tuple(names), self.values[:, idx])

    def take_rows(self, rows) -> "FeatureMatrix":
        return FeatureMatrix(self.names, self.values[np.asarray(rows)])


@dataclass(frozen=True)
class RescaledMatrix:
    """A FeatureMatrix whose columns were mapped onto [0, 1]."""

    matrix: FeatureMatrix
    mins: np.ndarray
    maxs: np.ndarray
    degenerate_columns: tuple[str, ...] = field(default=())

    @property
    def names(self) -> tuple[str, ...]:
        return self.matrix.names

    @property
    def values(self) -> np.ndarray:
        return self.matrix.values

    @property
    def n_rows(self) -> int:
        return self.matrix.n_rows

    @property
    def n_cols(self) -> int:
        return self.matrix.n_cols

    def select(self, names: Sequence[str]) -> "RescaledMatrix":
        idx = [self.matrix.index_of(n) for n in names]
        return RescaledMatrix(
            self.matrix.select(names),
            self.mins[idx],
            self.maxs[idx],
            tuple(n for n in self.degenerate_columns if n in names),
        )


@dataclass(frozen=True)
class ButterflyConfig:
    n_points: int
    seed: int = 0
    noise_fraction: float = 0.0
    shuffle_columns: tuple[str, ...] = ()

    def __post_init__(self):
        if self.noise_fraction < 0 or not math.isfinite(self.noise_fraction):
            raise ValueError("noise_fraction must be a finite non-negative real")
        unknown = set(self.shuffle_columns) - set(BUTTERFLY_COLUMNS)
        if unknown:
            raise ValueError(f"unknown butterfly columns: {sorted(unknown)}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "shuffle_columns", tuple(self.shuffle_columns))


def stream_rng(seed: int, *keys: int) -> np.random.Generator:
    """PCG64 generator for the substream identified by ``(seed, *keys)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *keys])))


def derive_seeds(master_seed: int, n: int) -> list[int]:
    """``n`` independent 64-bit seeds derived from ``master_seed``."""
    state = np.random.SeedSequence(master_seed).generate_state(n, dtype=np.uint64)
    return [int(v) for v in state]


def load_table(path, has_header: bool = True, label_column: str | None = None):
    """Read a comma-separated numeric table.

    Returns ``(FeatureMatrix, labels)``; ``labels`` is ``None`` unless
    ``label_column`` is given. Label values are kept as strings. Without a
    header, columns are named ``X1..XE`` and a label column may be given as
    its 1-based position.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    if has_header:
        header = [h.strip() for h in rows[0]]
        body = rows[1:]
        first_line = 2
    else:
        header = [f"X{i + 1}" for i in range(len(rows[0]))]
        body = rows
        first_line = 1
        if label_column is not None and label_column.isdigit():
            label_column = header[int(label_column) - 1]
    width = len(header)
    if any(not h for h in header):
        raise DataError(f"{path}: empty column name in header")
    dupes = sorted({h for h in header if header.count(h) > 1})
    if dupes:
        raise DataError(f"{path}: duplicate column names: {', '.join(dupes)}")
    if label_column is not None and label_column not in header:
        raise DataError(f"{path}: label column {label_column!r} not found")
    label_idx = header.index(label_column) if label_column is not None else None
    feature_idx = [i for i in range(width) if i != label_idx]

    values = np.empty((len(body), len(feature_idx)), dtype=np.float64)
    labels = []
    for r, row in enumerate(body):
        line = first_line + r
        if len(row) != width:
            raise DataError(f"{path}: line {line} has {len(row)} fields, expected {width}")
        for out_c, c in enumerate(feature_idx):
            cell = row[c].strip()
            try:
                v = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: cannot parse {cell!r} at line {line}, column {header[c]!r}"
                ) from None
            if not math.isfinite(v):
                raise DataError(f"{path}: non-finite value {cell!r} at line {line}, column {header[c]!r}")
            values[r, out_c] = v
        if label_idx is not None:
            labels.append(row[label_idx].strip())
    matrix = FeatureMatrix(tuple(header[i] for i in feature_idx), values)
    return matrix, (np.asarray(labels) if label_idx is not None else None)


def write_table(path, m: FeatureMatrix, labels=None, label_name: str = "label") -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(m.names) + ([label_name] if labels is not None else []))
        for i, row in enumerate(m.values):
            cells = [repr(float(v)) for v in row]
            if labels is not None:
                cells.append(str(labels[i]))
            w.writerow(cells)


def rescale_unit_interval(m: FeatureMatrix) -> RescaledMatrix:
    """Min-max rescale every column onto [0, 1]; constant columns become zeros."""
    x = m.values
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    span = hi - lo
    degenerate = span == 0
    safe = np.where(degenerate, 1.0, span)
    out = (x - lo) / safe
    out[:, degenerate] = 0.0
    names = tuple(n for n, d in zip(m.names, degenerate) if d)
    if names:
        logger.info("constant columns rescaled to zero: %s", ", ".join(names))
    return RescaledMatrix(FeatureMatrix(m.names, out), lo, hi, names)


def apply_scaling(m, mins: np.ndarray, maxs: np.ndarray) -> np.ndarray:
    """Rescale with given bounds (e.g. training min/max) and clamp to [0, 1].

    ``m`` is a FeatureMatrix or a bare 2-D array.
    """
    x = np.asarray(getattr(m, "values", m), dtype=np.float64)
    span = maxs - mins
    safe = np.where(span == 0, 1.0, span)
    out = (x - mins) / safe
    out[:, span == 0] = 0.0
    return np.clip(out, 0.0, 1.0)


def _open_uniform(rng: np.random.Generator, n: int, lo: float, hi: float) -> np.ndarray:
    out = rng.uniform(lo, hi, size=n)
    bad = out <= lo
    while bad.any():
        out[bad] = rng.uniform(lo, hi, size=int(bad.sum()))
        bad = out <= lo
    return out


def gen_butterfly(cfg: ButterflyConfig, *, return_clean: bool = False):
    """Sample the eight-feature butterfly benchmark.

    F1, F2 and F6 are uniform on (-5, 5); the five remaining features are
    deterministic functions of them. Gaussian noise scaled by the sample sd
    of each clean column is added to F3, F4, F5, F7, F8, and the columns in
    ``cfg.shuffle_columns`` are permuted afterwards.

    With ``return_clean=True`` returns ``(noisy_or_shuffled, clean)``.
    """
    if cfg.n_points < 2:
        raise ValueError("n_points must be at least 2")
    rng = stream_rng(cfg.seed, _STREAM_BASE)
    n = cfg.n_points
    f1 = _open_uniform(rng, n, -5.0, 5.0)
    f2 = _open_uniform(rng, n, -5.0, 5.0)
    f6 = _open_uniform(rng, n, -5.0, 5.0)
    f7 = np.log10(f6 + 5.0)
    cols = {
        "F1": f1,
        "F2": f2,
        "F3": np.log10(f1 + 5.0),
        "F4": f1**2 - f2**2,
        "F5": f1**4 - f2**4,
        "F6": f6,
        "F7": f7,
        "F8": f6 + f7,
    }
    clean = np.column_stack([cols[c] for c in BUTTERFLY_COLUMNS])
    out = clean.copy()
    if cfg.noise_fraction > 0:
        for name in BUTTERFLY_NOISY:
            j = BUTTERFLY_COLUMNS.index(name)
            sd = clean[:, j].std(ddof=1)
            noise_rng = stream_rng(cfg.seed, _STREAM_NOISE, j)
            out[:, j] += noise_rng.normal(0.0, cfg.noise_fraction * sd, size=n)
    for name in cfg.shuffle_columns:
        j = BUTTERFLY_COLUMNS.index(name)
        out[:, j] = stream_rng(cfg.seed, _STREAM_SHUFFLE, j).permutation(out[:, j])
    m = FeatureMatrix(BUTTERFLY_COLUMNS, out)
    if return_clean:
        return m, FeatureMatrix(BUTTERFLY_COLUMNS, clean)
    return m


def split_holdout(m: FeatureMatrix, labels, test_fraction: float = 0.2, seed: int = 0):
    """Random train/test split; the test side has ``floor(f*N + 0.5)`` rows."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    labels = np.asarray(labels)
    n = m.n_rows
    if labels.shape[0] != n:
        raise ValueError(f"{labels.shape[0]} labels for {n} rows")
    n_test = int(math.floor(test_fraction * n + 0.5))
    n_test = min(max(n_test, 1), n - 1)
    perm = stream_rng(seed).permutation(n)
    test = np.sort(perm[:n_test])
    train = np.sort(perm[n_test:])
    missing = set(np.unique(labels)) - set(np.unique(labels[train]))
    if missing:
        warnings.warn(f"classes absent from the training side: {sorted(missing)}", stacklevel=2)
    return train, test
