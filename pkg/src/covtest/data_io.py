"""Input data loading, validation, and the canonical dataset record.

A :class:`Dataset` bundles a response vector ``y``, an ``n x p`` matrix ``S``
of parametric covariates (no intercept column), a scalar smooth covariate
``t``, and optional integer cluster labels. All tests in the package consume
this record.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "Dataset",
    "TRange",
    "DataSummary",
    "ColumnMap",
    "load_csv",
    "save_csv",
    "summarize",
]


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _normalize_cluster(labels) -> np.ndarray:
    """Remap arbitrary labels to 0..m-1 in first-appearance order."""
    seen: dict = {}
    out = np.empty(len(labels), dtype=np.int64)
    for i, lab in enumerate(labels):
        if lab not in seen:
            seen[lab] = len(seen)
        out[i] = seen[lab]
    return out


@dataclass(frozen=True)
class Dataset:
    """Immutable input record for all tests.

    Invariants enforced at construction: equal lengths, finite entries,
    cluster labels (if any) remapped to a contiguous 0..m-1 range in
    first-appearance order. Missing values are rejected, never imputed.
    """

    y: np.ndarray
    S: np.ndarray
    t: np.ndarray
    cluster: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        t = np.asarray(self.t, dtype=float)
        S = np.asarray(self.S, dtype=float)
        if S.ndim == 1:
            S = S.reshape(len(S), -1) if S.size else S.reshape(len(y), 0)
        if y.ndim != 1 or t.ndim != 1 or S.ndim != 2:
            raise DataError("y and t must be vectors and S a 2-d matrix")
        n = y.shape[0]
        if n < 1:
            raise DataError("dataset has zero rows")
        if t.shape[0] != n or S.shape[0] != n:
            raise DataError(
                f"length mismatch: y has {n} rows, t has {t.shape[0]}, S has {S.shape[0]}"
            )
        for name, arr in (("y", y), ("t", t), ("S", S)):
            if not np.all(np.isfinite(arr)):
                bad = np.argwhere(~np.isfinite(arr))[0]
                raise DataError(f"non-finite value in {name} at row {int(bad[0]) + 1}")
        cluster = self.cluster
        if cluster is not None:
            cluster = np.asarray(cluster)
            if cluster.shape[0] != n:
                raise DataError(f"cluster has {cluster.shape[0]} rows, expected {n}")
            cluster = _readonly(_normalize_cluster(cluster))
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "t", _readonly(t))
        object.__setattr__(self, "S", _readonly(S))
        object.__setattr__(self, "cluster", cluster)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.S.shape[1]

    @property
    def n_units(self) -> int:
        """Number of independent units: clusters if present, rows otherwise."""
        if self.cluster is None:
            return self.n
        return int(self.cluster.max()) + 1

    def with_rescaled_t(self) -> "Dataset":
        """Affinely map t onto [0, 1]. Knot and kernel constructions are
        range-sensitive, so this is opt-in rather than automatic."""
        lo, hi = float(self.t.min()), float(self.t.max())
        if hi == lo:
            raise DataError("cannot rescale constant t")
        return Dataset(self.y, self.S, (self.t - lo) / (hi - lo), self.cluster)


@dataclass(frozen=True)
class TRange:
    t_min: float
    t_max: float


@dataclass(frozen=True)
class DataSummary:
    n: int
    p: int
    n_distinct_t: int
    t_range: TRange
    n_clusters: int | None = None


@dataclass(frozen=True)
class ColumnMap:
    """Names of the CSV columns holding each model variable.

    ``s`` may be None, in which case every column not otherwise mapped is
    taken as a parametric covariate, in header order.
    """

    y: str = "y"
    t: str = "t"
    s: tuple[str, ...] | None = None
    cluster: str | None = None


def load_csv(path: str | Path, columns: ColumnMap = ColumnMap()) -> Dataset:
    """Load a dataset from a UTF-8 CSV file with a header row.

    Comma delimiter, '.' decimal separator. Row order is preserved.
    Raises ConfigError for missing columns and DataError for unusable cells,
    naming the offending row and column.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"input file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        rows = [row for row in reader if row]

    def col_index(name: str) -> int:
        try:
            return header.index(name)
        except ValueError:
            raise ConfigError(f"{path}: column {name!r} not found in header {header}") from None

    iy = col_index(columns.y)
    it = col_index(columns.t)
    icl = col_index(columns.cluster) if columns.cluster is not None else None
    if columns.s is not None:
        i_s = [col_index(name) for name in columns.s]
    else:
        taken = {iy, it} | ({icl} if icl is not None else set())
        i_s = [i for i in range(len(header)) if i not in taken]

    if not rows:
        raise DataError(f"{path}: no data rows")

    def parse(row_no: int, row: list[str], idx: int) -> float:
        cell = row[idx].strip()
        try:
            v = float(cell)
        except ValueError:
            raise DataError(
                f"{path}: non-numeric value {cell!r} in column {header[idx]!r} at data row {row_no}"
            ) from None
        if not np.isfinite(v):
            raise DataError(
                f"{path}: non-finite value {cell!r} in column {header[idx]!r} at data row {row_no}"
            )
        return v

    n = len(rows)
    y = np.empty(n)
    t = np.empty(n)
    S = np.empty((n, len(i_s)))
    cluster = [] if icl is not None else None
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise DataError(f"{path}: data row {r} has {len(row)} cells, expected {len(header)}")
        y[r - 1] = parse(r, row, iy)
        t[r - 1] = parse(r, row, it)
        for j, idx in enumerate(i_s):
            S[r - 1, j] = parse(r, row, idx)
        if cluster is not None:
            cluster.append(row[icl].strip())
    return Dataset(y=y, S=S, t=t, cluster=cluster)


def save_csv(dataset: Dataset, path: str | Path, columns: ColumnMap = ColumnMap()) -> None:
    """Write a dataset back to CSV; finite doubles round-trip bit-exactly."""
    s_names = columns.s if columns.s is not None else tuple(f"s{k + 1}" for k in range(dataset.p))
    if len(s_names) != dataset.p:
        raise ConfigError(f"{len(s_names)} covariate names for {dataset.p} covariate columns")
    header = [columns.y, columns.t, *s_names]
    if dataset.cluster is not None:
        header.append(columns.cluster or "cluster")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.n):
            row = [repr(float(dataset.y[i])), repr(float(dataset.t[i]))]
            row += [repr(float(v)) for v in dataset.S[i]]
            if dataset.cluster is not None:
                row.append(str(int(dataset.cluster[i])))
            writer.writerow(row)


def summarize(dataset: Dataset) -> DataSummary:
    """Basic counts and the observed range of the smooth covariate."""
    return DataSummary(
        n=dataset.n,
        p=dataset.p,
        n_distinct_t=int(np.unique(dataset.t).size),
        t_range=TRange(float(dataset.t.min()), float(dataset.t.max())),
        n_clusters=None if dataset.cluster is None else dataset.n_units,
    )
