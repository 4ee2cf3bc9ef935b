"""CSV ingestion and seeded train/test splitting."""
from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

__all__ = ["TabularDataset", "load_csv", "split"]

MISSING_POLICIES = ("drop", "error")


@dataclass(frozen=True, eq=False)
class TabularDataset:
    name: str
    X: np.ndarray
    y: np.ndarray
    feature_names: tuple
    rows_dropped: int = 0
    source_digest: str = ""

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[0] != self.y.size:
            raise ValueError("X must be (n, d) with one target per row")
        if self.X.shape[1] < 1:
            raise ValueError("dataset needs at least one feature")

    @property
    def n(self) -> int:
        return self.y.size

    def subset(self, idx, suffix: str) -> "TabularDataset":
        return replace(self, name=f"{self.name}:{suffix}", X=self.X[idx], y=self.y[idx])


def _parse(cell: str) -> float:
    cell = cell.strip()
    if not cell:
        return math.nan
    try:
        return float(cell)
    except ValueError:
        return math.nan


def load_csv(path, target_column: str, missing_policy: str = "drop",
             delimiter: str = ",", feature_columns: Optional[Sequence[str]] = None,
             name: Optional[str] = None) -> TabularDataset:
    """Load a numeric table with a header row.

    Cells that are empty or do not parse as floats (e.g. ``?``) are
    missing.  With ``missing_policy="drop"`` incomplete rows are removed
    and counted; with ``"error"`` they raise.  ``feature_columns`` selects
    and orders features; by default every non-target column is used.
    """
    if missing_policy not in MISSING_POLICIES:
        raise ValueError(f"missing_policy must be one of {MISSING_POLICIES}")
    path = Path(path)
    raw = path.read_bytes()
    digest = hashlib.sha256(raw).hexdigest()
    reader = csv.reader(io.StringIO(raw.decode("utf-8-sig")), delimiter=delimiter)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ValueError(f"{path}: empty file") from None
    if target_column not in header:
        raise ValueError(f"{path}: target column {target_column!r} not found")
    if feature_columns is None:
        feature_columns = [h for h in header if h != target_column]
    missing_cols = [c for c in feature_columns if c not in header]
    if missing_cols:
        raise ValueError(f"{path}: feature columns not found: {missing_cols}")
    cols = [header.index(c) for c in feature_columns] + [header.index(target_column)]

    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if not rec or all(not c.strip() for c in rec):
            continue
        if len(rec) != len(header):
            raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
        rows.append([_parse(rec[j]) for j in cols])
    table = np.array(rows, dtype=float).reshape(len(rows), len(cols))

    if table.shape[0] and np.all(np.isnan(table[:, -1])):
        raise ValueError(f"{path}: target column {target_column!r} has no numeric values")
    for j, cname in enumerate(feature_columns):
        if table.shape[0] and np.all(np.isnan(table[:, j])):
            raise ValueError(f"{path}: column {cname!r} has no numeric values")

    complete = ~np.any(np.isnan(table), axis=1)
    dropped = int((~complete).sum())
    if dropped and missing_policy == "error":
        raise ValueError(f"{path}: {dropped} rows with missing values")
    table = table[complete]
    if table.shape[0] < 2:
        raise ValueError(f"{path}: fewer than 2 complete rows")
    return TabularDataset(name=name or path.stem, X=table[:, :-1], y=table[:, -1],
                          feature_names=tuple(feature_columns), rows_dropped=dropped,
                          source_digest=digest)


def train_size(n: int, train_fraction: float) -> int:
    return int(math.floor(n * train_fraction + 1e-9))


def split(dataset: TabularDataset, train_fraction: float, seed: int):
    """Random permutation split; train gets ``floor(n * train_fraction)`` rows."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    n = dataset.n
    n_train = train_size(n, train_fraction)
    if n_train < 2 or n - n_train < 1:
        raise ValueError(f"split of {n} rows at {train_fraction} leaves train={n_train}, "
                         f"test={n - n_train}")
    perm = np.random.default_rng(seed).permutation(n)
    return dataset.subset(perm[:n_train], "train"), dataset.subset(perm[n_train:], "test")
