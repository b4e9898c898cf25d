"""Dataset container, fold assignment and CSV ingestion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError, ValidationError
from .rng import substream

__all__ = [
    "Dataset",
    "FoldAssignment",
    "load_dataset",
    "write_dataset",
    "make_folds",
]

CONTINUOUS = "continuous"
BINARY = "binary"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Response ``y``, internal features ``X`` (n x p) and external predictors ``Z`` (n x e).

    Arrays are copied and made read-only on construction.
    """

    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray | None = None
    outcome_kind: str | None = None
    x_names: tuple[str, ...] | None = None
    z_names: tuple[str, ...] | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        X = np.asarray(self.X, dtype=float)
        if y.ndim != 1:
            raise ValidationError(f"y must be one-dimensional, got shape {y.shape}")
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise ValidationError(f"X must be a matrix, got shape {X.shape}")
        n = y.shape[0]
        Z = np.empty((n, 0)) if self.Z is None else np.asarray(self.Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        if n < 2:
            raise ValidationError(f"need at least 2 observations, got {n}")
        if X.shape[0] != n or Z.shape[0] != n:
            raise ValidationError(
                f"row counts differ: y has {n}, X has {X.shape[0]}, Z has {Z.shape[0]}"
            )
        for name, a in (("y", y), ("X", X), ("Z", Z)):
            bad = ~np.isfinite(a)
            if bad.any():
                idx = np.argwhere(bad)[0]
                raise ValidationError(f"non-finite entry in {name} at index {tuple(int(i) for i in idx)}")

        kind = self.outcome_kind
        is01 = bool(np.all((y == 0) | (y == 1)))
        if kind is None:
            kind = BINARY if is01 else CONTINUOUS
        if kind not in (CONTINUOUS, BINARY):
            raise ValidationError(f"outcome_kind must be 'continuous' or 'binary', got {kind!r}")
        if kind == BINARY and not is01:
            raise ValidationError("binary outcome must contain only 0 and 1")

        x_names = self.x_names or tuple(f"x_{j + 1}" for j in range(X.shape[1]))
        z_names = self.z_names or tuple(f"z_{k + 1}" for k in range(Z.shape[1]))
        if len(x_names) != X.shape[1] or len(z_names) != Z.shape[1]:
            raise ValidationError("column name count does not match matrix width")

        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "Z", _frozen(Z))
        object.__setattr__(self, "outcome_kind", kind)
        object.__setattr__(self, "x_names", tuple(x_names))
        object.__setattr__(self, "z_names", tuple(z_names))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def e(self) -> int:
        return self.Z.shape[1]

    @property
    def is_binary(self) -> bool:
        return self.outcome_kind == BINARY

    def require_both_classes(self) -> None:
        if not self.is_binary:
            raise ValidationError("a classifier internal model needs a binary outcome")
        n1 = int(self.y.sum())
        if n1 == 0 or n1 == self.n:
            raise ValidationError("binary outcome has only one class")

    def with_X(self, X: np.ndarray) -> "Dataset":
        return Dataset(self.y, X, self.Z, self.outcome_kind, self.x_names, self.z_names)

    def take(self, rows: np.ndarray) -> "Dataset":
        return Dataset(
            self.y[rows], self.X[rows], self.Z[rows], self.outcome_kind, self.x_names, self.z_names
        )


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    """Fold index per observation; ``fold_of[i]`` is in ``[0, K)``."""

    fold_of: np.ndarray
    K: int
    stratified: bool = field(default=False)

    def __post_init__(self):
        f = np.asarray(self.fold_of)
        if f.ndim != 1 or not np.issubdtype(f.dtype, np.integer):
            raise ValidationError("fold_of must be a 1-d integer vector")
        if self.K < 2:
            raise ValidationError(f"K must be at least 2, got {self.K}")
        if f.size and (f.min() < 0 or f.max() >= self.K):
            raise ValidationError("fold index out of range")
        sizes = np.bincount(f, minlength=self.K)
        if (sizes == 0).any():
            raise ValidationError("every fold must be nonempty")
        f = f.astype(np.int64, copy=True)
        f.setflags(write=False)
        object.__setattr__(self, "fold_of", f)

    @property
    def n(self) -> int:
        return self.fold_of.shape[0]

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.K)

    def test_index(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == k)

    def train_index(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != k)

    def permuted(self, perm: np.ndarray) -> "FoldAssignment":
        """Fold map for a dataset whose rows were reordered as ``rows[perm]``."""
        return FoldAssignment(self.fold_of[perm], self.K, self.stratified)


def make_folds(
    n: int,
    K: int,
    stratify_labels: np.ndarray | None = None,
    seed: int = 0,
    rng: np.random.Generator | None = None,
) -> FoldAssignment:
    """Random balanced fold assignment.

    Observations are shuffled and dealt into ``K`` folds so that fold sizes
    differ by at most one.  With ``stratify_labels`` each class is dealt
    separately (class 0 first, continuing the round-robin position), which
    keeps per-fold class counts within one of proportional allocation.  The
    fold labels are then randomly relabelled so the larger folds are not
    always the low-numbered ones.

    ``rng`` overrides ``seed`` when given.
    """
    if K > n:
        raise ValidationError(f"K={K} exceeds n={n}")
    if K < 2:
        raise ValidationError(f"K must be at least 2, got {K}")
    if rng is None:
        rng = substream(seed, "folds")

    if stratify_labels is None:
        order = rng.permutation(n)
    else:
        labels = np.asarray(stratify_labels)
        if labels.shape != (n,):
            raise ValidationError("stratify_labels must have length n")
        classes = np.unique(labels)
        for c in classes:
            if np.sum(labels == c) < 2:
                raise ValidationError(
                    f"class {c!r} has fewer than 2 members; some training fold would lack it"
                )
        order = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in classes])

    fold_of = np.empty(n, dtype=np.int64)
    fold_of[order] = np.arange(n) % K
    relabel = rng.permutation(K)
    return FoldAssignment(relabel[fold_of], K, stratify_labels is not None)


def _parse_cell(text: str, row: int, column: str) -> float:
    s = text.strip()
    if s == "":
        raise DataFormatError("missing value", row, column)
    try:
        v = float(s)
    except ValueError:
        raise DataFormatError(f"non-numeric value {s!r}", row, column) from None
    if not math.isfinite(v):
        raise DataFormatError(f"non-finite value {s!r}", row, column)
    return v


def load_dataset(path: str | Path, outcome_kind: str | None = None) -> Dataset:
    """Read a dataset from CSV.

    The header must contain exactly one ``y`` column; columns named ``z_*`` are
    external predictors and ``x_*`` internal features, kept in file order.
    Row numbers in errors are file line numbers (the header is line 1).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(f"{path} is empty") from None

        if header.count("y") != 1:
            raise DataFormatError(f"expected exactly one 'y' column, found {header.count('y')}", 1)
        for h in header:
            if h != "y" and not (h.startswith("x_") or h.startswith("z_")):
                raise DataFormatError("column name must be 'y', 'x_*' or 'z_*'", 1, h)
        if len(set(header)) != len(header):
            raise DataFormatError("duplicate column names", 1)
        iy = header.index("y")
        ix = [i for i, h in enumerate(header) if h.startswith("x_")]
        iz = [i for i, h in enumerate(header) if h.startswith("z_")]
        if not ix:
            raise DataFormatError("no x_* columns", 1)

        rows = []
        for line_no, rec in enumerate(reader, start=2):
            if not rec or (len(rec) == 1 and rec[0].strip() == ""):
                continue
            if len(rec) != len(header):
                raise DataFormatError(
                    f"expected {len(header)} fields, found {len(rec)}", line_no
                )
            rows.append([_parse_cell(v, line_no, header[j]) for j, v in enumerate(rec)])

    if not rows:
        raise DataFormatError(f"{path} has no data rows")
    a = np.array(rows, dtype=float)
    return Dataset(
        y=a[:, iy],
        X=a[:, ix],
        Z=a[:, iz],
        outcome_kind=outcome_kind,
        x_names=tuple(header[i] for i in ix),
        z_names=tuple(header[i] for i in iz),
    )


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write ``dataset`` as CSV; floats use shortest round-trip repr, so reload is bit-exact."""
    header = ["y", *dataset.z_names, *dataset.x_names]
    data = np.column_stack([dataset.y, dataset.Z, dataset.X])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in data:
            w.writerow([repr(float(v)) for v in row])
