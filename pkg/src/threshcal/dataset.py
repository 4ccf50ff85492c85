"""Dataset containers, CSV ingestion, seeded splitting, and feature screening."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "DatasetError",
    "CsvParseError",
    "LabeledDataset",
    "SplitSpec",
    "CsvSchema",
    "load_csv",
    "load_features_csv",
    "save_csv",
    "echo_schema",
    "split",
    "subsample_balanced",
    "screen_features",
    "concatenate",
]


class DatasetError(ValueError):
    """Raised for malformed datasets or invalid dataset operations."""


class CsvParseError(DatasetError):
    """A CSV cell could not be parsed; carries the 1-based row and column."""

    def __init__(self, message: str, row: int, column: int):
        super().__init__(f"row {row}, column {column}: {message}")
        self.row = row
        self.column = column


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix with integer class labels.

    Labels lie in ``{0, 1, ..., k}``; label 0 is the abstention sentinel and
    never appears in training input.  Features are finite float64.  An empty
    (0-row) dataset is allowed as the result of a degenerate split; loaders
    and fitting reject it.
    """

    features: np.ndarray
    labels: np.ndarray
    k: int
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=float)
        labs = np.asarray(self.labels, dtype=np.int64)
        if feats.ndim != 2:
            raise DatasetError(f"features must be 2-D, got shape {feats.shape}")
        n, d = feats.shape
        if d < 1:
            raise DatasetError("dataset needs at least one feature")
        if not np.all(np.isfinite(feats)):
            raise DatasetError("features contain non-finite values")
        if labs.shape != (n,):
            raise DatasetError(f"labels must have shape ({n},), got {labs.shape}")
        if self.k < 1:
            raise DatasetError("k must be at least 1")
        if n and (labs.min() < 0 or labs.max() > self.k):
            raise DatasetError(f"labels must lie in 0..{self.k}")
        if self.feature_names is not None:
            names = tuple(str(s) for s in self.feature_names)
            if len(names) != d:
                raise DatasetError(f"expected {d} feature names, got {len(names)}")
            object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        """Counts of labels 1..k (abstentions excluded)."""
        return np.bincount(self.labels, minlength=self.k + 1)[1:]

    def take(self, idx) -> "LabeledDataset":
        """Row subset in the given index order."""
        idx = np.asarray(idx, dtype=np.intp)
        return LabeledDataset(self.features[idx], self.labels[idx], self.k, self.feature_names)

    def select_features(self, columns) -> "LabeledDataset":
        """Column subset in the given order."""
        columns = np.asarray(columns, dtype=np.intp)
        names = None
        if self.feature_names is not None:
            names = tuple(self.feature_names[int(c)] for c in columns)
        return LabeledDataset(self.features[:, columns], self.labels, self.k, names)


@dataclass(frozen=True)
class SplitSpec:
    """Sizes and seed for a disjoint train/calibration/test split."""

    n_train: int
    n_calib: int
    n_test: int
    seed: int
    stratified: bool = False

    def __post_init__(self):
        if self.n_train < 1:
            raise DatasetError("n_train must be at least 1")
        if self.n_calib < 0 or self.n_test < 0:
            raise DatasetError("split counts must be non-negative")

    @property
    def total(self) -> int:
        return self.n_train + self.n_calib + self.n_test


@dataclass(frozen=True)
class CsvSchema:
    """How to read a labeled CSV file.

    ``label_column`` is a 0-based column index into the raw file, or a header
    name (requires ``has_header``).  ``label_map`` must map label text
    bijectively onto ``{1, ..., k}``.  ``drop_columns`` names raw columns to
    discard entirely (e.g. a date column).
    """

    label_column: int | str
    label_map: dict[str, int]
    missing_token: str = "?"
    drop_missing: bool = False
    has_header: bool = False
    drop_columns: tuple[int | str, ...] = ()

    def __post_init__(self):
        if not self.label_map:
            raise DatasetError("label_map must not be empty")
        values = sorted(self.label_map.values())
        if values != list(range(1, len(values) + 1)):
            raise DatasetError("label_map values must be exactly 1..k with no repeats")
        if isinstance(self.label_column, str) and not self.has_header:
            raise DatasetError("a named label_column requires has_header=True")
        object.__setattr__(self, "drop_columns", tuple(self.drop_columns))

    @property
    def k(self) -> int:
        return len(self.label_map)


def _resolve_column(ref: int | str, header: list[str] | None, ncols: int, what: str) -> int:
    if isinstance(ref, str):
        if header is None:
            raise DatasetError(f"{what} {ref!r} needs a header row")
        try:
            return header.index(ref)
        except ValueError:
            raise DatasetError(f"{what} {ref!r} not found in header {header}") from None
    idx = int(ref)
    if idx < 0:
        idx += ncols
    if not 0 <= idx < ncols:
        raise DatasetError(f"{what} index {ref} out of range for {ncols} columns")
    return idx


def load_csv(path: str | Path, schema: CsvSchema) -> LabeledDataset:
    """Read a labeled CSV file into a :class:`LabeledDataset`.

    Rows containing ``schema.missing_token`` are dropped when
    ``schema.drop_missing`` is set; otherwise such cells raise
    :class:`CsvParseError` with the offending 1-based row and column.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        raw = [(i + 1, row) for i, row in enumerate(csv.reader(fh)) if row]
    header: list[str] | None = None
    if schema.has_header:
        if not raw:
            raise DatasetError(f"{path}: empty dataset (no header row)")
        header = [c.strip() for c in raw[0][1]]
        raw = raw[1:]
    if not raw:
        raise DatasetError(f"{path}: empty dataset (no data rows)")

    ncols = len(header) if header is not None else len(raw[0][1])
    label_idx = _resolve_column(schema.label_column, header, ncols, "label column")
    dropped = {_resolve_column(c, header, ncols, "drop column") for c in schema.drop_columns}
    if label_idx in dropped:
        raise DatasetError("label column cannot be dropped")
    feature_cols = [c for c in range(ncols) if c != label_idx and c not in dropped]
    if not feature_cols:
        raise DatasetError("no feature columns left after dropping")

    feats: list[list[float]] = []
    labels: list[int] = []
    for rnum, row in raw:
        if len(row) != ncols:
            raise DatasetError(f"row {rnum}: expected {ncols} fields, got {len(row)}")
        cells = [c.strip() for c in row]
        if schema.drop_missing and any(
            cells[c] == schema.missing_token for c in feature_cols + [label_idx]
        ):
            continue
        text = cells[label_idx]
        if text not in schema.label_map:
            raise DatasetError(f"row {rnum}: unknown label {text!r}")
        vals = []
        for c in feature_cols:
            try:
                v = float(cells[c])
            except ValueError:
                raise CsvParseError(
                    f"cannot parse {cells[c]!r} as a number", rnum, c + 1
                ) from None
            if not math.isfinite(v):
                raise CsvParseError(f"non-finite value {cells[c]!r}", rnum, c + 1)
            vals.append(v)
        feats.append(vals)
        labels.append(schema.label_map[text])
    if not feats:
        raise DatasetError(f"{path}: empty dataset (all rows dropped)")

    names = tuple(header[c] for c in feature_cols) if header is not None else None
    return LabeledDataset(np.array(feats), np.array(labels), schema.k, names)


def load_features_csv(path: str | Path, *, has_header: bool = False) -> np.ndarray:
    """Read an unlabeled CSV of numbers into an n x d feature matrix."""
    path = Path(path)
    with path.open(newline="") as fh:
        raw = [(i + 1, row) for i, row in enumerate(csv.reader(fh)) if row]
    if has_header:
        raw = raw[1:]
    if not raw:
        raise DatasetError(f"{path}: empty dataset (no data rows)")
    feats = []
    for rnum, row in raw:
        vals = []
        for c, cell in enumerate(row):
            try:
                v = float(cell.strip())
            except ValueError:
                raise CsvParseError(f"cannot parse {cell!r} as a number", rnum, c + 1) from None
            if not math.isfinite(v):
                raise CsvParseError(f"non-finite value {cell!r}", rnum, c + 1)
            vals.append(v)
        feats.append(vals)
    if len({len(r) for r in feats}) != 1:
        raise DatasetError(f"{path}: rows have inconsistent column counts")
    return np.array(feats)


def save_csv(data: LabeledDataset, path: str | Path) -> None:
    """Write a dataset back to CSV: features then an integer ``label`` column.

    Floats are rendered with 17 significant digits so a reload reproduces the
    exact same values.  A header is written iff the dataset has feature names.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        if data.feature_names is not None:
            writer.writerow(list(data.feature_names) + ["label"])
        for row, lab in zip(data.features, data.labels):
            writer.writerow([format(v, ".17g") for v in row] + [str(int(lab))])


def echo_schema(data: LabeledDataset) -> CsvSchema:
    """Schema that reads back a file produced by :func:`save_csv`."""
    label_map = {str(j): j for j in range(1, data.k + 1)}
    if data.feature_names is not None:
        return CsvSchema(label_column="label", label_map=label_map, has_header=True)
    return CsvSchema(label_column=data.d, label_map=label_map)


def _largest_remainder_quotas(
    size: int, pools: dict[int, int], weights: dict[int, float]
) -> dict[int, int]:
    """Integer quotas per class summing to `size`, proportional to weights,
    capped by the remaining pool of each class."""
    quotas, fracs = {}, {}
    for c, w in weights.items():
        exact = size * w
        quotas[c] = min(int(exact), pools[c])
        fracs[c] = exact - int(exact)
    short = size - sum(quotas.values())
    order = sorted(weights, key=lambda c: (-fracs[c], c))
    while short > 0:
        progressed = False
        for c in order:
            if short == 0:
                break
            if pools[c] - quotas[c] > 0:
                quotas[c] += 1
                short -= 1
                progressed = True
        if not progressed:
            raise DatasetError("stratified split cannot satisfy the requested sizes")
    return quotas


def split(
    data: LabeledDataset, spec: SplitSpec
) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """Disjoint train/calibration/test subsets via a seeded uniform shuffle.

    The same seed always yields the same index sets.  With
    ``spec.stratified`` the class proportions of each part match the full
    data as closely as integer counts allow.
    """
    if spec.total > data.n:
        raise DatasetError(f"split sizes total {spec.total} but dataset has {data.n} rows")
    rng = np.random.default_rng(spec.seed)
    sizes = (spec.n_train, spec.n_calib, spec.n_test)
    if not spec.stratified:
        perm = rng.permutation(data.n)
        bounds = np.cumsum((0,) + sizes)
        parts = [perm[bounds[i] : bounds[i + 1]] for i in range(3)]
    else:
        classes = [int(c) for c in np.unique(data.labels)]
        shuffled = {c: rng.permutation(np.flatnonzero(data.labels == c)) for c in classes}
        offsets = {c: 0 for c in classes}
        pools = {c: len(shuffled[c]) for c in classes}
        weights = {c: len(shuffled[c]) / data.n for c in classes}
        parts = []
        for size in sizes:
            quotas = _largest_remainder_quotas(size, pools, weights)
            chunk = []
            for c in classes:
                q = quotas[c]
                chunk.append(shuffled[c][offsets[c] : offsets[c] + q])
                offsets[c] += q
                pools[c] -= q
            merged = np.concatenate(chunk) if chunk else np.array([], dtype=np.intp)
            parts.append(rng.permutation(merged) if merged.size else merged)
    train, calib, test = (data.take(np.asarray(p, dtype=np.intp)) for p in parts)
    return train, calib, test


def subsample_balanced(
    data: LabeledDataset, take_all_class: int, n_other: int, seed: int
) -> LabeledDataset:
    """All rows of one class plus a seeded random draw from the rest.

    Returns the kept rows in shuffled order; used to rebalance a heavily
    skewed binary dataset before splitting.
    """
    if n_other < 0:
        raise DatasetError("n_other must be non-negative")
    keep = np.flatnonzero(data.labels == take_all_class)
    if keep.size == 0:
        raise DatasetError(f"class {take_all_class} absent from dataset")
    other = np.flatnonzero(data.labels != take_all_class)
    if n_other > other.size:
        raise DatasetError(f"n_other={n_other} exceeds the {other.size} rows of other classes")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(other, size=n_other, replace=False)
    idx = rng.permutation(np.concatenate((keep, chosen)))
    return data.take(idx)


def screen_features(
    train: LabeledDataset,
    others: Sequence[LabeledDataset] = (),
    top_k: int = 20,
) -> tuple[list[LabeledDataset], np.ndarray]:
    """Marginal-correlation feature screening for binary labels.

    Computes the Pearson correlation between each training feature column and
    the labels encoded {1,2} -> {0,1}, keeps the ``top_k`` columns by absolute
    correlation (ties broken by lower index, constant columns scored 0), and
    projects the training set plus all companion datasets onto those columns
    in original column order.

    Returns ``(reduced, selected)`` where ``reduced[0]`` is the reduced
    training set followed by the reduced companions.
    """
    if train.k != 2:
        raise DatasetError("feature screening requires binary labels (k=2)")
    if np.any((train.labels != 1) & (train.labels != 2)):
        raise DatasetError("training labels must all be 1 or 2")
    if not 1 <= top_k <= train.d:
        raise DatasetError(f"top_k must lie in 1..{train.d}")
    for ds in others:
        if ds.d != train.d:
            raise DatasetError("companion dataset has a different feature count")

    y = (train.labels == 2).astype(float)
    xc = train.features - train.features.mean(axis=0)
    yc = y - y.mean()
    num = xc.T @ yc
    denom = np.sqrt((xc * xc).sum(axis=0) * (yc * yc).sum())
    corr = np.divide(num, denom, out=np.zeros_like(num), where=denom > 0)

    order = np.lexsort((np.arange(train.d), -np.abs(corr)))
    selected = np.sort(order[:top_k])
    reduced = [ds.select_features(selected) for ds in [train, *others]]
    return reduced, selected


def concatenate(parts: Iterable[LabeledDataset]) -> LabeledDataset:
    """Stack datasets row-wise; they must agree on k and feature count."""
    parts = list(parts)
    if not parts:
        raise DatasetError("nothing to concatenate")
    first = parts[0]
    for ds in parts[1:]:
        if ds.d != first.d or ds.k != first.k:
            raise DatasetError("datasets disagree on shape or class count")
    return LabeledDataset(
        np.concatenate([p.features for p in parts]),
        np.concatenate([p.labels for p in parts]),
        first.k,
        first.feature_names,
    )
