"""Sparse labeled datasets: text loading, saving, and stratified splits.

The text convention is one instance per line, `<label> <idx>:<val> ...`,
with 1-based feature indices by default. Labels may be arbitrary tokens;
they are densified to [0, K) in order of first appearance and the mapping
is kept for reporting and for loading evaluation files consistently.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    EmptyFile,
    InvalidArg,
    ParseError,
    TooFewInstances,
)

_dataset_tokens = itertools.count()


@dataclass(frozen=True, eq=False)
class SparseDataset:
    """Row-sparse feature matrix (CSR arrays) with dense integer labels.

    Immutable after construction; per-row feature indices are strictly
    increasing. `label_names[k]` is the original token of dense class k.
    """

    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    labels: np.ndarray
    num_features: int
    num_classes: int
    label_names: tuple[str, ...]
    token: int = field(default_factory=lambda: next(_dataset_tokens))

    def __post_init__(self):
        for name in ("indptr", "indices", "labels"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        vals = np.asarray(self.values, dtype=np.float64)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def num_rows(self) -> int:
        return self.indptr.shape[0] - 1

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.values[lo:hi]

    @cached_property
    def _row_ids(self) -> np.ndarray:
        """Row index of every stored entry, in storage order."""
        return np.repeat(np.arange(self.num_rows), np.diff(self.indptr))

    @cached_property
    def columns(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Column-major view: (col_indptr, entry_rows, entry_values).

        Row order is preserved within each column (stable sort), so any
        consumer iterating a column sees instances in dataset order.
        """
        order = np.argsort(self.indices, kind="stable")
        counts = np.bincount(self.indices, minlength=self.num_features)
        col_indptr = np.concatenate(([0], np.cumsum(counts)))
        return col_indptr, self._row_ids[order], self.values[order]

    @cached_property
    def sorted_entries(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All stored entries sorted by (feature, value): (features, values, rows).

        Computed once per dataset; tree training partitions this order down
        the tree instead of re-sorting per node.
        """
        order = np.lexsort((self.values, self.indices))
        return self.indices[order], self.values[order], self._row_ids[order]

    def row_entries(
        self, rows: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All stored entries of the given rows.

        Returns (features, values, row_positions) where row_positions index
        into `rows`, not the full dataset.
        """
        rows = np.asarray(rows, dtype=np.int64)
        starts = self.indptr[rows]
        lens = self.indptr[rows + 1] - starts
        total = int(lens.sum())
        if total == 0:
            empty = np.empty(0, dtype=np.int64)
            return empty, np.empty(0), empty
        positions = np.repeat(np.arange(rows.shape[0]), lens)
        ends = np.cumsum(lens)
        flat = np.arange(total) - np.repeat(ends - lens, lens) + np.repeat(starts, lens)
        return self.indices[flat], self.values[flat], positions

    def toarray(self) -> np.ndarray:
        dense = np.zeros((self.num_rows, self.num_features))
        dense[self._row_ids, self.indices] = self.values
        return dense


def from_dense(
    features: np.ndarray,
    labels: np.ndarray,
    label_names: tuple[str, ...] | None = None,
) -> SparseDataset:
    """Build a dataset from a dense array, dropping exact zeros."""
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or labels.shape != (x.shape[0],):
        raise InvalidArg("features must be (N, F) with one label per row")
    num_classes = int(labels.max()) + 1 if labels.size else 0
    if label_names is None:
        label_names = tuple(str(k) for k in range(num_classes))
    rows, cols = np.nonzero(x)
    indptr = np.concatenate(([0], np.cumsum(np.bincount(rows, minlength=x.shape[0]))))
    return SparseDataset(
        indptr=indptr,
        indices=cols,
        values=x[rows, cols],
        labels=labels,
        num_features=x.shape[1],
        num_classes=num_classes,
        label_names=label_names,
    )


def load_sparse_text(
    path,
    *,
    zero_based: bool = False,
    num_features: int | None = None,
    label_names: tuple[str, ...] | None = None,
) -> SparseDataset:
    """Parse the sparse text format.

    Blank lines and lines starting with '#' are skipped. Feature indices
    must be strictly increasing within a line. When `label_names` is given
    the file's label tokens must all appear in it (used to keep train and
    evaluation label spaces aligned); otherwise tokens are densified by
    first appearance. `num_features` acts as a lower bound on the feature
    count; indices at or beyond it raise ParseError so a model's feature
    space is never silently exceeded.
    """
    shift = 0 if zero_based else 1
    mapping: dict[str, int] = (
        {name: k for k, name in enumerate(label_names)} if label_names else {}
    )
    frozen_mapping = label_names is not None
    indptr = [0]
    indices: list[int] = []
    values: list[float] = []
    labels: list[int] = []
    max_index = -1
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            token = parts[0]
            if token not in mapping:
                if frozen_mapping:
                    raise ParseError(
                        f"unknown label {token!r} (not in the retained mapping)",
                        line=line_no,
                    )
                mapping[token] = len(mapping)
            labels.append(mapping[token])
            prev = -1
            for item in parts[1:]:
                try:
                    idx_str, val_str = item.split(":", 1)
                    idx = int(idx_str) - shift
                    val = float(val_str)
                except ValueError:
                    raise ParseError(
                        f"malformed feature entry {item!r}", line=line_no
                    ) from None
                if idx < 0:
                    raise ParseError(
                        f"feature index {idx + shift} below the "
                        f"{'0' if zero_based else '1'}-based minimum",
                        line=line_no,
                    )
                if idx <= prev:
                    raise ParseError(
                        "feature indices must be strictly increasing", line=line_no
                    )
                if not np.isfinite(val):
                    raise ParseError(f"non-finite feature value {val_str!r}", line=line_no)
                if num_features is not None and idx >= num_features:
                    raise ParseError(
                        f"feature index {idx + shift} exceeds the expected "
                        f"feature count {num_features}",
                        line=line_no,
                    )
                prev = idx
                indices.append(idx)
                values.append(val)
                max_index = max(max_index, idx)
            indptr.append(len(indices))
    if not labels:
        raise EmptyFile(f"{path}: no data lines")
    names = tuple(sorted(mapping, key=mapping.get))  # type: ignore[arg-type]
    return SparseDataset(
        indptr=np.array(indptr),
        indices=np.array(indices, dtype=np.int64),
        values=np.array(values),
        labels=np.array(labels, dtype=np.int64),
        num_features=max(max_index + 1, num_features or 0),
        num_classes=len(names),
        label_names=names,
    )


def save_sparse_text(data: SparseDataset, path, *, zero_based: bool = False) -> None:
    """Write the dataset back to the text format (row order preserved)."""
    shift = 0 if zero_based else 1
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(data.num_rows):
            idx, vals = data.row(i)
            feats = " ".join(
                f"{j + shift}:{val!r}" for j, val in zip(idx.tolist(), vals.tolist())
            )
            name = data.label_names[data.labels[i]]
            fh.write(f"{name} {feats}".rstrip() + "\n")


def save_label_map(label_names: tuple[str, ...], path) -> None:
    """One `original<TAB>dense` pair per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for dense, name in enumerate(label_names):
            fh.write(f"{name}\t{dense}\n")


def load_label_map(path) -> tuple[str, ...]:
    names: dict[int, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                name, dense = line.split("\t")
                names[int(dense)] = name
            except ValueError:
                raise ParseError(f"bad label-map line {line!r}", line=line_no) from None
    if sorted(names) != list(range(len(names))):
        raise ParseError(f"{path}: label map is not a dense [0, K) enumeration")
    return tuple(names[k] for k in range(len(names)))


def _take_rows(data: SparseDataset, rows: np.ndarray) -> SparseDataset:
    rows = np.asarray(rows, dtype=np.int64)
    feats, vals, positions = data.row_entries(rows)
    lens = data.indptr[rows + 1] - data.indptr[rows]
    del positions
    return SparseDataset(
        indptr=np.concatenate(([0], np.cumsum(lens))),
        indices=feats,
        values=vals,
        labels=data.labels[rows],
        num_features=data.num_features,
        num_classes=data.num_classes,
        label_names=data.label_names,
    )


def stratified_split(
    data: SparseDataset, valid_fraction: float, seed: int
) -> tuple[SparseDataset, SparseDataset]:
    """Per-class shuffled split; every class keeps at least one training row.

    The validation share of class k is round(n_k * valid_fraction), clamped
    to [0, n_k - 1]. Row order within each side follows the original file.
    """
    if not 0.0 < valid_fraction < 1.0:
        raise InvalidArg(f"valid fraction must be in (0, 1), got {valid_fraction}")
    counts = np.bincount(data.labels, minlength=data.num_classes)
    thin = np.flatnonzero(counts < 2)
    if thin.size:
        raise TooFewInstances(
            f"classes {thin.tolist()} have fewer than 2 instances; cannot split"
        )
    rng = np.random.default_rng(seed)
    valid_rows = []
    for k in range(data.num_classes):
        rows_k = np.flatnonzero(data.labels == k)
        n_valid = int(round(rows_k.size * valid_fraction))
        n_valid = min(max(n_valid, 0), rows_k.size - 1)
        valid_rows.append(rng.permutation(rows_k)[:n_valid])
    valid_mask = np.zeros(data.num_rows, dtype=bool)
    if valid_rows:
        all_valid = np.concatenate(valid_rows)
        valid_mask[all_valid] = True
    train = _take_rows(data, np.flatnonzero(~valid_mask))
    valid = _take_rows(data, np.flatnonzero(valid_mask))
    return train, valid
