"""LIBSVM-format binary classification data and the instance-wise split."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .cluster import partition_even
from .linalg import SparseColumns


class ParseError(ValueError):
    def __init__(self, lineno, msg):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix ``X`` (d x n, one column per instance) and +/-1 labels."""

    X: SparseColumns
    labels: np.ndarray

    def __post_init__(self):
        if self.X.n_cols != len(self.labels):
            raise ValueError("label count does not match the number of instances")
        if len(self.labels) and not np.all(np.abs(self.labels) == 1.0):
            raise ValueError("labels must be +1 or -1")

    @property
    def n(self):
        return self.X.n_cols

    @property
    def d(self):
        return self.X.n_rows


def parse_libsvm(stream, n_features=None):
    """Parse ``label idx:val ...`` lines (1-based, strictly increasing indices).

    Positive labels map to +1 and negative ones to -1; a zero label is an
    error since only binary problems are supported.  ``n_features`` overrides
    the inferred dimension (the largest index seen).
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    columns, labels = [], []
    max_idx = 0
    for lineno, line in enumerate(stream, start=1):
        tokens = line.split()
        if not tokens:
            continue
        try:
            lab = float(tokens[0])
        except ValueError:
            raise ParseError(lineno, f"bad label {tokens[0]!r}") from None
        if lab == 0.0 or not np.isfinite(lab):
            raise ParseError(lineno, f"label must be nonzero, got {tokens[0]!r}")
        col, prev = [], 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise ParseError(lineno, f"malformed feature {tok!r}")
            try:
                idx, val = int(idx_s), float(val_s)
            except ValueError:
                raise ParseError(lineno, f"malformed feature {tok!r}") from None
            if idx < 1:
                raise ParseError(lineno, f"feature index must be >= 1, got {idx}")
            if idx == prev:
                raise ParseError(lineno, f"duplicate feature index {idx}")
            if idx < prev:
                raise ParseError(lineno, f"feature indices must increase ({idx} after {prev})")
            prev = idx
            if val != 0.0:
                col.append((idx - 1, val))
        max_idx = max(max_idx, prev)
        columns.append(col)
        labels.append(1.0 if lab > 0 else -1.0)
    d = max_idx if n_features is None else int(n_features)
    if d < max_idx:
        raise ValueError(f"n_features={d} is smaller than the largest index {max_idx}")
    return LabeledDataset(SparseColumns.from_columns(d, columns), np.array(labels))


def load_libsvm(path, n_features=None):
    with open(path, encoding="utf-8") as fh:
        return parse_libsvm(fh, n_features)


def dump_libsvm(data, stream):
    """Write ``data`` in LIBSVM format with round-trip-exact values."""
    for c in range(data.n):
        rows, vals = data.X.column(c)
        feats = " ".join(f"{r + 1}:{v!r}" for r, v in zip(rows.tolist(), vals.tolist()))
        label = "+1" if data.labels[c] > 0 else "-1"
        stream.write(f"{label} {feats}".rstrip() + "\n")


def split_instances(data, k):
    """Contiguous column blocks ``X_k`` following :func:`partition_even`."""
    return [data.X.column_range(r.start, r.stop) for r in partition_even(data.n, k)]


def make_synthetic(n, d, density=0.3, seed=0, label_noise=0.1, correlation=0.0):
    """Random sparse binary classification data with unit-norm instances.

    With ``correlation > 0`` every instance shares a common dense direction,
    which makes the Gram matrix far from block diagonal.
    """
    rng = np.random.default_rng(seed)
    mask = rng.random((d, n)) < density
    # every instance needs at least one feature
    mask[rng.integers(0, d, size=n), np.arange(n)] = True
    x = np.where(mask, rng.standard_normal((d, n)), 0.0)
    x /= np.linalg.norm(x, axis=0)
    if correlation > 0.0:
        common = rng.standard_normal(d)
        common /= np.linalg.norm(common)
        coef = 1.0 + 0.1 * rng.standard_normal(n)
        x = np.sqrt(1.0 - correlation) * x + np.sqrt(correlation) * np.outer(common, coef)
    w_true = rng.standard_normal(d) * (rng.random(d) < 0.3)
    margin = w_true @ x + label_noise * rng.standard_normal(n)
    labels = np.where(margin >= 0.0, 1.0, -1.0)
    return LabeledDataset(SparseColumns.from_dense(x), labels)
