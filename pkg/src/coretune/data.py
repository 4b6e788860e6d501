"""Dataset ingestion, splitting, and serialization.

Feature matrices are either dense ``numpy.ndarray`` or ``scipy.sparse.csr_matrix``;
LIBSVM inputs are stored sparsely when their density is below
``SPARSE_DENSITY_THRESHOLD``. Labels are normalized to contiguous class ids
starting at 0 ({-1,+1} inputs are remapped to {0,1}).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

SPARSE_DENSITY_THRESHOLD = 0.25

# 17 significant digits round-trips any float64 through decimal text.
FLOAT_FMT = "%.17g"


class ParseError(ValueError):
    """Malformed input file; message carries file location."""


class EmptyInputError(ParseError):
    pass


class SplitError(ValueError):
    pass


def _matrix_len(features) -> int:
    return features.shape[0]


@dataclass
class Dataset:
    """A weighted classification dataset.

    features : (n, d) dense array or CSR matrix
    labels   : (n,) integer class ids in {0, ..., K-1}
    weights  : (n,) nonnegative finite per-point weights (1 for unweighted input)
    point_ids: (n,) stable integer identifiers, unique within the dataset

    Instances are treated as immutable after construction and are safe to
    share read-only across workers.
    """

    features: np.ndarray | sp.csr_matrix
    labels: np.ndarray
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]
    point_ids: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        n = _matrix_len(self.features)
        if n < 1:
            raise ValueError("dataset must contain at least one point")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.weights is None:
            self.weights = np.ones(n, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.point_ids is None:
            self.point_ids = np.arange(n, dtype=np.int64)
        self.point_ids = np.asarray(self.point_ids, dtype=np.int64)
        for name, arr in (("labels", self.labels), ("weights", self.weights),
                          ("point_ids", self.point_ids)):
            if arr.shape != (n,):
                raise ValueError(f"{name} has length {arr.shape}, expected ({n},)")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
            raise ValueError("weights must be finite and >= 0")
        if np.any(self.labels < 0):
            raise ValueError("labels must be nonnegative class ids")
        if len(np.unique(self.point_ids)) != n:
            raise ValueError("point_ids must be unique")
        if isinstance(self.features, np.ndarray):
            self.features.flags.writeable = False
        for arr in (self.labels, self.weights, self.point_ids):
            arr.flags.writeable = False

    @property
    def n(self) -> int:
        return _matrix_len(self.features)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def take(self, positions: np.ndarray) -> "Dataset":
        """Row subset by positional indices; point_ids travel with the rows."""
        positions = np.asarray(positions, dtype=np.int64)
        feats = self.features[positions]
        if isinstance(feats, np.ndarray):
            feats = feats.copy()
        return Dataset(feats, self.labels[positions].copy(),
                       self.weights[positions].copy(),
                       self.point_ids[positions].copy())

    def positions_of(self, ids: np.ndarray) -> np.ndarray:
        """Map point_ids back to row positions; raises KeyError on unknown ids."""
        ids = np.asarray(ids, dtype=np.int64)
        order = np.argsort(self.point_ids, kind="stable")
        sorted_ids = self.point_ids[order]
        pos = np.searchsorted(sorted_ids, ids)
        bad = (pos >= len(sorted_ids)) | (sorted_ids[np.minimum(pos, len(sorted_ids) - 1)] != ids)
        if np.any(bad):
            raise KeyError(f"unknown point_ids: {ids[bad][:5].tolist()}")
        return order[pos]

    def subset_by_ids(self, ids: np.ndarray) -> "Dataset":
        return self.take(self.positions_of(ids))

    def dense_features(self) -> np.ndarray:
        if sp.issparse(self.features):
            return np.asarray(self.features.todense())
        return np.asarray(self.features)


@dataclass
class SplitBundle:
    """Train/validation/test partition of one source dataset."""

    train: Dataset
    validation: Dataset
    test: Dataset

    def __iter__(self):
        return iter((self.train, self.validation, self.test))

    @property
    def names(self) -> tuple[str, str, str]:
        return ("train", "validation", "test")


def largest_remainder(quotas: np.ndarray, total: int) -> np.ndarray:
    """Round nonnegative real quotas to integers summing exactly to ``total``.

    Allocates proportionally to quotas, assigning floor shares first and then
    one extra unit each to the entries with the largest fractional remainders.
    Remainder ties break by ascending index so the result is deterministic.
    """
    quotas = np.asarray(quotas, dtype=np.float64)
    if np.any(quotas < 0) or not np.all(np.isfinite(quotas)):
        raise ValueError("quotas must be finite and nonnegative")
    if total < 0:
        raise ValueError("total must be nonnegative")
    s = quotas.sum()
    if s <= 0:
        if total == 0:
            return np.zeros(len(quotas), dtype=np.int64)
        raise ValueError("cannot allocate a positive total across all-zero quotas")
    scaled = quotas * (total / s)
    base = np.floor(scaled).astype(np.int64)
    leftover = total - int(base.sum())
    if leftover > 0:
        remainders = scaled - base
        order = np.lexsort((np.arange(len(quotas)), -remainders))
        base[order[:leftover]] += 1
    return base


_FEATURE_RE = re.compile(r"^(\d+):(\S+)$")


def parse_libsvm(path, dimension_hint: int | None = None) -> Dataset:
    """Parse a LIBSVM-format text file into a Dataset.

    Each data line is ``<label> <idx>:<val> ...`` with 1-based strictly
    increasing feature indices. Inline ``#`` comments and blank lines are
    ignored. Labels {-1,+1} are remapped to {0,1}; weights are all 1. The
    matrix is stored sparsely when its density is below 25%.
    """
    if dimension_hint is not None and dimension_hint < 1:
        raise ValueError("dimension_hint must be a positive integer")
    labels: list[float] = []
    data: list[float] = []
    indices: list[int] = []
    indptr = [0]
    max_index = 0
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                label = float(parts[0])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad label {parts[0]!r}") from None
            if not label.is_integer():
                raise ParseError(f"{path}:{lineno}: non-integer label {parts[0]!r}")
            prev_idx = 0
            for tok in parts[1:]:
                m = _FEATURE_RE.match(tok)
                if m is None:
                    raise ParseError(f"{path}:{lineno}: bad feature token {tok!r}")
                idx = int(m.group(1))
                if idx < 1:
                    raise ParseError(
                        f"{path}:{lineno}: feature index {idx} (indices are 1-based)")
                if idx <= prev_idx:
                    raise ParseError(
                        f"{path}:{lineno}: feature indices must be strictly increasing")
                try:
                    val = float(m.group(2))
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: bad value in {tok!r}") from None
                indices.append(idx - 1)
                data.append(val)
                prev_idx = idx
            max_index = max(max_index, prev_idx)
            labels.append(label)
            indptr.append(len(data))
    if not labels:
        raise EmptyInputError(f"{path}: no data lines")
    dim = dimension_hint if dimension_hint is not None else max_index
    if max_index > dim:
        raise ParseError(f"{path}: feature index {max_index} exceeds dimension_hint {dim}")
    n = len(labels)
    matrix = sp.csr_matrix(
        (np.asarray(data, dtype=np.float64),
         np.asarray(indices, dtype=np.int64),
         np.asarray(indptr, dtype=np.int64)),
        shape=(n, dim),
    )
    density = matrix.nnz / max(1, n * dim)
    features = matrix if density < SPARSE_DENSITY_THRESHOLD else np.asarray(matrix.todense())
    return Dataset(features, _normalize_labels(np.asarray(labels), path))


def _normalize_labels(raw: np.ndarray, source) -> np.ndarray:
    values = set(np.unique(raw).tolist())
    if values <= {-1.0, 1.0}:
        return (np.asarray(raw) > 0).astype(np.int64)
    out = np.asarray(raw, dtype=np.float64)
    if np.any(out != np.round(out)) or np.any(out < 0):
        raise ParseError(f"{source}: labels must be class ids (or -1/+1), got {sorted(values)[:5]}")
    return out.astype(np.int64)


def parse_csv(path, label_column: str | int, has_header: bool = True) -> Dataset:
    """Parse a numeric CSV file into a Dataset.

    ``label_column`` is a header name (requires ``has_header``) or a 0-based
    column index. All other columns must be numeric feature values; weights
    are all 1.
    """
    import csv

    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row and any(cell.strip() for cell in row)]
    if not rows:
        raise EmptyInputError(f"{path}: no rows")
    header = None
    if has_header:
        header = [cell.strip() for cell in rows[0]]
        rows = rows[1:]
        if not rows:
            raise EmptyInputError(f"{path}: header but no data rows")
    width = len(rows[0])
    if isinstance(label_column, str):
        if header is None:
            raise ParseError(f"{path}: label column given by name {label_column!r} "
                             "but the file has no header")
        if label_column not in header:
            raise ParseError(f"{path}: label column {label_column!r} not found "
                             f"(columns: {header})")
        label_idx = header.index(label_column)
    else:
        label_idx = int(label_column)
        if not (0 <= label_idx < width):
            raise ParseError(f"{path}: label column index {label_idx} out of range "
                             f"for {width} columns")
    features = np.empty((len(rows), width - 1), dtype=np.float64)
    labels = np.empty(len(rows), dtype=np.float64)
    for i, row in enumerate(rows):
        rowno = i + (2 if has_header else 1)
        if len(row) != width:
            raise ParseError(f"{path}:{rowno}: expected {width} cells, got {len(row)}")
        col = 0
        for j, cell in enumerate(row):
            cell = cell.strip()
            if j == label_idx:
                try:
                    labels[i] = float(cell)
                except ValueError:
                    raise ParseError(f"{path}:{rowno}: bad label {cell!r}") from None
                continue
            try:
                features[i, col] = float(cell)
            except ValueError:
                raise ParseError(
                    f"{path}:{rowno}: non-numeric feature cell {cell!r} in column {j}"
                ) from None
            col += 1
    return Dataset(features, _normalize_labels(labels, path))


def class_distribution(data: Dataset) -> dict[int, float]:
    """Fraction of points per class; fractions sum to 1."""
    classes, counts = np.unique(data.labels, return_counts=True)
    return {int(c): float(k) / data.n for c, k in zip(classes, counts)}


def stratified_split(data: Dataset, fractions: tuple[float, float, float],
                     seed: int) -> SplitBundle:
    """Partition into train/validation/test preserving per-class proportions.

    Per-class counts in each split follow largest-remainder rounding of
    fraction x class count, so they match the exact quota within +-1.
    Deterministic for a fixed seed.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise SplitError(f"fractions must be three positive reals, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise SplitError(f"fractions must sum to 1, got sum {sum(fractions)!r}")
    rng = np.random.default_rng(seed)
    parts: list[list[np.ndarray]] = [[], [], []]
    for cls in data.classes:
        cls_pos = np.flatnonzero(data.labels == cls)
        if len(cls_pos) < 3:
            raise SplitError(f"class {int(cls)} has {len(cls_pos)} points, "
                             "fewer than the 3 splits")
        cls_pos = cls_pos[rng.permutation(len(cls_pos))]
        counts = largest_remainder(np.asarray(fractions) * len(cls_pos), len(cls_pos))
        stop = np.cumsum(counts)
        parts[0].append(cls_pos[:stop[0]])
        parts[1].append(cls_pos[stop[0]:stop[1]])
        parts[2].append(cls_pos[stop[1]:])
    picks = [np.sort(np.concatenate(p)) for p in parts]
    for name, pick in zip(("train", "validation", "test"), picks):
        if len(pick) == 0:
            raise SplitError(f"the {name} split would be empty; use larger "
                             "classes or fractions")
    return SplitBundle(*(data.take(p) for p in picks))


def write_libsvm(data: Dataset, path) -> None:
    """Serialize to LIBSVM text; binary labels {0,1} are written as -1/+1.

    Values use 17 significant digits so parse -> write -> parse is bit-exact.
    """
    binary = set(np.unique(data.labels).tolist()) <= {0, 1}
    matrix = data.features.tocsr() if sp.issparse(data.features) else None
    with open(path, "w") as fh:
        for i in range(data.n):
            label = int(data.labels[i])
            if binary:
                label_txt = "+1" if label == 1 else "-1"
            else:
                label_txt = str(label)
            if matrix is not None:
                start, stop = matrix.indptr[i], matrix.indptr[i + 1]
                cols = matrix.indices[start:stop]
                vals = matrix.data[start:stop]
            else:
                row = np.asarray(data.features[i])
                cols = np.flatnonzero(row)
                vals = row[cols]
            toks = [label_txt]
            toks += [f"{c + 1}:{FLOAT_FMT % v}" for c, v in zip(cols, vals)]
            fh.write(" ".join(toks) + "\n")


SPLIT_FILES = {"train": "train.libsvm", "validation": "validation.libsvm",
               "test": "test.libsvm"}
MANIFEST_FILE = "manifest.json"


def save_split_bundle(bundle: SplitBundle, directory, seed: int,
                      fractions: tuple[float, float, float],
                      extra: dict | None = None) -> None:
    """Write the three splits as LIBSVM files plus a JSON manifest.

    The manifest records seed, fractions, per-split sizes and point_ids; the
    point_ids restore split identity when the bundle is reloaded.
    """
    import os

    os.makedirs(directory, exist_ok=True)
    manifest = {
        "seed": int(seed),
        "fractions": [float(f) for f in fractions],
        "dimension": int(bundle.train.dim),
        "splits": {},
    }
    if extra:
        manifest.update(extra)
    for name, split in zip(bundle.names, bundle):
        write_libsvm(split, os.path.join(directory, SPLIT_FILES[name]))
        manifest["splits"][name] = {
            "file": SPLIT_FILES[name],
            "size": int(split.n),
            "point_ids": split.point_ids.tolist(),
            "weights": None if np.all(split.weights == 1.0) else split.weights.tolist(),
        }
    with open(os.path.join(directory, MANIFEST_FILE), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_split_bundle(directory) -> tuple[SplitBundle, dict]:
    """Inverse of save_split_bundle; returns the bundle and its manifest."""
    import os

    manifest_path = os.path.join(directory, MANIFEST_FILE)
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"no split manifest at {manifest_path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    dim = manifest.get("dimension")
    splits = []
    for name in ("train", "validation", "test"):
        meta = manifest["splits"][name]
        parsed = parse_libsvm(os.path.join(directory, meta["file"]), dimension_hint=dim)
        weights = meta.get("weights")
        splits.append(Dataset(
            parsed.features, parsed.labels,
            np.asarray(weights, dtype=np.float64) if weights else None,
            np.asarray(meta["point_ids"], dtype=np.int64)))
    return SplitBundle(*splits), manifest
