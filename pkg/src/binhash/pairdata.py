"""Labeled datasets and pairwise similarity supervision.

Two points count as similar when their label sets overlap. Because similar
pairs are usually a small minority, each pair carries a weight that rescales
its loss contribution: similar pairs get ``|S| / |S1|``, dissimilar pairs
``|S| / |S0|``, where the counts are taken over the full set of unordered
training pairs. Optionally the similar-pair weight is graded by the Jaccard
overlap of the two label sets ("continuous similarity").

Dissimilar pairs always carry continuous similarity 1: their label Jaccard is
zero by definition, and scaling by it would erase the dissimilar half of the
loss. A ``literal_dissimilar_overlap`` escape hatch exposes the raw Jaccard
for anyone who wants the degenerate behavior on purpose.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DegenerateDatasetError

FEATURE_FILE_MAGIC = b"HNFV"
FEATURE_FILE_VERSION = 1
_FEATURE_HEADER = struct.Struct("<4sIQII")  # magic, version, N, D, label vocabulary

SPLIT_MODES = ("standard", "zero_shot")

# Synthetic preset whose pair pool is dominated by dissimilar pairs
# (99 * 10 / 9 = 110 dissimilar pairs per similar pair).
IMBALANCED_PRESET = {"classes": 100, "per_class": 10, "dim": 32, "spread": 6.0, "multilabel": False}


@dataclass(frozen=True)
class LabeledPoint:
    features: np.ndarray
    labels: frozenset[int]
    id: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable collection of feature vectors with non-empty label sets.

    ``label_count`` is the vocabulary size: every label is an int in
    ``[0, label_count)``. ``ids`` are stable external identifiers that survive
    :meth:`subset`, so retrieval-time bookkeeping (e.g. excluding a query from
    its own results) works across splits.
    """

    features: np.ndarray
    labels: tuple[frozenset[int], ...]
    ids: np.ndarray
    label_count: int

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float32)
        if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
            raise ValueError(f"features must be a non-empty 2-D array, got shape {feats.shape}")
        if not np.isfinite(feats).all():
            raise ValueError("features must be finite")
        labels = tuple(frozenset(ls) for ls in self.labels)
        if len(labels) != feats.shape[0]:
            raise ValueError(f"{feats.shape[0]} points but {len(labels)} label sets")
        if self.label_count < 1:
            raise ValueError("label_count must be >= 1")
        for k, ls in enumerate(labels):
            if not ls:
                raise ValueError(f"point {k}: label set must be non-empty")
            for lab in ls:
                if not isinstance(lab, (int, np.integer)) or not 0 <= lab < self.label_count:
                    raise ValueError(f"point {k}: label {lab!r} outside [0, {self.label_count})")
        ids = np.ascontiguousarray(self.ids, dtype=np.int64)
        if ids.shape != (feats.shape[0],):
            raise ValueError(f"ids must have shape ({feats.shape[0]},), got {ids.shape}")
        feats.flags.writeable = False
        ids.flags.writeable = False
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ids", ids)

    @classmethod
    def from_arrays(cls, features, labels, ids=None, label_count=None) -> "Dataset":
        labels = tuple(frozenset(ls) for ls in labels)
        if label_count is None:
            label_count = max((max(ls) for ls in labels if ls), default=-1) + 1
        if ids is None:
            ids = np.arange(len(labels), dtype=np.int64)
        return cls(features, labels, ids, label_count)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def classes(self) -> frozenset[int]:
        """All labels that actually occur in the dataset."""
        out: set[int] = set()
        for ls in self.labels:
            out |= ls
        return frozenset(out)

    @cached_property
    def label_matrix(self) -> np.ndarray:
        """Boolean (N, label_count) membership matrix."""
        mat = np.zeros((len(self), self.label_count), dtype=bool)
        for k, ls in enumerate(self.labels):
            mat[k, list(ls)] = True
        mat.flags.writeable = False
        return mat

    def point(self, position: int) -> LabeledPoint:
        return LabeledPoint(self.features[position], self.labels[position], int(self.ids[position]))

    def subset(self, positions) -> "Dataset":
        positions = np.asarray(positions, dtype=np.int64)
        return Dataset(
            self.features[positions],
            tuple(self.labels[p] for p in positions),
            self.ids[positions],
            self.label_count,
        )


@dataclass(frozen=True)
class SimilarityStats:
    """Pair counts over a set of unordered training pairs."""

    total: int
    similar: int
    dissimilar: int

    def __post_init__(self):
        if min(self.total, self.similar, self.dissimilar) < 0:
            raise ValueError("pair counts must be non-negative")
        if self.total != self.similar + self.dissimilar:
            raise ValueError(
                f"total ({self.total}) != similar ({self.similar}) + dissimilar ({self.dissimilar})"
            )


@dataclass(frozen=True)
class PairExample:
    """One training pair: dataset positions, similarity labels and loss weight."""

    i: int
    j: int
    similar: int
    continuous: float
    weight: float

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("a pair needs two distinct points")
        if self.similar not in (0, 1):
            raise ValueError(f"similar must be 0 or 1, got {self.similar}")
        if self.similar == 1 and not 0.0 < self.continuous <= 1.0:
            raise ValueError(f"continuous similarity {self.continuous} outside (0, 1]")
        if self.similar == 0 and self.continuous != 1.0:
            raise ValueError("dissimilar pairs carry continuous similarity 1")
        if not self.weight > 0.0:
            raise ValueError(f"weight must be positive, got {self.weight}")


def similarity_from_labels(labels_i, labels_j) -> int:
    """1 when the label sets share at least one label, else 0."""
    if not labels_i or not labels_j:
        raise ValueError("label sets must be non-empty")
    return 1 if set(labels_i) & set(labels_j) else 0


def continuous_similarity(labels_i, labels_j) -> float:
    """Jaccard overlap of two label sets."""
    a, b = set(labels_i), set(labels_j)
    if not a or not b:
        raise ValueError("label sets must be non-empty")
    return len(a & b) / len(a | b)


def _check_weighting_stats(stats: SimilarityStats) -> None:
    if stats.similar < 1 or stats.dissimilar < 1:
        raise DegenerateDatasetError(
            "imbalance weighting needs at least one similar and one dissimilar pair "
            f"(got similar={stats.similar}, dissimilar={stats.dissimilar})"
        )


def pair_weight(
    similar: int,
    continuous: float,
    stats: SimilarityStats,
    weighted: bool = True,
    use_continuous: bool = False,
) -> float:
    """Loss weight of one pair.

    ``c' * total/similar_count`` for similar pairs, ``c' * total/dissimilar_count``
    for dissimilar ones, where ``c'`` is the continuous similarity when
    ``use_continuous`` is set and 1 otherwise. With ``weighted`` off the weight
    is 1 regardless of the counts.
    """
    if similar not in (0, 1):
        raise ValueError(f"similar must be 0 or 1, got {similar}")
    if not 0.0 <= continuous <= 1.0:
        raise ValueError(f"continuous similarity {continuous} outside [0, 1]")
    if not weighted:
        return 1.0
    _check_weighting_stats(stats)
    if similar and use_continuous and continuous <= 0.0:
        raise ValueError("similar pairs need positive continuous similarity")
    scale = stats.total / (stats.similar if similar else stats.dissimilar)
    return (continuous if use_continuous else 1.0) * scale


def estimate_stats(dataset: Dataset, block: int = 1024) -> SimilarityStats:
    """Exact similar/dissimilar counts over all unordered pairs of the dataset."""
    n = len(dataset)
    if n < 2:
        raise ValueError("need at least 2 points to form pairs")
    members = dataset.label_matrix.astype(np.float32)
    overlapping = 0  # ordered pairs, self included
    for start in range(0, n, block):
        inter = members[start : start + block] @ members.T
        overlapping += int(np.count_nonzero(inter > 0.0))
    similar = (overlapping - n) // 2
    total = n * (n - 1) // 2
    return SimilarityStats(total=total, similar=similar, dissimilar=total - similar)


def pair_matrices(
    dataset: Dataset, positions, literal_dissimilar_overlap: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Similarity and continuous-similarity matrices for a batch of positions.

    Returns ``(similar, continuous)`` where ``similar`` is boolean (B, B) with a
    False diagonal and ``continuous`` holds the label Jaccard on similar pairs
    and 1.0 on dissimilar ones (unless ``literal_dissimilar_overlap``).
    """
    positions = np.asarray(positions, dtype=np.int64)
    members = dataset.label_matrix[positions].astype(np.float64)
    inter = members @ members.T
    sizes = members.sum(axis=1)
    union = sizes[:, np.newaxis] + sizes[np.newaxis, :] - inter
    jaccard = inter / union
    similar = inter > 0.0
    np.fill_diagonal(similar, False)
    if literal_dissimilar_overlap:
        continuous = jaccard
    else:
        continuous = np.where(similar, jaccard, 1.0)
    np.fill_diagonal(continuous, 1.0)
    return similar, continuous


def weight_matrix(
    similar: np.ndarray,
    continuous: np.ndarray,
    stats: SimilarityStats | None,
    weighted: bool = True,
    use_continuous: bool = False,
) -> np.ndarray:
    """Pairwise loss weights for a batch; diagonal entries are zeroed."""
    if not weighted:
        out = np.ones(similar.shape, dtype=np.float64)
    else:
        if stats is None:
            raise ValueError("weighted mode needs similarity stats")
        _check_weighting_stats(stats)
        scale = np.where(similar, stats.total / stats.similar, stats.total / stats.dissimilar)
        out = (continuous if use_continuous else 1.0) * scale
    out = np.array(out, dtype=np.float64)
    np.fill_diagonal(out, 0.0)
    return out


def sample_pair_batch(
    dataset: Dataset,
    batch_size: int,
    rng,
    stats: SimilarityStats | None = None,
    weighted: bool = True,
    use_continuous: bool = False,
) -> list[PairExample]:
    """Draw ``batch_size`` points without replacement and form all in-batch pairs."""
    if batch_size < 2:
        raise ValueError("batch_size must be at least 2")
    if batch_size > len(dataset):
        raise ValueError(f"batch_size {batch_size} exceeds dataset size {len(dataset)}")
    rng = np.random.default_rng(rng)
    positions = rng.choice(len(dataset), size=batch_size, replace=False)
    if weighted and stats is None:
        stats = estimate_stats(dataset)
    similar, continuous = pair_matrices(dataset, positions)
    weights = weight_matrix(similar, continuous, stats, weighted, use_continuous)
    pairs = []
    for a in range(batch_size):
        for b in range(a + 1, batch_size):
            s = int(similar[a, b])
            pairs.append(
                PairExample(
                    i=int(positions[a]),
                    j=int(positions[b]),
                    similar=s,
                    continuous=float(continuous[a, b]) if s else 1.0,
                    weight=float(weights[a, b]),
                )
            )
    return pairs


def _standard_split(dataset, fractions, rng):
    n = len(dataset)
    counts = [int(f * n) for f in fractions]
    if any(c < 1 for c in counts):
        raise ValueError(f"split of {n} points by fractions {fractions} leaves an empty part")
    perm = rng.permutation(n)
    bounds = np.cumsum(counts)
    return (
        dataset.subset(perm[: bounds[0]]),
        dataset.subset(perm[bounds[0] : bounds[1]]),
        dataset.subset(perm[bounds[1] : bounds[2]]),
    )


def _zero_shot_split(dataset, fractions, rng):
    classes = sorted(dataset.classes)
    if len(classes) < 2:
        raise ValueError("zero-shot split needs at least 2 distinct classes")
    train_frac, db_frac, query_frac = fractions
    n_query_classes = max(1, round(query_frac * len(classes)))
    if n_query_classes >= len(classes):
        raise ValueError("zero-shot split would leave no database classes")
    order = rng.permutation(len(classes))
    query_classes = {classes[k] for k in order[:n_query_classes]}

    query_pos, pool_pos = [], []
    for k, ls in enumerate(dataset.labels):
        if ls <= query_classes:
            query_pos.append(k)
        elif not ls & query_classes:
            pool_pos.append(k)
        # points straddling both class groups are dropped: keeping them on
        # either side would break the class disjointness this protocol is for
    if not query_pos or len(pool_pos) < 2:
        raise ValueError("zero-shot split produced an empty part")

    pool = rng.permutation(np.asarray(pool_pos, dtype=np.int64))
    n_train = int(len(pool) * train_frac / (train_frac + db_frac))
    if n_train < 1 or len(pool) - n_train < 1:
        raise ValueError("zero-shot split produced an empty train or database part")
    train = dataset.subset(pool[:n_train])
    database = dataset.subset(pool[n_train:])
    queries = dataset.subset(np.asarray(query_pos, dtype=np.int64))

    if queries.classes & (train.classes | database.classes):
        raise AssertionError("zero-shot split left overlapping classes")
    return train, database, queries


def split(dataset: Dataset, mode: str, fractions, rng_seed) -> tuple[Dataset, Dataset, Dataset]:
    """Partition a dataset into (train, database, queries).

    ``standard`` splits points at random by the three fractions. ``zero_shot``
    instead assigns a ``fractions[2]`` share of the *classes* to the query
    side, so query classes never occur in the train or database parts; the
    remaining points are split between train and database in proportion to the
    first two fractions.
    """
    if mode not in SPLIT_MODES:
        raise ValueError(f"mode must be one of {SPLIT_MODES}, got {mode!r}")
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise ValueError("fractions must have exactly three entries")
    if any(f <= 0 for f in fractions) or sum(fractions) > 1.0 + 1e-9:
        raise ValueError(f"fractions must be positive and sum to at most 1, got {fractions}")
    rng = np.random.default_rng(rng_seed)
    if mode == "standard":
        return _standard_split(dataset, fractions, rng)
    return _zero_shot_split(dataset, fractions, rng)


def generate_synthetic(
    classes: int,
    per_class: int,
    dim: int,
    spread: float = 4.0,
    multilabel: bool = False,
    rng_seed=0,
) -> Dataset:
    """Gaussian clusters around unit-norm class means with noise scale 1/spread.

    With ``multilabel`` each point gets its cluster label plus up to two extra
    labels from other classes, so label Jaccard takes values strictly between
    0 and 1.
    """
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if per_class < 1:
        raise ValueError("need at least 1 point per class")
    if dim < 2:
        raise ValueError("need at least 2 dimensions")
    if not spread > 0:
        raise ValueError("spread must be positive")
    rng = np.random.default_rng(rng_seed)
    means = rng.standard_normal((classes, dim))
    means /= np.maximum(np.linalg.norm(means, axis=1, keepdims=True), 1e-12)
    n = classes * per_class
    cluster = np.repeat(np.arange(classes), per_class)
    features = means[cluster] + rng.standard_normal((n, dim)) / spread
    labels: list[frozenset[int]] = []
    for k in range(n):
        ls = {int(cluster[k])}
        if multilabel:
            extra = int(rng.integers(0, 3))
            if extra:
                others = np.delete(np.arange(classes), cluster[k])
                ls |= {int(c) for c in rng.choice(others, size=extra, replace=False)}
        labels.append(frozenset(ls))
    return Dataset(features.astype(np.float32), tuple(labels), np.arange(n, dtype=np.int64), classes)


def generate_imbalanced(rng_seed=0) -> Dataset:
    """The imbalanced preset: many small clusters, ~110 dissimilar pairs per similar pair."""
    return generate_synthetic(rng_seed=rng_seed, **IMBALANCED_PRESET)


def write_feature_file(path, dataset: Dataset) -> None:
    """Write a dataset in the HNFV format (bit-exact across platforms)."""
    n, d, vocab = len(dataset), dataset.dim, dataset.label_count
    feat_bytes = dataset.features.astype("<f4").view(np.uint8).reshape(n, 4 * d)
    bitsets = np.packbits(dataset.label_matrix, axis=1, bitorder="little")
    with open(path, "wb") as fh:
        fh.write(_FEATURE_HEADER.pack(FEATURE_FILE_MAGIC, FEATURE_FILE_VERSION, n, d, vocab))
        fh.write(np.concatenate([feat_bytes, bitsets], axis=1).tobytes())


def read_feature_file(path) -> Dataset:
    """Read an HNFV file back into a :class:`Dataset` (ids are 0..N-1)."""
    with open(path, "rb") as fh:
        header = fh.read(_FEATURE_HEADER.size)
        if len(header) != _FEATURE_HEADER.size:
            raise ValueError(f"{path}: truncated header")
        magic, version, n, d, vocab = _FEATURE_HEADER.unpack(header)
        if magic != FEATURE_FILE_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if version != FEATURE_FILE_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        body = fh.read()
    bitset_bytes = (vocab + 7) // 8
    rec = 4 * d + bitset_bytes
    if n < 1 or len(body) != n * rec:
        raise ValueError(f"{path}: expected {n} records of {rec} bytes, got {len(body)} bytes")
    rows = np.frombuffer(body, dtype=np.uint8).reshape(n, rec)
    features = rows[:, : 4 * d].copy().view("<f4").astype(np.float32)
    bits = np.unpackbits(rows[:, 4 * d :], axis=1, bitorder="little")[:, :vocab]
    labels = tuple(frozenset(np.flatnonzero(row).tolist()) for row in bits)
    return Dataset(features, labels, np.arange(n, dtype=np.int64), vocab)


def read_points_csv(path) -> Dataset:
    """Ingest points from CSV rows of the form ``label1|label2,f_1,...,f_D``.

    Integer label tokens are used as-is; otherwise tokens are mapped to ids by
    sorted order, which keeps the mapping independent of row order.
    """
    raw_labels: list[list[str]] = []
    rows: list[list[float]] = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            tokens = [t.strip() for t in row[0].split("|") if t.strip()]
            if not tokens:
                raise ValueError(f"{path}: row {len(rows)}: empty label field")
            raw_labels.append(tokens)
            rows.append([float(v) for v in row[1:]])
    if not rows:
        raise ValueError(f"{path}: no data rows")
    dims = {len(r) for r in rows}
    if len(dims) != 1:
        raise ValueError(f"{path}: inconsistent feature dimensions {sorted(dims)}")
    all_tokens = {t for ts in raw_labels for t in ts}
    if all(t.lstrip("-").isdigit() for t in all_tokens):
        mapping = {t: int(t) for t in all_tokens}
    else:
        mapping = {t: k for k, t in enumerate(sorted(all_tokens))}
    labels = tuple(frozenset(mapping[t] for t in ts) for ts in raw_labels)
    return Dataset.from_arrays(np.asarray(rows, dtype=np.float32), labels)
