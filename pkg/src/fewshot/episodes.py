"""Datasets and N-way K-shot episode sampling.

A Dataset stores feature columns with integer-or-string class ids and a
class index; splits are class-level (train/val/test classes are disjoint)
because few-shot evaluation is about unseen classes, not unseen examples.
Episodes relabel their sampled classes to 1..N and keep support and query
sets disjoint by construction.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import ConfigError, DatasetFormatError, SamplingError


@dataclass
class Dataset:
    name: str
    features: np.ndarray          # D x count, float64
    labels: list                  # per-column class id
    split: str = "all"            # all | train | val | test
    class_to_indices: dict = field(init=False)

    def __post_init__(self):
        self.features = linalg.as_matrix(self.features)
        if self.features.shape[1] != len(self.labels):
            raise DatasetFormatError(
                f"{self.name}: {self.features.shape[1]} feature columns but "
                f"{len(self.labels)} labels")
        index: dict = {}
        for i, label in enumerate(self.labels):
            index.setdefault(label, []).append(i)
        self.class_to_indices = index

    @property
    def dim(self) -> int:
        return self.features.shape[0]

    @property
    def n_examples(self) -> int:
        return self.features.shape[1]

    @property
    def class_ids(self) -> list:
        return sorted(self.class_to_indices, key=str)

    def eligible_classes(self, min_examples: int) -> list:
        return [c for c in self.class_ids
                if len(self.class_to_indices[c]) >= min_examples]

    def subset_by_classes(self, class_ids, split: str) -> "Dataset":
        keep = [i for c in sorted(class_ids, key=str) for i in self.class_to_indices[c]]
        return Dataset(self.name,
                       np.ascontiguousarray(self.features[:, keep]),
                       [self.labels[i] for i in keep],
                       split=split)


@dataclass
class Episode:
    """One few-shot task; classes are relabeled to 1..N."""

    n_way: int
    k_shot: int
    q_queries: int
    support_x: np.ndarray   # D x (N*K), class 1's columns first
    support_y: np.ndarray   # (N*K,) values in 1..N
    query_x: np.ndarray     # D x (N*Q), grouped the same way
    query_y: np.ndarray     # (N*Q,) values in 1..N
    relabel: dict           # original class id -> 1..N

    def support_columns(self, label: int) -> np.ndarray:
        """The K support columns of episode class ``label`` (1-based)."""
        cols = np.flatnonzero(self.support_y == label)
        return np.ascontiguousarray(self.support_x[:, cols])

    def fingerprint(self) -> str:
        """Content hash used to assert that paired runs saw identical episodes."""
        h = hashlib.sha256()
        h.update(f"{self.n_way},{self.k_shot},{self.q_queries};".encode())
        h.update(",".join(str(k) for k in sorted(self.relabel, key=str)).encode())
        for arr in (self.support_x, self.support_y.astype(np.int64),
                    self.query_x, self.query_y.astype(np.int64)):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def sample_episode(dataset: Dataset, n_way: int, k_shot: int, q_queries: int,
                   rng: np.random.Generator) -> Episode:
    """Sample classes, then K+Q distinct examples per class, all uniformly
    without replacement. Deterministic given the rng state."""
    need = k_shot + q_queries
    eligible = dataset.eligible_classes(need)
    if len(eligible) < n_way:
        raise SamplingError(
            f"{dataset.name}: need {n_way} classes with >= {need} examples, "
            f"only {len(eligible)} eligible")
    picked = rng.choice(len(eligible), size=n_way, replace=False)
    support_cols, query_cols = [], []
    support_y, query_y = [], []
    relabel = {}
    for new_label, ci in enumerate(picked, start=1):
        class_id = eligible[ci]
        relabel[class_id] = new_label
        pool = dataset.class_to_indices[class_id]
        chosen = rng.choice(len(pool), size=need, replace=False)
        chosen = [pool[i] for i in chosen]
        support_cols.extend(chosen[:k_shot])
        query_cols.extend(chosen[k_shot:])
        support_y.extend([new_label] * k_shot)
        query_y.extend([new_label] * q_queries)
    return Episode(
        n_way, k_shot, q_queries,
        np.ascontiguousarray(dataset.features[:, support_cols]),
        np.array(support_y, dtype=np.int64),
        np.ascontiguousarray(dataset.features[:, query_cols]),
        np.array(query_y, dtype=np.int64),
        relabel)


def synth_gaussian(seed, n_classes: int, per_class: int, dim: int,
                   spread: float = 1.0, within_std: float = 1.0,
                   offset: float = 0.0, name: str = "synth") -> Dataset:
    """Isotropic Gaussian blobs around uniformly drawn class centers.

    Centers are uniform in [-spread, spread]^dim, then shifted by
    ``offset`` in every coordinate (the domain-shift knob: the same seed
    with a different offset yields translated copies of the same classes).
    """
    if n_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {n_classes}")
    if per_class < 1 or dim < 1:
        raise ConfigError("per_class and dim must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else linalg.rng_from_seed(seed)
    centers = rng.uniform(-spread, spread, size=(dim, n_classes)) + offset
    features = np.empty((dim, n_classes * per_class))
    labels = []
    for c in range(n_classes):
        start = c * per_class
        noise = rng.standard_normal((dim, per_class)) * within_std
        features[:, start : start + per_class] = centers[:, [c]] + noise
        labels.extend([c + 1] * per_class)
    return Dataset(name, features, labels)


def split_classes(dataset: Dataset, fractions, seed) -> tuple[Dataset, Dataset, Dataset]:
    """Class-level partition into (train, val, test).

    ``fractions`` is (train, val, test) summing to 1. Sizes are
    floor(val * C) and floor(test * C); the remainder goes to train.
    """
    if len(fractions) != 3:
        raise ConfigError(f"fractions must be (train, val, test), got {fractions}")
    f_train, f_val, f_test = (float(f) for f in fractions)
    if min(f_train, f_val, f_test) < 0.0 or abs(f_train + f_val + f_test - 1.0) > 1e-9:
        raise ConfigError(f"fractions must be nonnegative and sum to 1, got {fractions}")
    classes = dataset.class_ids
    rng = seed if isinstance(seed, np.random.Generator) else linalg.rng_from_seed(seed)
    order = [classes[i] for i in rng.permutation(len(classes))]
    n_val = int(len(classes) * f_val)
    n_test = int(len(classes) * f_test)
    val_ids = order[:n_val]
    test_ids = order[n_val : n_val + n_test]
    train_ids = order[n_val + n_test :]
    return (dataset.subset_by_classes(train_ids, "train"),
            dataset.subset_by_classes(val_ids, "val"),
            dataset.subset_by_classes(test_ids, "test"))


# -- CSV ingestion -----------------------------------------------------------
#
# Format: header line, then one row per example: label,feat_1,...,feat_D.
# UTF-8, '\n' or '\r\n' line endings, '.' decimal separator.


def load_csv(path) -> Dataset:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    lines = [ln for ln in lines]
    if not lines or not any(ln.strip() for ln in lines):
        raise DatasetFormatError(f"{path}: file is empty")
    header = lines[0].split(",")
    dim = len(header) - 1
    if dim < 1:
        raise DatasetFormatError(f"{path}: header must list at least one feature column")
    columns = []
    labels = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != dim + 1:
            raise DatasetFormatError(
                f"{path}: line {lineno} has {len(parts)} fields, expected {dim + 1}")
        raw_label = parts[0].strip()
        label = int(raw_label) if _is_int(raw_label) else raw_label
        feats = np.empty(dim)
        for j, tok in enumerate(parts[1:]):
            try:
                feats[j] = float(tok)
            except ValueError:
                raise DatasetFormatError(
                    f"{path}: line {lineno} has non-numeric feature {tok.strip()!r}"
                ) from None
        columns.append(feats)
        labels.append(label)
    if not columns:
        raise DatasetFormatError(f"{path}: no data rows after the header")
    return Dataset(str(path), np.column_stack(columns), labels)


def save_csv(dataset: Dataset, path) -> None:
    dim = dataset.dim
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("label," + ",".join(f"f{j + 1}" for j in range(dim)) + "\n")
        for i in range(dataset.n_examples):
            row = ",".join(repr(float(v)) for v in dataset.features[:, i])
            fh.write(f"{dataset.labels[i]},{row}\n")


def _is_int(tok: str) -> bool:
    try:
        int(tok)
        return True
    except ValueError:
        return False
