"""Dataset construction, non-IID partitioning, and attack-target sampling.

Datasets are float64 feature matrices with int64 labels. Client partitions
are index lists into a training dataset, produced by a per-class Dirichlet
allocation whose concentration parameter alpha controls how far the client
label distributions drift from uniform (small alpha means near single-class
clients). All sampling goes through explicit seeds.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, NumericError

_VARIANCE_DECAY = 1.2  # feature j has variance (j+1) ** -1.2, 1-based


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got ndim={self.features.ndim}")
        n = self.features.shape[0]
        if n < 1:
            raise ValueError("dataset must hold at least one record")
        if self.labels.shape != (n,):
            raise ValueError(
                f"labels shape {self.labels.shape} does not match {n} records"
            )
        if not np.isfinite(self.features).all():
            raise NumericError("dataset features contain non-finite values")
        if self.class_count < 1:
            raise ValueError(f"class_count must be >= 1, got {self.class_count}")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ValueError(
                f"labels must lie in [0, {self.class_count}), got "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        """New dataset holding the selected records (copies)."""
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.class_count)


def gen_synthetic(n: int, dim: int, classes: int, seed: int) -> Dataset:
    """Draw a labelled classification set from a fixed random linear teacher.

    The recipe, in draw order, all from one generator seeded with ``seed``:
      1. teacher weights W (classes x dim) and bias b (classes,), standard normal
      2. features x with independent zero-mean normal coordinates whose
         variance decays as j ** -1.2 for 1-based coordinate j
      3. label = argmax(softmax(W x + b)), which is argmax of the logits
         because softmax is monotone

    Every call with the same arguments reproduces the same dataset bit for bit.
    """
    if n < 1 or dim < 1 or classes < 2:
        raise ValueError(f"need n >= 1, dim >= 1, classes >= 2; got {n}, {dim}, {classes}")
    rng = np.random.default_rng(seed)
    teacher_w = rng.standard_normal((classes, dim))
    teacher_b = rng.standard_normal(classes)
    scales = (np.arange(1, dim + 1, dtype=float)) ** (-_VARIANCE_DECAY / 2.0)
    features = rng.standard_normal((n, dim)) * scales
    labels = np.argmax(features @ teacher_w.T + teacher_b, axis=1)
    return Dataset(features, labels.astype(np.int64), classes)


def load_csv_dataset(path: str, label_column: str) -> Dataset:
    """Read a dataset from a headered CSV file.

    Every non-label column is parsed as a float feature in header order; the
    label column is parsed as a non-negative integer. The class count is one
    plus the largest label. Parse problems raise FormatError naming the
    offending 1-based file line (the header is line 1).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if label_column not in header:
            raise FormatError(f"{path}: no '{label_column}' column in header")
        label_pos = header.index(label_column)
        feature_pos = [i for i in range(len(header)) if i != label_pos]
        if not feature_pos:
            raise FormatError(f"{path}: no feature columns besides '{label_column}'")

        rows = []
        labels = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise FormatError(
                    f"{path}: line {line_no}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                values = [float(row[i]) for i in feature_pos]
            except ValueError:
                raise FormatError(
                    f"{path}: line {line_no}: non-numeric feature value"
                ) from None
            if not all(np.isfinite(values)):
                raise FormatError(f"{path}: line {line_no}: non-finite feature value")
            try:
                label = int(row[label_pos])
            except ValueError:
                raise FormatError(
                    f"{path}: line {line_no}: label '{row[label_pos]}' is not an integer"
                ) from None
            if label < 0:
                raise FormatError(f"{path}: line {line_no}: negative label {label}")
            rows.append(values)
            labels.append(label)

    if not rows:
        raise FormatError(f"{path}: no data rows")
    label_arr = np.asarray(labels, dtype=np.int64)
    return Dataset(np.asarray(rows, dtype=float), label_arr, int(label_arr.max()) + 1)


def write_csv_dataset(dataset: Dataset, path: str, label_column: str = "label"):
    """Write a dataset as CSV with feature columns f0..f{d-1} plus a label
    column. Floats use repr, so a load round-trips the values exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{j}" for j in range(dataset.dim)] + [label_column])
        for x, y in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in x] + [int(y)])


def train_test_split(data: Dataset, ratio: float, seed: int):
    """Shuffle records with the given seed and split into (train, test).

    The train side receives exactly floor(n * ratio) records; both sides must
    be non-empty, which any ratio strictly inside (0, 1) guarantees as long as
    floor(n * ratio) >= 1.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must lie in (0, 1), got {ratio}")
    n_train = int(np.floor(data.n * ratio))
    if n_train < 1:
        raise ValueError(f"split leaves an empty train side (n={data.n}, ratio={ratio})")
    order = np.random.default_rng(seed).permutation(data.n)
    return data.subset(order[:n_train]), data.subset(order[n_train:])


@dataclass
class ClientPartition:
    """Disjoint per-client index lists covering a training dataset."""

    client_indices: list[np.ndarray]
    alpha: float
    sizes: np.ndarray = field(init=False)

    def __post_init__(self):
        self.client_indices = [
            np.asarray(idx, dtype=np.int64) for idx in self.client_indices
        ]
        self.sizes = np.asarray([len(idx) for idx in self.client_indices])

    @property
    def client_count(self) -> int:
        return len(self.client_indices)

    @property
    def total(self) -> int:
        return int(self.sizes.sum())


def _check_partition(partition: ClientPartition, n: int):
    merged = np.concatenate(partition.client_indices)
    if len(merged) != n or not np.array_equal(np.sort(merged), np.arange(n)):
        raise AssertionError("partition does not cover the training set exactly")


def _largest_remainder_counts(proportions: np.ndarray, total: int) -> np.ndarray:
    # Integer allocation that sums to total exactly: floor the quotas, then
    # hand the leftover records to the largest fractional remainders (ties go
    # to the lowest client index via stable sort).
    quotas = proportions * total
    counts = np.floor(quotas).astype(np.int64)
    leftover = total - int(counts.sum())
    order = np.argsort(-(quotas - counts), kind="stable")
    counts[order[:leftover]] += 1
    return counts


def dirichlet_partition(
    labels: np.ndarray, clients: int, alpha: float, seed: int
) -> ClientPartition:
    """Split record indices across clients with per-class Dirichlet draws.

    For each class in ascending order, a proportion vector is drawn from
    Dirichlet(alpha * ones(clients)) and the class's records (shuffled) are
    allocated by largest-remainder rounding, so per-class counts always sum to
    the class size. Clients left empty are repaired by taking one record from
    the currently largest client. Deterministic per seed.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if clients < 1:
        raise ValueError(f"need at least one client, got {clients}")
    if clients > n:
        raise ValueError(f"cannot spread {n} records over {clients} clients")
    if not alpha > 0.0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    class_sizes = np.bincount(labels)
    empty_classes = np.flatnonzero(class_sizes == 0)
    if len(empty_classes) > 0:
        raise ValueError(f"classes without records: {empty_classes.tolist()}")

    rng = np.random.default_rng(seed)
    assigned: list[list[np.ndarray]] = [[] for _ in range(clients)]
    for cls in range(len(class_sizes)):
        proportions = rng.dirichlet(np.full(clients, alpha))
        if not np.isfinite(proportions).all():
            # Tiny alpha can underflow every gamma draw to zero; collapse to a
            # single random client, the alpha -> 0 limit of the distribution.
            proportions = np.zeros(clients)
            proportions[rng.integers(clients)] = 1.0
        assert abs(proportions.sum() - 1.0) <= 1e-9
        class_idx = rng.permutation(np.flatnonzero(labels == cls))
        counts = _largest_remainder_counts(proportions, len(class_idx))
        for k, chunk in enumerate(np.split(class_idx, np.cumsum(counts)[:-1])):
            assigned[k].append(chunk)

    pooled = [
        np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int64)
        for chunks in assigned
    ]
    for k in range(clients):
        # Guarantee every client at least one record; clients >= n was checked.
        while len(pooled[k]) == 0:
            donor = int(np.argmax([len(p) for p in pooled]))
            pooled[k] = pooled[donor][-1:]
            pooled[donor] = pooled[donor][:-1]

    partition = ClientPartition(pooled, alpha)
    _check_partition(partition, n)
    return partition


@dataclass
class TargetSet:
    """Attack targets: records drawn from client slices with known owners."""

    features: np.ndarray
    labels: np.ndarray
    true_source: np.ndarray
    record_indices: np.ndarray

    @property
    def count(self) -> int:
        return len(self.true_source)


def sample_targets(
    partition: ClientPartition, data: Dataset, per_client: int, seed: int
) -> TargetSet:
    """Draw ``per_client`` records without replacement from every client's
    slice, in ascending client order. Raises if any slice is too small."""
    if per_client < 1:
        raise ValueError(f"per_client must be >= 1, got {per_client}")
    for k, idx in enumerate(partition.client_indices):
        if len(idx) < per_client:
            raise ValueError(
                f"client {k} holds {len(idx)} records, cannot sample {per_client}"
            )
    rng = np.random.default_rng(seed)
    chosen = []
    owners = []
    for k, idx in enumerate(partition.client_indices):
        picks = rng.choice(idx, size=per_client, replace=False)
        chosen.append(picks)
        owners.append(np.full(per_client, k, dtype=np.int64))
    record_indices = np.concatenate(chosen)
    return TargetSet(
        features=data.features[record_indices].copy(),
        labels=data.labels[record_indices].copy(),
        true_source=np.concatenate(owners),
        record_indices=record_indices,
    )
