"""Synthetic two-view corpora, feature-file ingestion, and client partitioning."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autoencoders import AlignedBatch
from .errors import ConfigurationError, DataError


@dataclass(frozen=True)
class SyntheticConfig:
    latent_dim: int = 6
    classes: int = 6
    dim_a: int = 24
    dim_b: int = 15
    noise_std: float = 0.5
    samples_per_class: int = 600
    run_length: int = 20
    mixing_seed: int = 0

    def validate(self, prefix: str = "data") -> list[str]:
        errors = []
        if self.latent_dim < 1:
            errors.append(f"{prefix}.latent_dim must be >= 1, got {self.latent_dim}")
        if self.classes < 2:
            errors.append(f"{prefix}.classes must be >= 2, got {self.classes}")
        if self.dim_a < 1 or self.dim_b < 1:
            errors.append(f"{prefix}.dim_a and {prefix}.dim_b must be >= 1")
        if not self.noise_std > 0:
            errors.append(f"{prefix}.noise_std must be > 0, got {self.noise_std}")
        if self.samples_per_class < 1:
            errors.append(f"{prefix}.samples_per_class must be >= 1, got {self.samples_per_class}")
        if self.run_length < 1:
            errors.append(f"{prefix}.run_length must be >= 1, got {self.run_length}")
        return errors


@dataclass(frozen=True, eq=False)
class MultimodalCorpus:
    """Row-aligned modality matrices with one label per row, in time order."""

    x_a: np.ndarray
    x_b: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if not len(self.x_a) == len(self.x_b) == len(self.y):
            raise DataError(
                f"corpus parts disagree on row count: {len(self.x_a)}, {len(self.x_b)}, {len(self.y)}"
            )

    def __len__(self) -> int:
        return len(self.y)

    @property
    def classes(self) -> int:
        return int(self.y.max()) + 1 if len(self.y) else 0

    def take(self, idx) -> "MultimodalCorpus":
        return MultimodalCorpus(self.x_a[idx], self.x_b[idx], self.y[idx])

    def modality(self, modality: str) -> np.ndarray:
        if modality == "A":
            return self.x_a
        if modality == "B":
            return self.x_b
        raise DataError(f"unknown modality {modality!r}")


@dataclass(frozen=True)
class PartitionConfig:
    n_clients_ab: int = 30
    n_clients_a: int = 0
    n_clients_b: int = 0
    client_fraction: float = 1 / 15
    test_fraction: float = 0.1

    @property
    def n_clients(self) -> int:
        return self.n_clients_ab + self.n_clients_a + self.n_clients_b

    def validate(self, prefix: str = "partition") -> list[str]:
        errors = []
        if min(self.n_clients_ab, self.n_clients_a, self.n_clients_b) < 0:
            errors.append(f"{prefix}: client counts must be non-negative")
        if self.n_clients < 1:
            errors.append(f"{prefix}: at least one client is required")
        if not 0 < self.client_fraction <= 1:
            errors.append(f"{prefix}.client_fraction must lie in (0, 1], got {self.client_fraction}")
        if not 0 < self.test_fraction < 1:
            errors.append(f"{prefix}.test_fraction must lie in (0, 1), got {self.test_fraction}")
        return errors


@dataclass(frozen=True, eq=False)
class ClientSpec:
    """One simulated client.  Unimodal clients hold a bare matrix and no labels."""

    id: int
    modality: str
    data: np.ndarray | AlignedBatch

    def __post_init__(self):
        if self.modality == "AB":
            if not isinstance(self.data, AlignedBatch):
                raise ConfigurationError("a multimodal client needs an AlignedBatch")
        elif self.modality in ("A", "B"):
            if not isinstance(self.data, np.ndarray) or self.data.ndim != 2:
                raise ConfigurationError("a unimodal client needs a 2-D feature matrix")
        else:
            raise ConfigurationError(f"unknown client modality {self.modality!r}")
        if self.n_k < 1:
            raise DataError(f"client {self.id} has no samples")

    @property
    def n_k(self) -> int:
        return len(self.data)


@dataclass(frozen=True, eq=False)
class Partition:
    clients: list[ClientSpec]
    server: MultimodalCorpus
    test: MultimodalCorpus
    train: MultimodalCorpus
    train_index: np.ndarray
    test_index: np.ndarray
    client_index: dict[int, np.ndarray]
    server_index: np.ndarray


def generate_synthetic(cfg: SyntheticConfig, rng: np.random.Generator) -> MultimodalCorpus:
    """Linear shared-latent corpus.

    Each class has a latent prototype; a sample's latent is its prototype plus
    N(0, 0.3^2) jitter, and each view is a fixed random linear map of the
    latent plus N(0, noise_std^2).  The mixing maps come from
    ``cfg.mixing_seed``; everything else from ``rng``.  Rows are laid out as
    contiguous same-class runs of ``run_length`` in shuffled order.
    """
    mix = np.random.default_rng(cfg.mixing_seed)
    w_a = mix.normal(size=(cfg.dim_a, cfg.latent_dim)) / np.sqrt(cfg.latent_dim)
    w_b = mix.normal(size=(cfg.dim_b, cfg.latent_dim)) / np.sqrt(cfg.latent_dim)

    prototypes = rng.normal(size=(cfg.classes, cfg.latent_dim))
    runs = []
    for c in range(cfg.classes):
        for start in range(0, cfg.samples_per_class, cfg.run_length):
            runs.append((c, min(cfg.run_length, cfg.samples_per_class - start)))
    order = rng.permutation(len(runs))
    y = np.concatenate([np.full(runs[i][1], runs[i][0], dtype=np.int64) for i in order])

    z = prototypes[y] + rng.normal(scale=0.3, size=(len(y), cfg.latent_dim))
    x_a = z @ w_a.T + rng.normal(scale=cfg.noise_std, size=(len(y), cfg.dim_a))
    x_b = z @ w_b.T + rng.normal(scale=cfg.noise_std, size=(len(y), cfg.dim_b))
    return MultimodalCorpus(x_a, x_b, y)


def label_runs(y: np.ndarray) -> list[np.ndarray]:
    """Split row indices into maximal runs of equal consecutive labels."""
    if len(y) == 0:
        return []
    cuts = np.flatnonzero(np.diff(y)) + 1
    return np.split(np.arange(len(y)), cuts)


def slice_length(n_train: int, fraction: float) -> int:
    return int(math.floor(fraction * n_train + 1e-9))


def _checked_length(n: int, fraction: float) -> int:
    length = slice_length(n, fraction)
    if length < 1 or length > n:
        raise ConfigurationError(f"client_fraction {fraction} gives slice length {length} for {n} rows")
    return length


def _draw_slice(n: int, length: int, rng: np.random.Generator) -> np.ndarray:
    start = int(rng.integers(0, n - length + 1))
    return np.arange(start, start + length)


def sample_clients(
    train: MultimodalCorpus,
    cfg: PartitionConfig,
    rng: np.random.Generator,
    length: int | None = None,
) -> tuple[list[ClientSpec], dict[int, np.ndarray]]:
    """Give each client one random contiguous slice of ``train``.

    Ids run multimodal first, then A, then B.  Unimodal clients keep only their
    modality's columns and never see labels.  ``length`` defaults to
    ``client_fraction`` of ``len(train)``.  Also returns each client's row
    indices into ``train``.
    """
    if length is None:
        length = _checked_length(len(train), cfg.client_fraction)
    clients, rows_by_client = [], {}
    kinds = ["AB"] * cfg.n_clients_ab + ["A"] * cfg.n_clients_a + ["B"] * cfg.n_clients_b
    for cid, kind in enumerate(kinds):
        rows = _draw_slice(len(train), length, rng)
        part = train.take(rows)
        if kind == "AB":
            data = AlignedBatch(part.x_a, part.x_b)
        else:
            data = part.modality(kind).copy()
        clients.append(ClientSpec(cid, kind, data))
        rows_by_client[cid] = rows
    return clients, rows_by_client


def partition_clients(
    corpus: MultimodalCorpus,
    cfg: PartitionConfig,
    rng: np.random.Generator,
    standardize_features: bool = False,
) -> Partition:
    """Hold out a test tail, then hand out random contiguous training slices.

    Label runs are shuffled as whole segments before the tail split so the
    test set keeps its sequence structure.  Every slice, the server's labelled
    one and each client's, has ``floor(client_fraction * len(corpus))`` rows.
    The server slice is drawn first, then client slices in id order:
    multimodal, then A, then B.  Slices may overlap each other but never touch
    the test rows.  With ``standardize_features`` every returned matrix is
    scaled by statistics of the training portion.
    """
    errors = cfg.validate()
    if errors:
        raise ConfigurationError("; ".join(errors))
    runs = label_runs(corpus.y)
    shuffled = np.concatenate([runs[i] for i in rng.permutation(len(runs))])
    n_test = int(math.ceil(cfg.test_fraction * len(corpus)))
    train_index, test_index = shuffled[: len(corpus) - n_test], shuffled[len(corpus) - n_test :]
    train = corpus.take(train_index)
    test = corpus.take(test_index)
    if standardize_features:
        stats = fit_standardizer(train)
        train, test = standardize(train, stats), standardize(test, stats)
    length = _checked_length(len(corpus), cfg.client_fraction)
    if length > len(train):
        raise ConfigurationError(f"slice length {length} exceeds the {len(train)} training rows")
    server_rows = _draw_slice(len(train), length, rng)
    clients, rows = sample_clients(train, cfg, rng, length)
    client_index = {cid: train_index[r] for cid, r in rows.items()}
    return Partition(
        clients=clients,
        server=train.take(server_rows),
        test=test,
        train=train,
        train_index=train_index,
        test_index=test_index,
        client_index=client_index,
        server_index=train_index[server_rows],
    )


@dataclass(frozen=True)
class ColumnStats:
    mean_a: np.ndarray
    std_a: np.ndarray
    mean_b: np.ndarray
    std_b: np.ndarray


def _column_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if len(x) < 2:
        raise DataError("column statistics need at least 2 rows")
    std = x.std(axis=0)
    constant = std == 0
    # constant columns pass through unchanged
    return np.where(constant, 0.0, x.mean(axis=0)), np.where(constant, 1.0, std)


def fit_standardizer(corpus: MultimodalCorpus) -> ColumnStats:
    """Per-column mean and population std; zero-variance columns get mean 0, std 1."""
    mean_a, std_a = _column_stats(corpus.x_a)
    mean_b, std_b = _column_stats(corpus.x_b)
    return ColumnStats(mean_a, std_a, mean_b, std_b)


def standardize(corpus: MultimodalCorpus, stats: ColumnStats) -> MultimodalCorpus:
    return MultimodalCorpus(
        (corpus.x_a - stats.mean_a) / stats.std_a,
        (corpus.x_b - stats.mean_b) / stats.std_b,
        corpus.y,
    )


@dataclass(frozen=True)
class FileSchema:
    delimiter: str = ","
    header: bool = True


def read_feature_file(path: str | Path, schema: FileSchema = FileSchema()) -> np.ndarray:
    rows = []
    width = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        for line_no, row in enumerate(reader, start=1):
            if schema.header and line_no == 1:
                continue
            if not row:
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"{path}: line {line_no} has {len(row)} columns, expected {width}")
            values = []
            for col, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric value {cell!r} at line {line_no}, column {col}"
                    ) from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: non-finite value {cell!r} at line {line_no}, column {col}")
                values.append(v)
            rows.append(values)
    return np.array(rows, dtype=np.float64).reshape(len(rows), width or 0)


def read_label_file(path: str | Path, schema: FileSchema = FileSchema()) -> np.ndarray:
    raw = read_feature_file(path, schema)
    if raw.shape[1] != 1:
        raise DataError(f"{path}: label file must have exactly one column, got {raw.shape[1]}")
    labels = raw[:, 0]
    bad = np.flatnonzero((labels != np.round(labels)) | (labels < 0))
    if bad.size:
        line = bad[0] + 1 + int(schema.header)
        raise DataError(f"{path}: label at line {line} is not a non-negative integer: {labels[bad[0]]}")
    return labels.astype(np.int64)


def ingest_features(
    path_a: str | Path,
    path_b: str | Path,
    path_labels: str | Path,
    schema: FileSchema = FileSchema(),
    classes: int | None = None,
) -> MultimodalCorpus:
    x_a = read_feature_file(path_a, schema)
    x_b = read_feature_file(path_b, schema)
    y = read_label_file(path_labels, schema)
    if not len(x_a) == len(x_b) == len(y):
        raise DataError(
            f"row counts differ: {path_a} has {len(x_a)}, {path_b} has {len(x_b)}, "
            f"{path_labels} has {len(y)}"
        )
    if classes is not None and len(y) and y.max() + 1 > classes:
        raise DataError(f"labels reach class {y.max()}, but only {classes} classes are configured")
    return MultimodalCorpus(x_a, x_b, y)


def write_features(corpus: MultimodalCorpus, path_a, path_b, path_labels, schema: FileSchema = FileSchema()):
    """Inverse of :func:`ingest_features`; floats are written with ``repr`` so reads round-trip exactly."""
    for path, x, prefix in ((path_a, corpus.x_a, "a"), (path_b, corpus.x_b, "b")):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, delimiter=schema.delimiter)
            if schema.header:
                writer.writerow([f"{prefix}{j}" for j in range(x.shape[1])])
            writer.writerows([[repr(float(v)) for v in row] for row in x])
    with open(path_labels, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=schema.delimiter)
        if schema.header:
            writer.writerow(["label"])
        writer.writerows([[int(v)] for v in corpus.y])

