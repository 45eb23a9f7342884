"""Server side: encode labelled data, fit the classifier, windowed evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autoencoders import MultimodalAutoencoder, encode
from .errors import ConfigurationError, DataError, UsageError
from .nn_core import (
    DenseNetwork,
    SgdConfig,
    backward,
    build_network,
    forward,
    minibatches,
    nll_loss,
)


@dataclass(frozen=True, eq=False)
class LabelledDataset:
    modality: str
    x: np.ndarray
    y: np.ndarray
    classes: int

    def __post_init__(self):
        if self.modality not in ("A", "B"):
            raise UsageError(f"labelled data must be modality 'A' or 'B', got {self.modality!r}")
        if len(self.x) != len(self.y):
            raise DataError(f"{len(self.x)} rows but {len(self.y)} labels")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.classes):
            raise DataError(f"labels must lie in [0, {self.classes})")

    def __len__(self) -> int:
        return len(self.y)


@dataclass(frozen=True, eq=False)
class RepresentationDataset:
    h: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if len(self.h) != len(self.y):
            raise DataError(f"{len(self.h)} codes but {len(self.y)} labels")

    def __len__(self) -> int:
        return len(self.y)

    @staticmethod
    def concat(parts: list["RepresentationDataset"]) -> "RepresentationDataset":
        return RepresentationDataset(
            np.concatenate([p.h for p in parts]), np.concatenate([p.y for p in parts])
        )


@dataclass(frozen=True, eq=False)
class Classifier:
    """Single dense layer followed by log-softmax."""

    net: DenseNetwork

    def __post_init__(self):
        if self.net.activations[-1] != "log_softmax":
            raise ConfigurationError("classifier network must end in log_softmax")

    @classmethod
    def build(cls, h_size: int, classes: int, rng: np.random.Generator) -> "Classifier":
        return cls(build_network((h_size, classes), ("log_softmax",), rng))

    @property
    def classes(self) -> int:
        return self.net.output_size

    def log_proba(self, h: np.ndarray) -> np.ndarray:
        out, _ = forward(self.net, h)
        return out

    def predict(self, h: np.ndarray) -> np.ndarray:
        # np.argmax keeps the first maximum, i.e. the lowest class index on ties
        return np.argmax(self.log_proba(h), axis=1)


@dataclass(frozen=True)
class EvalReport:
    round: int
    accuracy: float
    per_sequence: list[float] = field(default_factory=list)

    @property
    def n_sequences(self) -> int:
        return len(self.per_sequence)


def encode_labelled(model: MultimodalAutoencoder, data: LabelledDataset) -> RepresentationDataset:
    return RepresentationDataset(encode(model, data.modality, data.x), data.y)


def classifier_loss(clf: Classifier, reps: RepresentationDataset) -> float:
    return nll_loss(clf.log_proba(reps.h), reps.y)[0]


def train_classifier(
    clf: Classifier, reps: RepresentationDataset, cfg: SgdConfig, rng: np.random.Generator
) -> Classifier:
    """Minibatch SGD on the negative log-likelihood; returns a new classifier."""
    if len(reps) == 0:
        raise DataError("cannot train a classifier on an empty representation set")
    if reps.y.min() < 0 or reps.y.max() >= clf.classes:
        raise DataError(f"labels must lie in [0, {clf.classes}), got max {reps.y.max()}")
    if reps.h.shape[1] != clf.net.input_size:
        raise ConfigurationError(
            f"classifier expects width {clf.net.input_size}, representations have {reps.h.shape[1]}"
        )
    net = clf.net
    for _ in range(cfg.epochs):
        for idx in minibatches(len(reps), cfg.batch_size, rng):
            out, cache = forward(net, reps.h[idx], True, rng, cfg.dropout_rate)
            _, grad_out = nll_loss(out, reps.y[idx])
            grads, _ = backward(net, cache, grad_out)
            net = net.with_params(net.params - cfg.learning_rate * grads)
    return Classifier(net)


def windowed_accuracy(pred: np.ndarray, truth: np.ndarray, window: int) -> list[float]:
    """Per-sequence accuracy over non-overlapping windows; the trailing partial window is dropped."""
    n_seq = len(truth) // window
    hits = (pred[: n_seq * window] == truth[: n_seq * window]).reshape(n_seq, window)
    return [float(v) for v in hits.mean(axis=1)]


def evaluate(
    model: MultimodalAutoencoder,
    clf: Classifier,
    test: LabelledDataset,
    window: int,
    round_index: int = 0,
) -> EvalReport:
    """Encode ``test`` with its own modality's encoder and score it window by window."""
    if window < 1:
        raise UsageError(f"window must be >= 1, got {window}")
    if len(test) < window:
        raise DataError(f"test set has {len(test)} rows, fewer than the window of {window}")
    pred = clf.predict(encode(model, test.modality, test.x))
    per_seq = windowed_accuracy(pred, test.y, window)
    return EvalReport(round_index, float(np.mean(per_seq)), per_seq)


def cross_modal_evaluate(
    model: MultimodalAutoencoder,
    clf: Classifier,
    test: LabelledDataset,
    window: int,
    round_index: int = 0,
) -> EvalReport:
    """Score a classifier fitted on one modality's codes against another modality.

    Both encoders emit codes of the same width, so this is :func:`evaluate`
    with no adaptation; it exists to make the cross-modal intent explicit.
    """
    if model.f_a.output_size != model.f_b.output_size:
        raise ConfigurationError("cross-modal evaluation needs equal code widths")
    return evaluate(model, clf, test, window, round_index)
