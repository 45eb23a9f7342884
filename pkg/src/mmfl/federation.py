"""Round engine: client selection, modality-aware local training, Mm-FedAvg."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autoencoders import (
    NET_NAMES,
    AlignedBatch,
    DccaeConfig,
    MultimodalAutoencoder,
    ae_loss_and_grads,
    dccae_loss_and_grads,
    splitae_loss_and_grads,
)
from .data_layer import ClientSpec
from .errors import ConfigurationError, ProtocolError
from .nn_core import SgdConfig, minibatches

AE_KINDS = ("splitae", "dccae")

# networks each client kind is allowed to change
TOUCHED = {"A": ("f_a", "g_a"), "B": ("f_b", "g_b"), "AB": NET_NAMES}


@dataclass(frozen=True)
class FederationConfig:
    rounds: int = 100
    selection_fraction: float = 0.1
    alpha: float = 100.0
    local_sgd: SgdConfig = field(default_factory=lambda: SgdConfig(learning_rate=0.01, epochs=2))
    ae_kind: str = "splitae"
    dccae: DccaeConfig = field(default_factory=DccaeConfig)

    def validate(self, prefix: str = "federation", h_size: int | None = None) -> list[str]:
        errors = []
        if int(self.rounds) != self.rounds or self.rounds < 1:
            errors.append(f"{prefix}.rounds must be a positive integer, got {self.rounds}")
        if not 0 < self.selection_fraction <= 1:
            errors.append(
                f"{prefix}.selection_fraction must lie in (0, 1], got {self.selection_fraction}"
            )
        if not self.alpha > 0:
            errors.append(f"{prefix}.alpha must be > 0, got {self.alpha}")
        if self.ae_kind not in AE_KINDS:
            errors.append(f"{prefix}.ae_kind must be one of {AE_KINDS}, got {self.ae_kind!r}")
        errors += self.local_sgd.validate(f"{prefix}.local_sgd")
        errors += self.dccae.validate(h_size, f"{prefix}.dccae")
        return errors


@dataclass(frozen=True, eq=False)
class LocalUpdate:
    client_id: int
    modality: str
    model: MultimodalAutoencoder
    n_k: int
    mean_loss: float = float("nan")


@dataclass(frozen=True, eq=False)
class RoundResult:
    model: MultimodalAutoencoder
    selected: list[int]
    updates: list[LocalUpdate]

    @property
    def mean_local_loss(self) -> float:
        return float(np.mean([u.mean_loss for u in self.updates]))


def client_rng(round_seed: int, client_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([round_seed, client_id]))


def local_train(
    global_model: MultimodalAutoencoder,
    client: ClientSpec,
    cfg: FederationConfig,
    rng: np.random.Generator,
) -> LocalUpdate:
    """Train the parts of ``global_model`` that match the client's data.

    Unimodal clients run plain autoencoder training on their own
    encoder/decoder and leave the other pair untouched.  Multimodal clients
    train all four networks with the configured objective; for the split
    autoencoder consecutive minibatches alternate the input modality.
    """
    sgd = cfg.local_sgd
    if sgd.validate():
        raise ConfigurationError("; ".join(sgd.validate()))
    if client.modality == "AB":
        batch: AlignedBatch = client.data
        if batch.x_a.shape[1] != global_model.input_size_a or batch.x_b.shape[1] != global_model.input_size_b:
            raise ConfigurationError(f"client {client.id} data widths do not match the model")
    else:
        width = global_model.input_size_a if client.modality == "A" else global_model.input_size_b
        if client.data.shape[1] != width:
            raise ConfigurationError(
                f"client {client.id} has width {client.data.shape[1]}, modality {client.modality} expects {width}"
            )

    model = global_model
    losses = []
    step = 0
    lr, drop = sgd.learning_rate, sgd.dropout_rate
    batch_size = sgd.batch_size
    min_rows = 1
    if client.modality == "AB" and cfg.ae_kind == "dccae":
        # covariance estimates need enough rows per batch to stay well conditioned
        min_rows = 2 * global_model.h_size
        batch_size = max(batch_size, min_rows)
    for _ in range(sgd.epochs):
        for idx in minibatches(client.n_k, batch_size, rng):
            if len(idx) < min_rows:
                continue
            if client.modality == "AB":
                part = client.data.take(idx)
                if cfg.ae_kind == "dccae":
                    loss, grads = dccae_loss_and_grads(model, part, cfg.dccae, rng, drop)
                else:
                    loss, grads = splitae_loss_and_grads(model, "AB"[step % 2], part, rng, drop)
            else:
                f, g = TOUCHED[client.modality]
                loss, gf, gg = ae_loss_and_grads(
                    getattr(model, f), getattr(model, g), client.data[idx], rng, drop
                )
                grads = {f: gf, g: gg}
            model = model.apply_gradients(grads, lr)
            losses.append(loss)
            step += 1
    return LocalUpdate(
        client.id, client.modality, model, client.n_k, float(np.mean(losses)) if losses else float("nan")
    )


def aggregation_weights(updates: Sequence[LocalUpdate], alpha: float, side: str) -> dict[int, float]:
    """Coefficient of each contributing update on one modality side (``"A"`` or ``"B"``).

    Multimodal contributions are scaled by ``alpha`` in both the numerator and
    the normaliser, so the coefficients sum to one whenever anyone contributes.
    """
    raw = {}
    for pos, u in enumerate(updates):
        if u.modality == side:
            raw[pos] = float(u.n_k)
        elif u.modality == "AB":
            raw[pos] = alpha * u.n_k
    total = sum(raw.values())
    return {pos: w / total for pos, w in raw.items()} if total > 0 else {}


def mm_fedavg(
    updates: Sequence[LocalUpdate],
    alpha: float,
    previous: MultimodalAutoencoder | None = None,
) -> MultimodalAutoencoder:
    """Multimodal FedAvg over absolute local models.

    A modality side with no contributor this round is carried over from
    ``previous`` (or, when omitted, from the first update, whose copy of that
    side is frozen and therefore identical to the distributed model).
    """
    if not updates:
        raise ProtocolError("mm_fedavg received no local updates")
    base = previous if previous is not None else updates[0].model
    for u in updates:
        if not u.model.same_architecture(base):
            raise ConfigurationError(f"update from client {u.client_id} has a different architecture")
    new_params = {}
    for side, nets in (("A", ("f_a", "g_a")), ("B", ("f_b", "g_b"))):
        weights = aggregation_weights(updates, alpha, side)
        if not weights:
            continue
        for name in nets:
            acc = np.zeros_like(getattr(base, name).params)
            # fixed summation order keeps the result independent of list order
            for pos in sorted(weights, key=lambda p: updates[p].client_id):
                acc += weights[pos] * getattr(updates[pos].model, name).params
            new_params[name] = acc
    return base.with_params(**new_params)


def selection_count(population: int, fraction: float) -> int:
    return max(1, min(population, math.ceil(fraction * population - 1e-9)))


def select_clients(
    population: Sequence[ClientSpec], fraction: float, rng: np.random.Generator
) -> list[ClientSpec]:
    """Uniform sample without replacement, returned in client-id order."""
    if not population:
        raise ProtocolError("cannot select from an empty population")
    k = selection_count(len(population), fraction)
    picked = rng.choice(len(population), size=k, replace=False)
    return sorted((population[i] for i in picked), key=lambda c: c.id)


def run_round(
    global_model: MultimodalAutoencoder,
    population: Sequence[ClientSpec],
    cfg: FederationConfig,
    rng: np.random.Generator,
) -> RoundResult:
    selected = select_clients(population, cfg.selection_fraction, rng)
    round_seed = int(rng.integers(2**63 - 1))
    updates = [
        local_train(global_model, client, cfg, client_rng(round_seed, client.id))
        for client in selected
    ]
    model = mm_fedavg(updates, cfg.alpha, previous=global_model)
    return RoundResult(model, [c.id for c in selected], updates)
