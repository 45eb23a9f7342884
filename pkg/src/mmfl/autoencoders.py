"""Plain, split, and canonically correlated autoencoders over two modalities.

Every objective here returns its scalar loss together with gradients keyed by
network name (``"f_a"``, ``"g_a"``, ``"f_b"``, ``"g_b"``).  Networks that an
objective does not touch get an all-zero gradient so callers can apply the
update dictionary uniformly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, DataError, UsageError
from .nn_core import DenseNetwork, backward, build_network, forward, mse_loss

NET_NAMES = ("f_a", "g_a", "f_b", "g_b")
MODALITIES = ("A", "B")


def default_hidden_width(h_size: int, input_size: int) -> int:
    return max(2 * h_size, math.ceil(input_size / 2))


def build_encoder(input_size: int, h_size: int, rng: np.random.Generator) -> DenseNetwork:
    hidden = default_hidden_width(h_size, input_size)
    return build_network((input_size, hidden, h_size), ("tanh", "identity"), rng)


def build_decoder(h_size: int, output_size: int, rng: np.random.Generator) -> DenseNetwork:
    hidden = default_hidden_width(h_size, output_size)
    return build_network((h_size, hidden, output_size), ("tanh", "identity"), rng)


@dataclass(frozen=True, eq=False)
class MultimodalAutoencoder:
    """Encoder/decoder pairs for modalities A and B sharing one code width."""

    f_a: DenseNetwork
    g_a: DenseNetwork
    f_b: DenseNetwork
    g_b: DenseNetwork

    def __post_init__(self):
        h = self.f_a.output_size
        if self.f_b.output_size != h or self.g_a.input_size != h or self.g_b.input_size != h:
            raise ConfigurationError("encoders must emit, and decoders consume, the same h_size")
        if self.g_a.output_size != self.f_a.input_size:
            raise ConfigurationError("g_a must reconstruct modality A at its input width")
        if self.g_b.output_size != self.f_b.input_size:
            raise ConfigurationError("g_b must reconstruct modality B at its input width")

    @classmethod
    def build(
        cls, input_size_a: int, input_size_b: int, h_size: int, rng: np.random.Generator
    ) -> "MultimodalAutoencoder":
        return cls(
            f_a=build_encoder(input_size_a, h_size, rng),
            g_a=build_decoder(h_size, input_size_a, rng),
            f_b=build_encoder(input_size_b, h_size, rng),
            g_b=build_decoder(h_size, input_size_b, rng),
        )

    @property
    def h_size(self) -> int:
        return self.f_a.output_size

    @property
    def input_size_a(self) -> int:
        return self.f_a.input_size

    @property
    def input_size_b(self) -> int:
        return self.f_b.input_size

    def nets(self) -> dict[str, DenseNetwork]:
        return {name: getattr(self, name) for name in NET_NAMES}

    def encoder(self, modality: str) -> DenseNetwork:
        return self.f_a if _check_modality(modality) == "A" else self.f_b

    def with_params(self, **params: np.ndarray) -> "MultimodalAutoencoder":
        return replace(self, **{k: getattr(self, k).with_params(v) for k, v in params.items()})

    def same_architecture(self, other: "MultimodalAutoencoder") -> bool:
        return all(getattr(self, n).same_architecture(getattr(other, n)) for n in NET_NAMES)

    def apply_gradients(self, grads: dict[str, np.ndarray], lr: float) -> "MultimodalAutoencoder":
        """One SGD step; networks absent from ``grads`` are returned untouched."""
        return self.with_params(
            **{name: getattr(self, name).params - lr * g for name, g in grads.items()}
        )


@dataclass(frozen=True)
class AlignedBatch:
    x_a: np.ndarray
    x_b: np.ndarray

    def __post_init__(self):
        if self.x_a.ndim != 2 or self.x_b.ndim != 2 or len(self.x_a) != len(self.x_b):
            raise DataError(
                f"aligned batch needs 2-D arrays with equal rows, got {self.x_a.shape} and {self.x_b.shape}"
            )

    def __len__(self) -> int:
        return len(self.x_a)

    def take(self, idx: np.ndarray) -> "AlignedBatch":
        return AlignedBatch(self.x_a[idx], self.x_b[idx])


@dataclass(frozen=True)
class DccaeConfig:
    lam: float = 0.01
    cca_reg: float = 1e-4
    cca_dims: int | None = None  # None means every canonical direction

    def dims_for(self, h_size: int) -> int:
        return h_size if self.cca_dims is None else self.cca_dims

    def validate(self, h_size: int | None = None, prefix: str = "dccae") -> list[str]:
        errors = []
        if not self.lam >= 0:
            errors.append(f"{prefix}.lam must be >= 0, got {self.lam}")
        if not self.cca_reg > 0:
            errors.append(f"{prefix}.cca_reg must be > 0, got {self.cca_reg}")
        if self.cca_dims is not None:
            upper = h_size if h_size is not None else self.cca_dims
            if not 1 <= self.cca_dims <= upper:
                errors.append(f"{prefix}.cca_dims must lie in [1, h_size], got {self.cca_dims}")
        return errors


def _check_modality(modality: str) -> str:
    if modality not in MODALITIES:
        raise UsageError(f"modality must be 'A' or 'B', got {modality!r}")
    return modality


def _zeros(model: MultimodalAutoencoder) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(net.params) for name, net in model.nets().items()}


def ae_loss_and_grads(
    f: DenseNetwork,
    g: DenseNetwork,
    x: np.ndarray,
    rng: np.random.Generator | None = None,
    dropout: float = 0.0,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Reconstruction MSE of ``g(f(x))`` and gradients for ``f`` and ``g``."""
    train = dropout > 0.0
    h, cache_f = forward(f, x, train, rng, dropout)
    x_rec, cache_g = forward(g, h, train, rng, dropout)
    loss, d_rec = mse_loss(x_rec, x)
    grad_g, d_h = backward(g, cache_g, d_rec)
    grad_f, _ = backward(f, cache_f, d_h)
    return loss, grad_f, grad_g


def splitae_loss_and_grads(
    model: MultimodalAutoencoder,
    input_modality: str,
    batch: AlignedBatch,
    rng: np.random.Generator | None = None,
    dropout: float = 0.0,
) -> tuple[float, dict[str, np.ndarray]]:
    """Encode one modality, decode both from the shared code.

    The other modality's encoder is not on the computation path and its
    gradient is exactly zero.
    """
    if len(batch) < 1:
        raise DataError("split autoencoder needs at least one row")
    train = dropout > 0.0
    enc_name = "f_a" if _check_modality(input_modality) == "A" else "f_b"
    x_in = batch.x_a if input_modality == "A" else batch.x_b
    h, cache_f = forward(getattr(model, enc_name), x_in, train, rng, dropout)
    rec_a, cache_ga = forward(model.g_a, h, train, rng, dropout)
    rec_b, cache_gb = forward(model.g_b, h, train, rng, dropout)
    loss_a, d_a = mse_loss(rec_a, batch.x_a)
    loss_b, d_b = mse_loss(rec_b, batch.x_b)
    grads = _zeros(model)
    grads["g_a"], d_h_a = backward(model.g_a, cache_ga, d_a)
    grads["g_b"], d_h_b = backward(model.g_b, cache_gb, d_b)
    grads[enc_name], _ = backward(getattr(model, enc_name), cache_f, d_h_a + d_h_b)
    return loss_a + loss_b, grads


def _inv_sqrt(sym: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(sym)
    return (vecs / np.sqrt(vals)) @ vecs.T


def cca_total_correlation(
    h_a: np.ndarray, h_b: np.ndarray, cfg: DccaeConfig = DccaeConfig()
) -> tuple[float, np.ndarray, np.ndarray]:
    """Sum of the top canonical correlations between two code batches.

    Evaluated in closed form at the optimal projection directions: the sum of
    the leading singular values of ``S_aa^-1/2 S_ab S_bb^-1/2`` with ridge
    ``cca_reg`` on both auto-covariances.  Returns the value and its gradient
    with respect to ``h_a`` and ``h_b``.
    """
    h_a = np.asarray(h_a, dtype=np.float64)
    h_b = np.asarray(h_b, dtype=np.float64)
    n = len(h_a)
    if len(h_b) != n:
        raise DataError(f"code batches must have equal rows, got {n} and {len(h_b)}")
    if n < 2:
        raise DataError("canonical correlation needs at least 2 rows")
    k = cfg.dims_for(min(h_a.shape[1], h_b.shape[1]))
    ca = h_a - h_a.mean(axis=0)
    cb = h_b - h_b.mean(axis=0)
    scale = 1.0 / (n - 1)
    s_aa = scale * ca.T @ ca + cfg.cca_reg * np.eye(h_a.shape[1])
    s_bb = scale * cb.T @ cb + cfg.cca_reg * np.eye(h_b.shape[1])
    s_ab = scale * ca.T @ cb
    ra = _inv_sqrt(s_aa)
    rb = _inv_sqrt(s_bb)
    u, d, vt = np.linalg.svd(ra @ s_ab @ rb)
    u, d, v = u[:, :k], d[:k], vt[:k].T
    corr = float(d.sum())

    # envelope-theorem gradients w.r.t. the three covariance blocks
    a_dir = ra @ u
    b_dir = rb @ v
    d_ab = a_dir @ b_dir.T
    d_aa = -0.5 * (a_dir * d) @ a_dir.T
    d_bb = -0.5 * (b_dir * d) @ b_dir.T
    grad_a = scale * (cb @ d_ab.T + 2.0 * ca @ d_aa)
    grad_b = scale * (ca @ d_ab + 2.0 * cb @ d_bb)
    return corr, grad_a, grad_b


def dccae_loss_and_grads(
    model: MultimodalAutoencoder,
    batch: AlignedBatch,
    cfg: DccaeConfig = DccaeConfig(),
    rng: np.random.Generator | None = None,
    dropout: float = 0.0,
) -> tuple[float, dict[str, np.ndarray]]:
    """``lam * (mse_A + mse_B) - total_correlation(f_a(x_a), f_b(x_b))``."""
    if len(batch) < 2:
        raise DataError("DCCAE needs at least 2 rows per batch")
    train = dropout > 0.0
    h_a, cache_fa = forward(model.f_a, batch.x_a, train, rng, dropout)
    h_b, cache_fb = forward(model.f_b, batch.x_b, train, rng, dropout)
    rec_a, cache_ga = forward(model.g_a, h_a, train, rng, dropout)
    rec_b, cache_gb = forward(model.g_b, h_b, train, rng, dropout)
    loss_a, d_a = mse_loss(rec_a, batch.x_a)
    loss_b, d_b = mse_loss(rec_b, batch.x_b)
    corr, dcorr_a, dcorr_b = cca_total_correlation(h_a, h_b, cfg)
    grads = {}
    grads["g_a"], dh_a = backward(model.g_a, cache_ga, cfg.lam * d_a)
    grads["g_b"], dh_b = backward(model.g_b, cache_gb, cfg.lam * d_b)
    grads["f_a"], _ = backward(model.f_a, cache_fa, dh_a - dcorr_a)
    grads["f_b"], _ = backward(model.f_b, cache_fb, dh_b - dcorr_b)
    return cfg.lam * (loss_a + loss_b) - corr, grads


def encode(model: MultimodalAutoencoder, modality: str, x: np.ndarray) -> np.ndarray:
    """Inference-mode code for ``x`` using the encoder of ``modality``."""
    h, _ = forward(model.encoder(modality), x)
    return h
