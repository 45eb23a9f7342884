import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from mmfl.autoencoders import (
    AlignedBatch,
    DccaeConfig,
    MultimodalAutoencoder,
    ae_loss_and_grads,
    build_decoder,
    build_encoder,
    cca_total_correlation,
    dccae_loss_and_grads,
    default_hidden_width,
    encode,
    splitae_loss_and_grads,
)
from mmfl.errors import ConfigurationError, DataError
from mmfl.nn_core import DenseNetwork, max_relative_error, mse_loss, numerical_gradient, forward


def eye_net(width):
    return DenseNetwork((width, width), ("identity",), np.concatenate([np.eye(width).ravel(), np.zeros(width)]))


def brute_force_cca(h_a, h_b, reg, k):
    """Sum of the top-k roots of the generalized eigenproblem of classical CCA."""
    n = len(h_a)
    ca, cb = h_a - h_a.mean(0), h_b - h_b.mean(0)
    s_aa = ca.T @ ca / (n - 1) + reg * np.eye(h_a.shape[1])
    s_bb = cb.T @ cb / (n - 1) + reg * np.eye(h_b.shape[1])
    s_ab = ca.T @ cb / (n - 1)
    da, db = h_a.shape[1], h_b.shape[1]
    lhs = np.zeros((da + db, da + db))
    lhs[:da, da:] = s_ab
    lhs[da:, :da] = s_ab.T
    rhs = scipy.linalg.block_diag(s_aa, s_bb)
    vals = scipy.linalg.eigh(lhs, rhs, eigvals_only=True)
    return float(np.sort(vals)[::-1][:k].sum())


def small_model(rng, in_a=3, in_b=4, h=2):
    return MultimodalAutoencoder.build(in_a, in_b, h, rng)


def correlated_batch(rng, n, in_a, in_b, latent=2, noise=0.1):
    z = rng.normal(size=(n, latent))
    return AlignedBatch(
        z @ rng.normal(size=(latent, in_a)) + noise * rng.normal(size=(n, in_a)),
        z @ rng.normal(size=(latent, in_b)) + noise * rng.normal(size=(n, in_b)),
    )


def model_fd(model, loss_fn):
    """Finite-difference gradients for every network of ``model``."""
    out = {}
    for name, net in model.nets().items():
        out[name] = numerical_gradient(lambda p, name=name: loss_fn(model.with_params(**{name: p})), net.params)
    return out


class TestStructure:
    def test_hidden_width_rule(self):
        assert default_hidden_width(10, 24) == 20
        assert default_hidden_width(4, 51) == 26

    def test_build_shapes(self, rng):
        m = MultimodalAutoencoder.build(24, 15, 10, rng)
        assert (m.h_size, m.input_size_a, m.input_size_b) == (10, 24, 15)
        assert encode(m, "A", rng.normal(size=(7, 24))).shape == (7, 10)

    def test_invariants_enforced(self, rng):
        with pytest.raises(ConfigurationError):
            MultimodalAutoencoder(build_encoder(3, 2, rng), build_decoder(2, 3, rng),
                                  build_encoder(4, 3, rng), build_decoder(3, 4, rng))
        with pytest.raises(ConfigurationError):
            MultimodalAutoencoder(build_encoder(3, 2, rng), build_decoder(2, 4, rng),
                                  build_encoder(4, 2, rng), build_decoder(2, 4, rng))

    def test_aligned_batch_rows(self):
        with pytest.raises(DataError):
            AlignedBatch(np.zeros((3, 2)), np.zeros((4, 2)))

    def test_encode_deterministic_and_identity(self, rng):
        m = small_model(rng)
        x = rng.normal(size=(5, 3))
        assert encode(m, "A", x).tobytes() == encode(m, "A", x).tobytes()
        ident = MultimodalAutoencoder(eye_net(3), eye_net(3), eye_net(3), eye_net(3))
        np.testing.assert_array_equal(encode(ident, "B", x), x)

    def test_encode_width_mismatch(self, rng):
        with pytest.raises(ConfigurationError):
            encode(small_model(rng), "A", np.zeros((2, 4)))

    def test_config_validation(self):
        assert DccaeConfig().validate(h_size=10) == []
        assert DccaeConfig(cca_reg=0).validate()
        assert DccaeConfig(cca_dims=11).validate(h_size=10)
        assert DccaeConfig(cca_dims=0).validate(h_size=10)


class TestPlainAE:
    def test_identity_zero_loss(self, rng):
        loss, _, _ = ae_loss_and_grads(eye_net(3), eye_net(3), rng.normal(size=(4, 3)))
        assert loss == 0.0

    def test_gradient(self, rng):
        f = DenseNetwork((4, 2), ("tanh",), rng.normal(scale=0.5, size=10))
        g = DenseNetwork((2, 4), ("identity",), rng.normal(scale=0.5, size=12))
        x = rng.normal(size=(6, 4))
        _, gf, gg = ae_loss_and_grads(f, g, x)
        nf = numerical_gradient(lambda p: ae_loss_and_grads(f.with_params(p), g, x)[0], f.params)
        ng = numerical_gradient(lambda p: ae_loss_and_grads(f, g.with_params(p), x)[0], g.params)
        assert max_relative_error(gf, nf) < 1e-4 and max_relative_error(gg, ng) < 1e-4

    def test_training_progress(self, rng):
        f, g = build_encoder(6, 3, rng), build_decoder(3, 6, rng)
        x = rng.normal(size=(16, 6))
        start = ae_loss_and_grads(f, g, x)[0]
        for _ in range(50):
            _, gf, gg = ae_loss_and_grads(f, g, x)
            f, g = f.with_params(f.params - 0.05 * gf), g.with_params(g.params - 0.05 * gg)
        assert ae_loss_and_grads(f, g, x)[0] < start


class TestSplitAE:
    def test_identity_zero_loss(self, rng):
        x = rng.normal(size=(5, 3))
        m = MultimodalAutoencoder(eye_net(3), eye_net(3), eye_net(3), eye_net(3))
        assert splitae_loss_and_grads(m, "A", AlignedBatch(x, x.copy()))[0] == 0.0

    @pytest.mark.parametrize("modality", ["A", "B"])
    def test_loss_is_sum_and_other_encoder_frozen(self, modality, rng):
        m = small_model(rng)
        batch = correlated_batch(rng, 8, 3, 4)
        loss, grads = splitae_loss_and_grads(m, modality, batch)
        h = encode(m, modality, batch.x_a if modality == "A" else batch.x_b)
        expected = mse_loss(forward(m.g_a, h)[0], batch.x_a)[0] + mse_loss(forward(m.g_b, h)[0], batch.x_b)[0]
        assert loss == expected
        other = "f_b" if modality == "A" else "f_a"
        assert not grads[other].any()

    @pytest.mark.parametrize("modality", ["A", "B"])
    def test_gradient(self, modality, rng):
        m = small_model(rng)
        batch = correlated_batch(rng, 7, 3, 4)
        _, grads = splitae_loss_and_grads(m, modality, batch)
        num = model_fd(m, lambda mm: splitae_loss_and_grads(mm, modality, batch)[0])
        for name in grads:
            assert max_relative_error(grads[name], num[name]) < 1e-4, name


class TestCCA:
    def test_matches_generalized_eigen_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            d = int(rng.integers(1, 6))
            mix = rng.normal(size=(d, d))
            h_a = rng.normal(size=(200, d))
            h_b = h_a @ mix + rng.normal(size=(200, d))
            cfg = DccaeConfig(cca_reg=1e-4)
            corr, _, _ = cca_total_correlation(h_a, h_b, cfg)
            assert corr == pytest.approx(brute_force_cca(h_a, h_b, 1e-4, d), abs=1e-8)

    def test_top_k_subset(self, rng):
        h_a = rng.normal(size=(200, 4))
        h_b = h_a @ rng.normal(size=(4, 4)) + rng.normal(size=(200, 4))
        corr, _, _ = cca_total_correlation(h_a, h_b, DccaeConfig(cca_reg=1e-4, cca_dims=2))
        assert corr == pytest.approx(brute_force_cca(h_a, h_b, 1e-4, 2), abs=1e-8)

    def test_one_dim_is_abs_pearson(self, rng):
        for sign in (1, -1):
            a = rng.normal(size=(100, 1))
            b = sign * a + rng.normal(size=(100, 1))
            corr, _, _ = cca_total_correlation(a, b, DccaeConfig(cca_reg=1e-9))
            ca, cb = a[:, 0] - a.mean(), b[:, 0] - b.mean()
            pearson = (ca @ cb) / np.sqrt((ca @ ca) * (cb @ cb))
            assert corr == pytest.approx(abs(pearson), abs=1e-8)

    def test_self_correlation(self, rng):
        h = rng.normal(size=(500, 3))
        corr, _, _ = cca_total_correlation(h, h.copy(), DccaeConfig(cca_reg=1e-9))
        assert corr == pytest.approx(3.0, abs=1e-6)

    def test_symmetry_and_scale(self, rng):
        h_a = rng.normal(size=(100, 3))
        h_b = h_a @ rng.normal(size=(3, 3)) + rng.normal(size=(100, 3))
        cfg = DccaeConfig(cca_reg=1e-9)
        c1 = cca_total_correlation(h_a, h_b, cfg)[0]
        assert abs(c1 - cca_total_correlation(h_b, h_a, cfg)[0]) < 1e-10
        assert abs(c1 - cca_total_correlation(5 * h_a, h_b, cfg)[0]) < 1e-4

    def test_gradient(self, rng):
        h_a = rng.normal(size=(12, 3))
        h_b = h_a @ rng.normal(size=(3, 2)) + rng.normal(size=(12, 2))
        cfg = DccaeConfig(cca_reg=1e-2)
        _, ga, gb = cca_total_correlation(h_a, h_b, cfg)
        na = numerical_gradient(lambda v: cca_total_correlation(v.reshape(12, 3), h_b, cfg)[0], h_a.ravel())
        nb = numerical_gradient(lambda v: cca_total_correlation(h_a, v.reshape(12, 2), cfg)[0], h_b.ravel())
        assert max_relative_error(ga, na) < 1e-4 and max_relative_error(gb, nb) < 1e-4

    def test_needs_two_rows(self):
        with pytest.raises(DataError):
            cca_total_correlation(np.ones((1, 2)), np.ones((1, 2)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(5, 40))
    def test_bounded(self, seed, d, n):
        r = np.random.default_rng(seed)
        h_a, h_b = r.normal(size=(n, d)), r.normal(size=(n, d))
        corr, _, _ = cca_total_correlation(h_a, h_b, DccaeConfig())
        assert -1e-9 <= corr <= d + 1e-6


class TestDCCAE:
    def test_lambda_zero_is_pure_cca(self, rng):
        m = small_model(rng)
        batch = correlated_batch(rng, 16, 3, 4)
        cfg = DccaeConfig(lam=0.0)
        loss, _ = dccae_loss_and_grads(m, batch, cfg)
        corr = cca_total_correlation(encode(m, "A", batch.x_a), encode(m, "B", batch.x_b), cfg)[0]
        assert abs(loss + corr) < 1e-12

    def test_full_gradient(self, rng):
        m = MultimodalAutoencoder.build(3, 3, 2, rng)
        batch = correlated_batch(rng, 16, 3, 3)
        cfg = DccaeConfig(lam=0.5, cca_reg=1e-3)
        _, grads = dccae_loss_and_grads(m, batch, cfg)
        num = model_fd(m, lambda mm: dccae_loss_and_grads(mm, batch, cfg)[0])
        for name in grads:
            assert max_relative_error(grads[name], num[name]) < 1e-3, name

    def test_lower_bound(self, rng):
        m = small_model(rng)
        loss, _ = dccae_loss_and_grads(m, correlated_batch(rng, 16, 3, 4), DccaeConfig())
        assert loss >= -2

    def test_training_increases_correlation(self, rng):
        m = MultimodalAutoencoder.build(6, 5, 3, rng)
        batch = correlated_batch(rng, 64, 6, 5, latent=3, noise=0.3)
        cfg = DccaeConfig(lam=0.01)

        def corr(mm):
            return cca_total_correlation(encode(mm, "A", batch.x_a), encode(mm, "B", batch.x_b), cfg)[0]

        start = corr(m)
        for _ in range(100):
            _, grads = dccae_loss_and_grads(m, batch, cfg)
            m = m.apply_gradients(grads, 0.01)
        assert corr(m) > start

    def test_needs_two_rows(self, rng):
        with pytest.raises(DataError):
            dccae_loss_and_grads(small_model(rng), AlignedBatch(np.ones((1, 3)), np.ones((1, 4))))
