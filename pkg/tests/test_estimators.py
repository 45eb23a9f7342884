import numpy as np
import pytest
from sklearn.base import clone
from sklearn.pipeline import make_pipeline

from mmfl.data_layer import SyntheticConfig, generate_synthetic
from mmfl.errors import ConfigurationError
from mmfl.estimators import FederatedMultimodalEncoder, RepresentationClassifier


@pytest.fixture(scope="module")
def corpus():
    return generate_synthetic(SyntheticConfig(classes=3, samples_per_class=200, dim_a=8, dim_b=6), np.random.default_rng(0))


def test_params_and_clone():
    enc = FederatedMultimodalEncoder(n_features_a=8, h_size=4, rounds=3)
    params = enc.get_params()
    assert params["h_size"] == 4 and params["alpha"] == 100.0
    cloned = clone(enc)
    assert cloned.get_params() == params and cloned is not enc
    clf = RepresentationClassifier()
    assert clf.get_params()["dropout_rate"] == 0.5 and clf.get_params()["epochs"] == 5


def test_encoder_fit_transform(corpus):
    X = np.hstack([corpus.x_a, corpus.x_b])
    enc = FederatedMultimodalEncoder(n_features_a=8, h_size=4, rounds=6, random_state=0).fit(X)
    assert enc.transform(X).shape == (len(X), 4)
    np.testing.assert_array_equal(enc.transform(X), enc.transform(corpus.x_a))
    enc.set_params(transform_modality="B")
    np.testing.assert_array_equal(enc.transform(X), enc.transform(corpus.x_b))
    assert len(enc.round_losses_) == 6
    again = FederatedMultimodalEncoder(n_features_a=8, h_size=4, rounds=6, random_state=0).fit(X)
    assert enc.model_.f_a.params.tobytes() == again.model_.f_a.params.tobytes()


def test_encoder_rejects_bad_split(corpus):
    X = np.hstack([corpus.x_a, corpus.x_b])
    with pytest.raises(ConfigurationError):
        FederatedMultimodalEncoder(h_size=4, rounds=1).fit(X)
    with pytest.raises(ConfigurationError):
        FederatedMultimodalEncoder(n_features_a=8, h_size=4, rounds=1, selection_fraction=0).fit(X)


def test_pipeline_cross_modal(corpus):
    X = np.hstack([corpus.x_a, corpus.x_b])
    y = corpus.y
    pipe = make_pipeline(
        FederatedMultimodalEncoder(n_features_a=8, h_size=4, rounds=20, selection_fraction=0.2,
                                   transform_modality="B", random_state=1),
        RepresentationClassifier(epochs=30, learning_rate=0.05, dropout_rate=0.0, random_state=1),
    )
    pipe.fit(X, y)
    assert pipe.score(X, y) > 0.6
    pipe.set_params(federatedmultimodalencoder__transform_modality="A")
    assert pipe.score(X, y) > 1 / 3 + 0.1


def test_classifier_labels_and_proba():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(60, 2))
    y = np.where(X[:, 0] > 0, "walk", "sit")
    clf = RepresentationClassifier(epochs=50, learning_rate=0.1, dropout_rate=0.0, random_state=0).fit(X, y)
    assert set(clf.predict(X)) <= {"sit", "walk"}
    np.testing.assert_allclose(clf.predict_proba(X).sum(axis=1), 1.0, atol=1e-12)
    assert clf.score(X, y) > 0.9


def test_warm_start_keeps_classes():
    rng = np.random.default_rng(0)
    X, y = rng.normal(size=(20, 2)), np.array([0, 1] * 10)
    clf = RepresentationClassifier(warm_start=True, random_state=0).fit(X, y)
    first = clf.classifier_
    clf.fit(X, y)
    assert clf.classifier_ is not first
    with pytest.raises(ConfigurationError):
        clf.fit(X, np.array([0, 2] * 10))
