"""scikit-learn wrappers so the federated encoder and server classifier compose with pipelines.

Example::

    enc = FederatedMultimodalEncoder(n_features_a=24, transform_modality="B")
    pipe = make_pipeline(enc, RepresentationClassifier())
    pipe.fit(np.hstack([x_a, x_b]), y)          # labels only reach the classifier
    pipe.set_params(federatedmultimodalencoder__transform_modality="A")
    pipe.score(np.hstack([x_a_test, x_b_test]), y_test)   # cross-modal
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_random_state, check_X_y

from .autoencoders import DccaeConfig, MultimodalAutoencoder, encode
from .data_layer import MultimodalCorpus, PartitionConfig, sample_clients
from .errors import ConfigurationError
from .federation import FederationConfig, run_round
from .nn_core import SgdConfig
from .server_pipeline import Classifier, RepresentationDataset, train_classifier


def _generator(random_state) -> np.random.Generator:
    return np.random.default_rng(check_random_state(random_state).randint(2**31 - 1))


class FederatedMultimodalEncoder(TransformerMixin, BaseEstimator):
    """Learn a two-modality autoencoder by simulated federated training.

    ``X`` holds modality A in its first ``n_features_a`` columns and modality B
    in the rest, row-aligned.  ``fit`` hands contiguous slices of ``X`` to
    simulated clients (multimodal ones keep both blocks, unimodal ones keep
    one) and runs Mm-FedAvg rounds; ``y`` is ignored.  ``transform`` returns
    the codes of the ``transform_modality`` block.  It accepts either the full
    two-block matrix or just that modality's columns.

    Parameters
    ----------
    n_features_a : int
        Width of modality A; required.
    h_size : int, default=10
    ae_kind : {"splitae", "dccae"}, default="splitae"
    n_clients_ab, n_clients_a, n_clients_b : int, default=30, 0, 0
    client_fraction : float, default=1/15
        Length of each client's slice as a fraction of ``len(X)``.
    rounds, selection_fraction, alpha, learning_rate, epochs, batch_size, lam
        Federation and local-training settings.
    transform_modality : {"A", "B"}, default="A"
    random_state : int, RandomState instance or None
    """

    def __init__(
        self,
        n_features_a=None,
        h_size=10,
        ae_kind="splitae",
        n_clients_ab=30,
        n_clients_a=0,
        n_clients_b=0,
        client_fraction=1 / 15,
        rounds=100,
        selection_fraction=0.1,
        alpha=100.0,
        learning_rate=0.01,
        epochs=2,
        batch_size=8,
        lam=0.01,
        transform_modality="A",
        random_state=None,
    ):
        self.n_features_a = n_features_a
        self.h_size = h_size
        self.ae_kind = ae_kind
        self.n_clients_ab = n_clients_ab
        self.n_clients_a = n_clients_a
        self.n_clients_b = n_clients_b
        self.client_fraction = client_fraction
        self.rounds = rounds
        self.selection_fraction = selection_fraction
        self.alpha = alpha
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.lam = lam
        self.transform_modality = transform_modality
        self.random_state = random_state

    def _split(self, X):
        if self.n_features_a is None or not 0 < self.n_features_a < X.shape[1]:
            raise ConfigurationError(
                f"n_features_a must split the {X.shape[1]} columns into two non-empty blocks"
            )
        return X[:, : self.n_features_a], X[:, self.n_features_a :]

    def _federation_config(self) -> FederationConfig:
        cfg = FederationConfig(
            rounds=self.rounds,
            selection_fraction=self.selection_fraction,
            alpha=self.alpha,
            local_sgd=SgdConfig(self.learning_rate, self.epochs, self.batch_size),
            ae_kind=self.ae_kind,
            dccae=DccaeConfig(lam=self.lam),
        )
        errors = cfg.validate(h_size=self.h_size)
        if errors:
            raise ConfigurationError("; ".join(errors))
        return cfg

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        x_a, x_b = self._split(X)
        cfg = self._federation_config()
        rng = _generator(self.random_state)
        pcfg = PartitionConfig(self.n_clients_ab, self.n_clients_a, self.n_clients_b, self.client_fraction)
        errors = pcfg.validate()
        if errors:
            raise ConfigurationError("; ".join(errors))
        corpus = MultimodalCorpus(x_a, x_b, np.zeros(len(X), dtype=np.int64))
        population, _ = sample_clients(corpus, pcfg, rng)
        model = MultimodalAutoencoder.build(x_a.shape[1], x_b.shape[1], self.h_size, rng)
        self.round_losses_ = []
        for _ in range(cfg.rounds):
            result = run_round(model, population, cfg, rng)
            model = result.model
            self.round_losses_.append(result.mean_local_loss)
        self.model_ = model
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        modality = self.transform_modality
        if modality not in ("A", "B"):
            raise ConfigurationError(f"transform_modality must be 'A' or 'B', got {modality!r}")
        if X.shape[1] == self.n_features_in_:
            x_a, x_b = self._split(X)
            X = x_a if modality == "A" else x_b
        return encode(self.model_, modality, X)


class RepresentationClassifier(ClassifierMixin, BaseEstimator):
    """Dense layer plus log-softmax trained by minibatch SGD on the NLL.

    Defaults follow the server-side recipe (5 epochs, learning rate 0.001,
    dropout 0.5 on the input); raise ``epochs`` for a one-shot fit.
    """

    def __init__(self, epochs=5, learning_rate=0.001, batch_size=8, dropout_rate=0.5,
                 warm_start=False, random_state=None):
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.dropout_rate = dropout_rate
        self.warm_start = warm_start
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        rng = _generator(self.random_state)
        if not (self.warm_start and hasattr(self, "classifier_")):
            self.classes_ = unique_labels(y)
            self.classifier_ = Classifier.build(X.shape[1], len(self.classes_), rng)
        codes = np.searchsorted(self.classes_, y)
        if np.any(self.classes_[np.minimum(codes, len(self.classes_) - 1)] != y):
            raise ConfigurationError("warm-start fit saw labels outside the original classes")
        sgd = SgdConfig(self.learning_rate, self.epochs, self.batch_size, self.dropout_rate)
        self.classifier_ = train_classifier(self.classifier_, RepresentationDataset(X, codes), sgd, rng)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_log_proba(self, X):
        check_is_fitted(self, "classifier_")
        return self.classifier_.log_proba(check_array(X, dtype=np.float64))

    def predict_proba(self, X):
        return np.exp(self.predict_log_proba(X))

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_log_proba(X), axis=1)]
