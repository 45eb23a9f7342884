"""Multimodal semi-supervised federated learning simulator."""

from .autoencoders import AlignedBatch, DccaeConfig, MultimodalAutoencoder, encode
from .data_layer import (
    ClientSpec,
    MultimodalCorpus,
    PartitionConfig,
    SyntheticConfig,
    generate_synthetic,
    ingest_features,
    partition_clients,
)
from .errors import ConfigurationError, DataError, ProtocolError, UsageError
from .experiment import ExperimentConfig, load_config, run_experiment, run_scheme_comparison, validate_config
from .federation import FederationConfig, local_train, mm_fedavg, run_round, select_clients
from .nn_core import DenseNetwork, SgdConfig
from .server_pipeline import Classifier, LabelledDataset, evaluate, train_classifier

__version__ = "0.1.0"
