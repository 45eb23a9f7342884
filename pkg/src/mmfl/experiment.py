"""Declarative experiments: scheme presets, seeded replicates, metrics files."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from .autoencoders import DccaeConfig, MultimodalAutoencoder
from .data_layer import (
    FileSchema,
    MultimodalCorpus,
    PartitionConfig,
    SyntheticConfig,
    generate_synthetic,
    ingest_features,
    partition_clients,
    slice_length,
)
from .errors import ConfigurationError
from .federation import FederationConfig, run_round
from .nn_core import SgdConfig
from .server_pipeline import (
    Classifier,
    LabelledDataset,
    RepresentationDataset,
    cross_modal_evaluate,
    encode_labelled,
    evaluate,
    train_classifier,
)

SCHEMES = ("UmFL", "Abl", "MmFL_AB", "MmFL_ABA", "MmFL_ABB", "MmFL_ABAB")
METRICS_HEADER = (
    "replicate", "seed", "round", "scheme", "label_modality", "test_modality", "accuracy", "mean_local_loss",
)
log = logging.getLogger(__name__)

PROTOCOL_EVAL_WINDOW = 2000
CONVERGENCE_TAIL = 5
EVAL_EVERY = 2


@dataclass(frozen=True)
class SchemePreset:
    name: str
    n_ab: int
    extra_a: int
    extra_b: int
    unimodal: int  # clients per unimodal instance (UmFL, Abl)
    label_modalities: tuple[str, ...]
    isolated: bool = False  # separate FL instance per modality

    def partition(self, label_modality: str, client_fraction: float, test_fraction: float) -> PartitionConfig:
        n_ab, n_a, n_b = self.n_ab, self.extra_a, self.extra_b
        if self.name == "UmFL":
            n_a, n_b = (self.unimodal, 0) if label_modality == "A" else (0, self.unimodal)
        elif self.isolated:
            n_a = n_b = self.unimodal
        return PartitionConfig(n_ab, n_a, n_b, client_fraction, test_fraction)


PRESETS = {
    "UmFL": SchemePreset("UmFL", 0, 0, 0, 30, ("A", "B")),
    "Abl": SchemePreset("Abl", 0, 0, 0, 30, ("A", "B"), isolated=True),
    "MmFL_AB": SchemePreset("MmFL_AB", 30, 0, 0, 0, ("A", "B", "AB")),
    "MmFL_ABA": SchemePreset("MmFL_ABA", 30, 10, 0, 0, ("A", "B", "AB")),
    "MmFL_ABB": SchemePreset("MmFL_ABB", 30, 0, 10, 0, ("A", "B", "AB")),
    "MmFL_ABAB": SchemePreset("MmFL_ABAB", 30, 10, 10, 0, ("A", "B", "AB")),
}


@dataclass(frozen=True)
class FeatureFiles:
    path_a: str
    path_b: str
    path_labels: str
    delimiter: str = ","
    header: bool = True
    classes: int | None = None


def _default_server_sgd() -> SgdConfig:
    return SgdConfig(learning_rate=0.001, epochs=5, batch_size=8, dropout_rate=0.5)


@dataclass(frozen=True)
class ExperimentConfig:
    scheme: str = "MmFL_AB"
    data: SyntheticConfig | FeatureFiles = field(default_factory=SyntheticConfig)
    client_fraction: float = 1 / 15
    test_fraction: float = 0.1
    h_size: int = 10
    federation: FederationConfig = field(default_factory=FederationConfig)
    server_sgd: SgdConfig = field(default_factory=_default_server_sgd)
    label_modality: str = "B"
    test_modality: str = "A"
    # desk-scale window: the default synthetic test split has 360 rows
    eval_window: int = 180
    replicates: int = 64
    base_seed: int = 0
    output_path: str | None = "metrics.csv"
    standardize: bool = True

    @property
    def preset(self) -> SchemePreset:
        return PRESETS[self.scheme]

    @property
    def name(self) -> str:
        return f"{self.scheme}-L{self.label_modality}-T{self.test_modality}"

    @property
    def evaluations_per_replicate(self) -> int:
        return self.federation.rounds // EVAL_EVERY

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def validate_config(cfg: ExperimentConfig) -> list[str]:
    """Every violated constraint, as human-readable messages; empty means valid."""
    errors = []
    if cfg.scheme not in PRESETS:
        errors.append(f"scheme must be one of {SCHEMES}, got {cfg.scheme!r}")
    if cfg.label_modality not in ("A", "B", "AB"):
        errors.append(f"label_modality must be A, B or AB, got {cfg.label_modality!r}")
    if cfg.test_modality not in ("A", "B"):
        errors.append(f"test_modality must be A or B, got {cfg.test_modality!r}")
    if cfg.scheme in PRESETS and cfg.label_modality in ("A", "B", "AB"):
        preset = PRESETS[cfg.scheme]
        if cfg.label_modality not in preset.label_modalities:
            errors.append(
                f"scheme {cfg.scheme} is incompatible with label_modality {cfg.label_modality}: "
                f"allowed {preset.label_modalities}"
            )
        if cfg.scheme == "UmFL" and cfg.test_modality != cfg.label_modality:
            errors.append("scheme UmFL is tested on its own modality: test_modality must equal label_modality")
    if int(cfg.replicates) != cfg.replicates or cfg.replicates < 1:
        errors.append(f"replicates must be a positive integer, got {cfg.replicates}")
    if cfg.h_size < 1:
        errors.append(f"h_size must be >= 1, got {cfg.h_size}")
    if cfg.eval_window < 1:
        errors.append(f"eval_window must be >= 1, got {cfg.eval_window}")
    if not 0 < cfg.client_fraction <= 1:
        errors.append(f"client_fraction must lie in (0, 1], got {cfg.client_fraction}")
    if not 0 < cfg.test_fraction < 1:
        errors.append(f"test_fraction must lie in (0, 1), got {cfg.test_fraction}")
    if cfg.federation.rounds < EVAL_EVERY:
        errors.append(f"federation.rounds must be >= {EVAL_EVERY} to produce any evaluation")
    errors += cfg.federation.validate(h_size=cfg.h_size)
    errors += cfg.server_sgd.validate("server_sgd")
    if isinstance(cfg.data, SyntheticConfig):
        errors += cfg.data.validate()
        if not cfg.data.validate() and 0 < cfg.test_fraction < 1 and 0 < cfg.client_fraction <= 1:
            n = cfg.data.classes * cfg.data.samples_per_class
            n_test = math.ceil(cfg.test_fraction * n)
            if cfg.eval_window > n_test:
                errors.append(
                    f"eval_window {cfg.eval_window} exceeds the {n_test}-row synthetic test split"
                )
            if not 1 <= slice_length(n, cfg.client_fraction) <= n - n_test:
                errors.append(
                    f"client_fraction {cfg.client_fraction} gives client slices that do not fit the training rows"
                )
    elif isinstance(cfg.data, FeatureFiles):
        for attr in ("path_a", "path_b", "path_labels"):
            if not Path(getattr(cfg.data, attr)).is_file():
                errors.append(f"data.{attr}: no such file {getattr(cfg.data, attr)!r}")
    else:
        errors.append("data must be a synthetic config or feature-file paths")
    return errors


def check_config(cfg: ExperimentConfig) -> None:
    errors = validate_config(cfg)
    if errors:
        raise ConfigurationError("invalid experiment config:\n  " + "\n  ".join(errors))


# -- config files ------------------------------------------------------------

def _build(cls, raw: Any, where: str):
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{where}: expected a mapping, got {type(raw).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigurationError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for key, value in raw.items():
        nested = _NESTED.get((cls, key))
        kwargs[key] = _build(nested, value, f"{where}.{key}") if nested and value is not None else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"{where}: {exc}") from None


_NESTED = {
    (ExperimentConfig, "federation"): FederationConfig,
    (ExperimentConfig, "server_sgd"): SgdConfig,
    (FederationConfig, "local_sgd"): SgdConfig,
    (FederationConfig, "dccae"): DccaeConfig,
}


def config_from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw or {})
    data = raw.pop("data", None)
    cfg = _build(ExperimentConfig, raw, "config")
    if data is not None:
        if not isinstance(data, dict):
            raise ConfigurationError("config.data: expected a mapping")
        cls = FeatureFiles if "path_a" in data else SyntheticConfig
        cfg = dataclasses.replace(cfg, data=_build(cls, data, "config.data"))
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config {path} is not valid YAML: {exc}") from None
    return config_from_dict(raw or {})


def dump_config(cfg: ExperimentConfig, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=False)


# -- running -----------------------------------------------------------------

def replicate_seed(base_seed: int, replicate: int) -> int:
    return int(np.random.SeedSequence([base_seed, replicate]).generate_state(1, dtype=np.uint64)[0] >> 1)


@dataclass(frozen=True)
class MetricsRow:
    replicate: int
    seed: int
    round: int
    scheme: str
    label_modality: str
    test_modality: str
    accuracy: float
    mean_local_loss: float

    def as_csv(self) -> list[str]:
        return [str(getattr(self, k)) if not isinstance(getattr(self, k), float) else repr(getattr(self, k))
                for k in METRICS_HEADER]


@dataclass(eq=False)
class ReplicateResult:
    rows: list[MetricsRow]
    instances: dict[str, MultimodalAutoencoder]
    initial: MultimodalAutoencoder
    classifier: Classifier


def _load_corpus(cfg: ExperimentConfig, rng: np.random.Generator) -> MultimodalCorpus:
    if isinstance(cfg.data, SyntheticConfig):
        return generate_synthetic(cfg.data, rng)
    d = cfg.data
    return ingest_features(d.path_a, d.path_b, d.path_labels, FileSchema(d.delimiter, d.header), d.classes)


def run_replicate(cfg: ExperimentConfig, replicate: int) -> ReplicateResult:
    seed = replicate_seed(cfg.base_seed, replicate)
    data_ss, part_ss, init_ss, train_ss = np.random.SeedSequence(seed).spawn(4)
    corpus = _load_corpus(cfg, np.random.default_rng(data_ss))
    classes = (
        cfg.data.classes
        if isinstance(cfg.data, SyntheticConfig) or cfg.data.classes is not None
        else corpus.classes
    )
    pcfg = cfg.preset.partition(cfg.label_modality, cfg.client_fraction, cfg.test_fraction)
    part = partition_clients(corpus, pcfg, np.random.default_rng(part_ss), standardize_features=cfg.standardize)
    server, test, clients = part.server, part.test, part.clients

    init_rng = np.random.default_rng(init_ss)
    initial = MultimodalAutoencoder.build(corpus.x_a.shape[1], corpus.x_b.shape[1], cfg.h_size, init_rng)
    clf = Classifier.build(cfg.h_size, classes, init_rng)
    label_mods = ("A", "B") if cfg.label_modality == "AB" else (cfg.label_modality,)
    server_sets = [LabelledDataset(m, server.modality(m), server.y, classes) for m in label_mods]
    test_set = LabelledDataset(cfg.test_modality, test.modality(cfg.test_modality), test.y, classes)

    if cfg.preset.isolated:
        populations = {m: [c for c in clients if c.modality == m] for m in ("A", "B")}
    else:
        populations = {"all": clients}
    instances = {key: initial for key in populations}
    rng = np.random.default_rng(train_ss)
    cross = cfg.label_modality != cfg.test_modality
    rows = []
    for t in range(1, cfg.federation.rounds + 1):
        losses = []
        for key, pop in populations.items():
            result = run_round(instances[key], pop, cfg.federation, rng)
            instances[key] = result.model
            losses.extend(u.mean_loss for u in result.updates)
            log.info("replicate %d round %d [%s] selected %s mean_local_loss %.5f",
                     replicate, t, key, result.selected, result.mean_local_loss)
        if cfg.preset.isolated:
            model = instances["A"].with_params(
                f_b=instances["B"].f_b.params, g_b=instances["B"].g_b.params
            )
        else:
            model = instances["all"]
        reps = RepresentationDataset.concat([encode_labelled(model, s) for s in server_sets])
        clf = train_classifier(clf, reps, cfg.server_sgd, rng)
        if t % EVAL_EVERY == 0:
            scorer = cross_modal_evaluate if cross else evaluate
            report = scorer(model, clf, test_set, cfg.eval_window, t)
            rows.append(MetricsRow(
                replicate, seed, t, cfg.scheme, cfg.label_modality, cfg.test_modality,
                report.accuracy, float(np.nanmean(losses)),
            ))
    return ReplicateResult(rows, instances, initial, clf)


def _replicate_rows(args) -> list[MetricsRow]:
    cfg, r = args
    return run_replicate(cfg, r).rows


@dataclass(frozen=True)
class SummaryRow:
    round: int
    mean_accuracy: float
    std_error: float
    n: int


@dataclass(eq=False)
class ExperimentResult:
    config: ExperimentConfig
    rows: list[MetricsRow]
    summary: list[SummaryRow]

    def curves(self) -> np.ndarray:
        """Accuracy matrix, one row per replicate, one column per evaluation round."""
        reps = sorted({r.replicate for r in self.rows})
        rounds = sorted({r.round for r in self.rows})
        acc = np.full((len(reps), len(rounds)), np.nan)
        ri = {v: i for i, v in enumerate(reps)}
        ci = {v: i for i, v in enumerate(rounds)}
        for r in self.rows:
            acc[ri[r.replicate], ci[r.round]] = r.accuracy
        return acc

    def converged_accuracy(self) -> np.ndarray:
        """Per-replicate mean of the last few evaluation points."""
        return self.curves()[:, -CONVERGENCE_TAIL:].mean(axis=1)


def summarize(rows: Sequence[MetricsRow]) -> list[SummaryRow]:
    """Per-round mean accuracy and standard error (sample std / sqrt(n)) over replicates."""
    by_round: dict[int, list[float]] = {}
    for r in rows:
        by_round.setdefault(int(r.round), []).append(float(r.accuracy))
    out = []
    for t in sorted(by_round):
        acc = np.array(by_round[t])
        se = float(acc.std(ddof=1) / np.sqrt(len(acc))) if len(acc) > 1 else float("nan")
        out.append(SummaryRow(t, float(acc.mean()), se, len(acc)))
    return out


def write_metrics(rows: Sequence[MetricsRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        writer.writerows(r.as_csv() for r in rows)


def read_metrics(path: str | Path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRICS_HEADER:
            raise ConfigurationError(f"{path}: unexpected metrics header {reader.fieldnames}")
        return [
            MetricsRow(int(d["replicate"]), int(d["seed"]), int(d["round"]), d["scheme"],
                       d["label_modality"], d["test_modality"], float(d["accuracy"]),
                       float(d["mean_local_loss"]))
            for d in reader
        ]


def write_summary(summary: Sequence[SummaryRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["round", "mean_accuracy", "std_error", "replicates"])
        writer.writerows([s.round, repr(s.mean_accuracy), repr(s.std_error), s.n] for s in summary)


def summary_path(metrics_path: str | Path) -> Path:
    p = Path(metrics_path)
    return p.with_name(p.stem + ".summary.csv")


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    """Run every replicate, then write metrics and summary CSVs if ``output_path`` is set.

    Rows are ordered by replicate regardless of ``workers``, so output bytes
    depend only on the config.
    """
    check_config(cfg)
    jobs = [(cfg, r) for r in range(cfg.replicates)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_rep = list(pool.map(_replicate_rows, jobs))
    else:
        per_rep = [_replicate_rows(j) for j in jobs]
    rows = [row for rep in per_rep for row in rep]
    result = ExperimentResult(cfg, rows, summarize(rows))
    if cfg.output_path:
        write_metrics(rows, cfg.output_path)
        write_summary(result.summary, summary_path(cfg.output_path))
    return result


@dataclass(frozen=True)
class ComparisonRow:
    name: str
    converged_accuracy: float
    std_error: float
    rounds_to_threshold: int | None
    replicates: int


def _data_key(cfg: ExperimentConfig) -> tuple:
    return (cfg.data, cfg.base_seed, cfg.client_fraction, cfg.test_fraction, cfg.replicates,
            cfg.federation.rounds, cfg.standardize)


def rounds_to_threshold(result: ExperimentResult, fraction: float = 0.95) -> int | None:
    """First evaluated round whose mean accuracy reaches ``fraction`` of the converged value."""
    target = fraction * float(result.converged_accuracy().mean())
    for s in result.summary:
        if s.mean_accuracy >= target:
            return s.round
    return None


def compare_results(results: Sequence[ExperimentResult]) -> list[ComparisonRow]:
    out = []
    for res in results:
        conv = res.converged_accuracy()
        se = float(conv.std(ddof=1) / np.sqrt(len(conv))) if len(conv) > 1 else float("nan")
        out.append(ComparisonRow(res.config.name, float(conv.mean()), se, rounds_to_threshold(res), len(conv)))
    return out


def run_scheme_comparison(
    cfgs: Sequence[ExperimentConfig], workers: int = 1, output_path: str | Path | None = None
) -> tuple[list[ComparisonRow], list[ExperimentResult]]:
    """Run several schemes over identical data/partition seeds and tabulate them."""
    if not cfgs:
        raise ConfigurationError("comparison needs at least one config")
    keys = {_data_key(c) for c in cfgs}
    if len(keys) != 1:
        raise ConfigurationError(
            "compared configs must share data, base_seed, client/test fractions, replicates and rounds"
        )
    for c in cfgs:
        check_config(c)
    results = [run_experiment(c, workers) for c in cfgs]
    table = compare_results(results)
    if output_path:
        write_comparison(table, output_path)
    return table, results


def write_comparison(table: Sequence[ComparisonRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scheme", "converged_accuracy", "std_error", "rounds_to_threshold", "replicates"])
        for r in table:
            writer.writerow([r.name, repr(r.converged_accuracy), repr(r.std_error),
                             "" if r.rounds_to_threshold is None else r.rounds_to_threshold, r.replicates])
