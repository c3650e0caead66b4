"""Experiment configuration: one YAML file drives every subcommand.

The semantic hash identifies an experiment by its meaning, not its
filesystem layout: corpus files enter by content digest and output/cache
locations are excluded, so the same experiment run into two directories
produces byte-identical reports.
"""

from __future__ import annotations

import hashlib
import json
import os
import shlex
from dataclasses import asdict, dataclass, field, replace

import yaml

ENV_CACHE_DIR = "SUBPARSE_CACHE_DIR"
ENV_SIDECAR = "SUBPARSE_SIDECAR"


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class ProviderConfig:
    kind: str = "fixture"  # fixture | sidecar
    seed: int = 7
    layers: int = 4   # fixture model depth
    heads: int = 4    # fixture head count
    command: str | None = None  # sidecar launch command
    timeout: float = 120.0

    def command_argv(self) -> list[str]:
        if not self.command:
            raise ConfigError("provider.kind=sidecar needs provider.command "
                              f"(or the {ENV_SIDECAR} environment variable)")
        return shlex.split(self.command)


@dataclass(frozen=True)
class CorpusConfig:
    ud: str | None = None
    sud: str | None = None
    max_length: int | None = None
    count_punct_in_length: bool = True


@dataclass(frozen=True)
class AggregationConfig:
    include_target: bool = True
    head_mode: str = "layer_average"
    head: int | None = None


@dataclass(frozen=True)
class SubstitutionConfig:
    slack_factor: int = 2
    strict_pos: bool = False
    include_propn: bool = True


@dataclass(frozen=True)
class EvaluationConfig:
    exclude_punct: bool = True
    scheme: str = "UD"
    macro: bool = False
    base_labels: bool = True
    metrics: tuple[str, ...] = ("uuas", "relation_recall")


@dataclass(frozen=True)
class HeadselConfig:
    selection: str | None = None
    selection_size: int = 1000
    labels: tuple[str, ...] | None = None
    report_labels: tuple[str, ...] = ("nsubj", "obj", "det", "case")
    use_gold_root: bool = False


@dataclass(frozen=True)
class AgreementConfig:
    kinds: tuple[str, ...] = ("object_rc", "subject_rc")
    count: int = 1000
    seed: int = 13


@dataclass(frozen=True)
class PathsConfig:
    output_dir: str = "out"
    cache_dir: str = ".subparse-cache"


@dataclass(frozen=True)
class ExperimentConfig:
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    layers: tuple[int, ...] = (0,)
    k_values: tuple[int, ...] = (0, 1, 3)
    symmetrize: str = "avg"
    from_word_mode: str = "mean"
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    substitution: SubstitutionConfig = field(default_factory=SubstitutionConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    headsel: HeadselConfig = field(default_factory=HeadselConfig)
    agreement: AgreementConfig = field(default_factory=AgreementConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    workers: int = 4

    def validate(self) -> None:
        if self.provider.kind not in ("fixture", "sidecar"):
            raise ConfigError(f"unknown provider kind {self.provider.kind!r}")
        if any(k < 0 for k in self.k_values):
            raise ConfigError("k values must be non-negative")
        if not self.k_values:
            raise ConfigError("k_values must not be empty")
        if not self.layers:
            raise ConfigError("layers must not be empty")
        if self.symmetrize not in ("avg", "max"):
            raise ConfigError(f"unknown symmetrize mode {self.symmetrize!r}")
        if self.from_word_mode not in ("mean", "sum"):
            raise ConfigError(f"unknown from_word_mode {self.from_word_mode!r}")
        if self.evaluation.scheme not in ("UD", "SUD"):
            raise ConfigError(f"unknown scheme {self.evaluation.scheme!r}")
        if not self.evaluation.metrics:
            raise ConfigError("at least one evaluation metric must be enabled")
        for path in (self.corpus.ud, self.corpus.sud, self.headsel.selection):
            if path is not None and not os.path.exists(path):
                raise ConfigError(f"referenced path does not exist: {path}")

    @property
    def max_k(self) -> int:
        return max(self.k_values)

    def gold_path(self) -> str:
        """Treebank file matching the evaluation scheme."""
        path = self.corpus.ud if self.evaluation.scheme == "UD" else self.corpus.sud
        if path is None:
            raise ConfigError(
                f"corpus file for scheme {self.evaluation.scheme} not configured")
        return path

    def words_path(self) -> str:
        """Treebank file supplying word forms and tags (UD preferred)."""
        path = self.corpus.ud or self.corpus.sud
        if path is None:
            raise ConfigError("no corpus file configured")
        return path

    # -- semantic hashing ---------------------------------------------------

    def _semantic_dict(self) -> dict:
        data = {
            "provider": _provider_identity(self.provider),
            "corpus": {
                "ud": _digest_file(self.corpus.ud),
                "sud": _digest_file(self.corpus.sud),
                "max_length": self.corpus.max_length,
                "count_punct_in_length": self.corpus.count_punct_in_length,
            },
            "layers": list(self.layers),
            "k_values": sorted(set(self.k_values)),
            "symmetrize": self.symmetrize,
            "from_word_mode": self.from_word_mode,
            "aggregation": asdict(self.aggregation),
            "substitution": asdict(self.substitution),
            "evaluation": asdict(self.evaluation),
            "headsel": {**asdict(self.headsel),
                        "selection": _digest_file(self.headsel.selection)},
            "agreement": asdict(self.agreement),
        }
        return data

    def semantic_hash(self) -> str:
        payload = json.dumps(self._semantic_dict(), sort_keys=True, default=list)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def substitution_hash(self, corpus_path: str | None = None) -> str:
        """Identity of a substitution artifact (independent of layers/eval)."""
        payload = json.dumps({
            "provider": _provider_identity(self.provider),
            "corpus": _digest_file(corpus_path or self.words_path()),
            "max_length": self.corpus.max_length,
            "count_punct_in_length": self.corpus.count_punct_in_length,
            "k": self.max_k,
            "substitution": asdict(self.substitution),
        }, sort_keys=True, default=list)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def extraction_hash(self, sequences, layers) -> str:
        """Identity of an attention archive: provider, reduction, layer list,
        and the exact word sequences it holds."""
        digest = hashlib.sha256()
        digest.update(json.dumps({
            "provider": _provider_identity(self.provider),
            "layers": list(layers),
            "from_word_mode": self.from_word_mode,
        }, sort_keys=True).encode("utf-8"))
        for words in sequences:
            digest.update(b"\x00")
            digest.update(" ".join(words).encode("utf-8"))
        return digest.hexdigest()[:16]


def _provider_identity(provider: ProviderConfig) -> dict:
    if provider.kind == "fixture":
        return {"kind": "fixture", "seed": provider.seed,
                "layers": provider.layers, "heads": provider.heads}
    return {"kind": "sidecar", "command": provider.command}


def _digest_file(path: str | None) -> str | None:
    if path is None:
        return None
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()[:16]


def _build(cls, data: dict, context: str):
    fields = {f.name for f in cls.__dataclass_fields__.values()}
    unknown = set(data) - fields
    if unknown:
        raise ConfigError(f"unknown {context} keys: {sorted(unknown)}")
    coerced = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        coerced[key] = value
    return cls(**coerced)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Load YAML config, apply flat overrides, then environment overrides."""
    try:
        with open(path, encoding="utf-8") as handle:
            raw = yaml.safe_load(handle) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a mapping")
    return config_from_dict(raw, overrides)


def config_from_dict(raw: dict, overrides: dict | None = None) -> ExperimentConfig:
    raw = dict(raw)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, leaf = key.partition(".")
        if leaf:
            raw.setdefault(section, {})
            if not isinstance(raw[section], dict):
                raise ConfigError(f"cannot override scalar section {section}")
            raw[section] = {**raw[section], leaf: value}
        else:
            raw[key] = value

    sections = {
        "provider": ProviderConfig,
        "corpus": CorpusConfig,
        "aggregation": AggregationConfig,
        "substitution": SubstitutionConfig,
        "evaluation": EvaluationConfig,
        "headsel": HeadselConfig,
        "agreement": AgreementConfig,
        "paths": PathsConfig,
    }
    kwargs = {}
    for key, value in raw.items():
        if key in sections:
            if not isinstance(value, dict):
                raise ConfigError(f"section {key!r} must be a mapping")
            kwargs[key] = _build(sections[key], value, key)
        elif key in ("layers", "k_values"):
            kwargs[key] = tuple(value)
        elif key in ("symmetrize", "from_word_mode", "workers"):
            kwargs[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    config = ExperimentConfig(**kwargs)

    if os.environ.get(ENV_CACHE_DIR):
        config = replace(config, paths=replace(config.paths,
                                               cache_dir=os.environ[ENV_CACHE_DIR]))
    if os.environ.get(ENV_SIDECAR):
        config = replace(config, provider=replace(config.provider,
                                                  command=os.environ[ENV_SIDECAR]))
    config.validate()
    return config
