"""Pipeline plumbing shared by the CLI subcommands.

Responsibilities: opening a provider, loading corpora, generating or reusing
substitution files, extracting attention into cached archives, and exposing
attention through a uniform source interface (``source(words)`` for
per-layer matrices, ``source.tensor(words)`` for the raw stacked tensor).
Extraction runs on a worker pool; everything else is deterministic
single-pass work.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import substitution
from .archive import ArchiveRecord, read_archive, write_archive
from .attention import AttentionMatrix, reduce_to_words
from .config import ExperimentConfig
from .corpus import CorpusFilter, Sentence, align_schemes, filter_corpus, load_conllu_file
from .fixture import FixtureBackend
from .provider import OP_ATTENTION, OP_UPOS, HelloInfo, SidecarClient


class MissingArtifactError(Exception):
    """An upstream artifact is absent; the message names the producing command."""


def open_provider(config: ExperimentConfig):
    if config.provider.kind == "fixture":
        return FixtureBackend(seed=config.provider.seed,
                              layers=config.provider.layers,
                              heads=config.provider.heads)
    return SidecarClient(config.provider.command_argv(),
                         timeout=config.provider.timeout)


def provider_metadata(hello: HelloInfo, config: ExperimentConfig) -> dict:
    meta = {"model": hello.model, "layers": hello.layers, "heads": hello.heads}
    if config.provider.kind == "fixture":
        meta["seed"] = config.provider.seed
    return meta


def load_eval_corpus(config: ExperimentConfig) -> list[Sentence]:
    """Corpus for the configured evaluation scheme, length-filtered.

    When both annotation files are configured they are aligned by order and
    asserted to share token forms.
    """
    scheme = config.evaluation.scheme
    sentences = load_conllu_file(config.gold_path(), scheme=scheme)
    if config.corpus.ud and config.corpus.sud:
        other_scheme = "SUD" if scheme == "UD" else "UD"
        other_path = config.corpus.sud if other_scheme == "SUD" else config.corpus.ud
        align_schemes(sentences, load_conllu_file(other_path, scheme=other_scheme))
    corpus_filter = CorpusFilter(
        max_length=config.corpus.max_length,
        count_punct_in_length=config.corpus.count_punct_in_length)
    return filter_corpus(sentences, corpus_filter)


def ensure_upos(sentences: list[Sentence], provider) -> list[tuple[str, ...]]:
    """UPOS per sentence, querying the provider only where the corpus lacks tags."""
    tags = []
    for sentence in sentences:
        upos = sentence.upos
        if any(tag in ("", "_") for tag in upos):
            response = provider.request(
                provider.new_request(OP_UPOS, words=sentence.words))
            upos = tuple(response.upos)
        tags.append(upos)
    return tags


# -- substitution artifacts --------------------------------------------------


def substitutions_path(config: ExperimentConfig, corpus_path: str | None = None) -> str:
    key = config.substitution_hash(corpus_path)
    return os.path.join(config.paths.output_dir, f"substitutions-{key}.json")


def generate_substitutions(config: ExperimentConfig, sentences: list[Sentence],
                           provider) -> list[substitution.SubstitutionSet]:
    tags = ensure_upos(sentences, provider)
    sets = []
    for sentence, upos in zip(sentences, tags):
        sets.append(substitution.generate(
            sentence.words, upos, config.max_k, provider,
            slack_factor=config.substitution.slack_factor,
            strict_pos=config.substitution.strict_pos,
            include_propn=config.substitution.include_propn))
    return sets


def ensure_substitutions(config: ExperimentConfig, sentences: list[Sentence],
                         provider, metadata: dict, corpus_path: str | None = None,
                         ) -> list[substitution.SubstitutionSet]:
    """Load the substitution file if its identity matches, else generate it."""
    path = substitutions_path(config, corpus_path)
    key = config.substitution_hash(corpus_path)
    if os.path.exists(path):
        stored_meta, sets = substitution.load_substitutions(path)
        if stored_meta.get("substitution_hash") == key and len(sets) == len(sentences):
            return sets
    if provider is None:
        raise MissingArtifactError(
            f"substitution file {path} is missing or stale; run `subparse substitute`")
    sets = generate_substitutions(config, sentences, provider)
    os.makedirs(config.paths.output_dir, exist_ok=True)
    substitution.save_substitutions(
        path, sets, {**metadata, "substitution_hash": key, "k": config.max_k})
    return sets


def require_substitutions(config: ExperimentConfig, sentences: list[Sentence],
                          corpus_path: str | None = None,
                          ) -> list[substitution.SubstitutionSet]:
    path = substitutions_path(config, corpus_path)
    if not os.path.exists(path):
        raise MissingArtifactError(
            f"substitution file {path} not found; run `subparse substitute` first")
    stored_meta, sets = substitution.load_substitutions(path)
    if stored_meta.get("substitution_hash") != config.substitution_hash(corpus_path):
        raise MissingArtifactError(
            f"substitution file {path} was built under a different configuration; "
            "re-run `subparse substitute`")
    if len(sets) != len(sentences):
        raise MissingArtifactError(
            f"substitution file {path} covers {len(sets)} sentences, corpus has "
            f"{len(sentences)}; re-run `subparse substitute`")
    return sets


def collect_sequences(sentences: list[Sentence],
                      subst_sets: list[substitution.SubstitutionSet] | None,
                      ) -> list[tuple[str, ...]]:
    """Distinct word sequences needing attention: targets then variants."""
    seen: set[tuple[str, ...]] = set()
    ordered: list[tuple[str, ...]] = []

    def add(words: tuple[str, ...]):
        if words not in seen:
            seen.add(words)
            ordered.append(words)

    for i, sentence in enumerate(sentences):
        add(sentence.words)
        if subst_sets is not None:
            for words in subst_sets[i].all_variant_words():
                add(words)
    return ordered


# -- attention sources --------------------------------------------------------


class ProviderSource:
    """Fetch + reduce word-level attention on demand, memoized per sequence."""

    def __init__(self, provider, layers: list[int], from_word_mode: str = "mean"):
        self._provider = provider
        self._layers = tuple(sorted(set(layers)))
        self._mode = from_word_mode
        self._cache: dict[tuple[str, ...], dict[int, list[AttentionMatrix]]] = {}

    @property
    def layers(self) -> tuple[int, ...]:
        return self._layers

    def __call__(self, words) -> dict[int, list[AttentionMatrix]]:
        words = tuple(words)
        if words not in self._cache:
            response = self._provider.request(self._provider.new_request(
                OP_ATTENTION, words=words, layers=self._layers))
            self._cache[words] = reduce_to_words(response, from_word_mode=self._mode)
        return self._cache[words]

    def tensor(self, words) -> np.ndarray:
        """Stacked (layers, heads, n, n) float64 tensor, layer axis in
        ascending layer order."""
        per_layer = self(tuple(words))
        return np.stack([
            np.stack([m.values for m in per_layer[layer]])
            for layer in self._layers
        ])


class ArchiveSource:
    """Attention matrices served from an archive, keyed by word sequence."""

    def __init__(self, header, records: list[ArchiveRecord]):
        self._layers = tuple(header.layers)
        self._tensors: dict[tuple[str, ...], np.ndarray] = {}
        for record in records:
            self._tensors.setdefault(record.words, record.tensor.astype(np.float64))

    @property
    def layers(self) -> tuple[int, ...]:
        return self._layers

    def tensor(self, words) -> np.ndarray:
        words = tuple(words)
        if words not in self._tensors:
            raise MissingArtifactError(
                f"attention for {' '.join(words)!r} not in archive; "
                "run `subparse extract`")
        return self._tensors[words]

    def __call__(self, words) -> dict[int, list[AttentionMatrix]]:
        tensor = self.tensor(words)
        out = {}
        for axis, layer in enumerate(self._layers):
            out[layer] = [
                AttentionMatrix(values=tensor[axis, head], layer=layer, head=head,
                                row_stochastic=True)
                for head in range(tensor.shape[1])
            ]
        return out


# -- extraction ---------------------------------------------------------------


def archive_path(config: ExperimentConfig, sequences, layers) -> str:
    key = config.extraction_hash(sequences, layers)
    return os.path.join(config.paths.cache_dir, f"attention-{key}.dsma")


def extract_archive(config: ExperimentConfig, provider, hello: HelloInfo,
                    sequences: list[tuple[str, ...]], layers: list[int],
                    path: str) -> str:
    """Fetch, reduce, and persist attention for every sequence (ordered)."""
    layers = sorted(set(layers))

    def fetch(words: tuple[str, ...]) -> ArchiveRecord:
        response = provider.request(provider.new_request(
            OP_ATTENTION, words=words, layers=tuple(layers)))
        per_layer = reduce_to_words(response, from_word_mode=config.from_word_mode)
        tensor = np.stack([
            np.stack([m.values for m in per_layer[layer]]) for layer in layers
        ]).astype(np.float32)
        return ArchiveRecord(words=words, tensor=tensor, meta={})

    workers = max(1, config.workers)
    if workers == 1:
        records = [fetch(words) for words in sequences]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(fetch, sequences))

    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    write_archive(path, model=hello.model, layers=layers, heads=hello.heads,
                  records=records)
    return path


def ensure_archive(config: ExperimentConfig, provider, hello,
                   sequences: list[tuple[str, ...]], layers: list[int]) -> str:
    path = archive_path(config, sequences, sorted(set(layers)))
    if os.path.exists(path):
        return path
    if provider is None:
        raise MissingArtifactError(
            f"attention archive {path} not found; run `subparse extract` first")
    return extract_archive(config, provider, hello, sequences,
                           sorted(set(layers)), path)


def open_archive_source(path: str) -> ArchiveSource:
    header, records = read_archive(path)
    return ArchiveSource(header, records)


def all_model_layers(hello: HelloInfo) -> list[int]:
    return list(range(hello.layers))


def tensor_mean(target: np.ndarray, variants: list[np.ndarray],
                include_target: bool = True) -> np.ndarray:
    """Element-wise mean of full (layers, heads, n, n) tensors."""
    pool = ([target] if include_target else []) + list(variants)
    if not pool:
        raise ValueError("nothing to average")
    return np.mean(pool, axis=0)
