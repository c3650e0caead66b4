"""Deterministic offline provider backend.

Every payload is a pure function of ``(seed, request)``: attention rows come
from a keyed blake2b hash, candidate lists and POS tags from fixed tables.
This makes pipelines reproducible bit-for-bit with no model involved, on any
platform.
"""

from __future__ import annotations

import hashlib
import re

import numpy as np

from .provider import (
    OP_ATTENTION,
    OP_HELLO,
    OP_MLM_TOPK,
    OP_UPOS,
    BackendError,
    HelloInfo,
    ModelRequest,
    ModelResponse,
)

# Substitution candidates offered by the fixture MLM, all single tokens.
FIXTURE_VOCAB = (
    "figured", "knew", "think", "always", "simply", "only", "love", "demand",
    "have", "help", "talk", "stay", "found", "said", "saw", "made", "kept",
    "took", "came", "went", "left", "told", "felt", "heard", "held", "ran",
    "dog", "cat", "bird", "house", "tree", "river", "road", "garden", "table",
    "chair", "window", "door", "city", "field", "stone", "light", "paper",
    "small", "large", "old", "new", "quiet", "bright", "dark", "warm",
    "near", "under", "over", "behind", "beside", "within", "around", "along",
    "the", "this", "that", "some", "every", "another",
)

_LEXICON_UPOS = {
    "the": "DET", "a": "DET", "an": "DET", "this": "DET", "these": "DET",
    "those": "DET", "some": "DET", "any": "DET", "each": "DET", "every": "DET",
    "no": "DET", "another": "DET",
    "in": "ADP", "on": "ADP", "at": "ADP", "of": "ADP", "to": "ADP",
    "with": "ADP", "from": "ADP", "by": "ADP", "for": "ADP", "over": "ADP",
    "under": "ADP", "near": "ADP", "behind": "ADP", "beside": "ADP",
    "within": "ADP", "around": "ADP", "along": "ADP", "into": "ADP",
    "and": "CCONJ", "or": "CCONJ", "but": "CCONJ",
    "that": "PRON", "who": "PRON", "which": "PRON", "it": "PRON",
    "he": "PRON", "she": "PRON", "they": "PRON", "we": "PRON", "you": "PRON",
    "i": "PRON", "them": "PRON", "him": "PRON", "her": "PRON", "us": "PRON",
    "is": "AUX", "are": "AUX", "was": "AUX", "were": "AUX", "be": "AUX",
    "been": "AUX", "has": "AUX", "have": "AUX", "had": "AUX", "will": "AUX",
    "would": "AUX", "can": "AUX", "could": "AUX", "do": "AUX", "does": "AUX",
    "did": "AUX", "'d": "AUX", "'s": "AUX",
    "not": "PART", "n't": "PART",
    "very": "ADV", "never": "ADV", "always": "ADV", "just": "ADV",
    "only": "ADV", "simply": "ADV", "often": "ADV", "too": "ADV",
    "run": "VERB", "runs": "VERB", "ran": "VERB", "know": "VERB",
    "knows": "VERB", "knew": "VERB", "like": "VERB", "likes": "VERB",
    "liked": "VERB", "think": "VERB", "thought": "VERB", "see": "VERB",
    "saw": "VERB", "sleep": "VERB", "sleeps": "VERB", "chase": "VERB",
    "chased": "VERB", "eat": "VERB", "eats": "VERB", "ate": "VERB",
    "read": "VERB", "reads": "VERB", "wrote": "VERB", "writes": "VERB",
    "sing": "VERB", "sings": "VERB", "sang": "VERB", "play": "VERB",
    "plays": "VERB", "played": "VERB", "cooks": "VERB", "swims": "VERB",
    "laughs": "VERB", "smiles": "VERB", "hates": "VERB", "loves": "VERB",
    "admires": "VERB", "dances": "VERB", "jumps": "VERB",
}

_PUNCT_RE = re.compile(r"^[^\w]+$")


def _hash_floats(seed: int, label: str, count: int) -> np.ndarray:
    """``count`` uniform floats in [0, 1), keyed by (seed, label)."""
    key = int(seed).to_bytes(8, "little", signed=True)
    values: list[float] = []
    block = 0
    while len(values) < count:
        digest = hashlib.blake2b(f"{label}|{block}".encode("utf-8"),
                                 key=key, digest_size=64).digest()
        for offset in range(0, 64, 8):
            values.append(int.from_bytes(digest[offset:offset + 8], "little") / 2.0 ** 64)
        block += 1
    return np.array(values[:count], dtype=float)


def _hash_u64(seed: int, label: str) -> int:
    key = int(seed).to_bytes(8, "little", signed=True)
    digest = hashlib.blake2b(label.encode("utf-8"), key=key, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def fixture_upos(words: tuple[str, ...] | list[str]) -> list[str]:
    """Deterministic lexicon-plus-suffix tagging; unknown words become NOUN."""
    tags = []
    for word in words:
        lower = word.lower()
        if _PUNCT_RE.match(word):
            tags.append("PUNCT")
        elif lower in _LEXICON_UPOS:
            tags.append(_LEXICON_UPOS[lower])
        elif lower.endswith("ly"):
            tags.append("ADV")
        else:
            tags.append("NOUN")
    return tags


class FixtureBackend:
    """In-process provider with the same surface as :class:`SidecarClient`."""

    def __init__(self, seed: int, layers: int = 4, heads: int = 4,
                 model_name: str = "fixture"):
        self.seed = int(seed)
        self.n_layers = int(layers)
        self.n_heads = int(heads)
        self.model_name = model_name
        self._next_id = 0

    def hello(self) -> HelloInfo:
        return HelloInfo(model=self.model_name, layers=self.n_layers,
                         heads=self.n_heads)

    def new_request(self, op: str, **kwargs) -> ModelRequest:
        self._next_id += 1
        return ModelRequest(id=self._next_id, op=op, **kwargs)

    def _attention(self, req: ModelRequest) -> ModelResponse:
        words = req.words
        n = len(words)
        if n == 0:
            raise BackendError("attention request with no words")
        text = " ".join(words)
        attention: dict[int, np.ndarray] = {}
        for layer in req.layers:
            if not 0 <= layer < self.n_layers:
                raise BackendError(f"layer {layer} outside model depth {self.n_layers}")
            tensor = np.empty((self.n_heads, n, n), dtype=float)
            for head in range(self.n_heads):
                for row in range(n):
                    raw = _hash_floats(self.seed, f"att|{text}|L{layer}|H{head}|R{row}", n)
                    raw = raw + 1e-3  # keep rows strictly positive
                    tensor[head, row] = raw / raw.sum()
            attention[layer] = tensor
        return ModelResponse(
            id=req.id,
            subword_forms=list(words),  # one subword per word
            word_ids=list(range(n)),
            attention=attention,
        )

    def _mlm_topk(self, req: ModelRequest) -> ModelResponse:
        text = " ".join(req.words)
        ranked = sorted(
            FIXTURE_VOCAB,
            key=lambda w: _hash_u64(self.seed, f"mlm|{text}|P{req.position}|{w}"),
        )
        k = min(req.k, len(ranked))
        candidates = [(word, -0.25 * (rank + 1)) for rank, word in enumerate(ranked[:k])]
        return ModelResponse(id=req.id, candidates=candidates)

    def request(self, req: ModelRequest, timeout: float | None = None) -> ModelResponse:
        if req.op == OP_ATTENTION:
            resp = self._attention(req)
        elif req.op == OP_MLM_TOPK:
            resp = self._mlm_topk(req)
        elif req.op == OP_UPOS:
            resp = ModelResponse(id=req.id, upos=fixture_upos(req.words))
        elif req.op == OP_HELLO:
            resp = ModelResponse(id=req.id, model=self.model_name,
                                 model_layers=self.n_layers, model_heads=self.n_heads)
        else:
            raise BackendError(f"unknown op {req.op!r}")
        return resp.validate_for(req)

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
