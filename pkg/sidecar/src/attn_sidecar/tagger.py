"""UPOS taggers: Stanza when available, a deterministic lexicon fallback.

The lexicon tagger exists so the sidecar can run and be tested in
environments without Stanza models; it covers closed-class English words
plus a couple of suffix rules and defaults to NOUN.
"""

from __future__ import annotations

import re


class TaggerError(Exception):
    pass


_PUNCT_RE = re.compile(r"^[^\w]+$")

_LEXICON = {
    "the": "DET", "a": "DET", "an": "DET", "this": "DET", "these": "DET",
    "those": "DET", "some": "DET", "any": "DET", "each": "DET",
    "every": "DET", "no": "DET", "another": "DET",
    "in": "ADP", "on": "ADP", "at": "ADP", "of": "ADP", "to": "ADP",
    "with": "ADP", "from": "ADP", "by": "ADP", "for": "ADP", "over": "ADP",
    "under": "ADP", "near": "ADP", "behind": "ADP", "into": "ADP",
    "through": "ADP", "between": "ADP",
    "and": "CCONJ", "or": "CCONJ", "but": "CCONJ",
    "that": "PRON", "who": "PRON", "which": "PRON", "it": "PRON",
    "he": "PRON", "she": "PRON", "they": "PRON", "we": "PRON",
    "you": "PRON", "i": "PRON", "them": "PRON", "him": "PRON",
    "her": "PRON", "us": "PRON", "me": "PRON", "my": "PRON",
    "is": "AUX", "are": "AUX", "was": "AUX", "were": "AUX", "be": "AUX",
    "been": "AUX", "being": "AUX", "has": "AUX", "have": "AUX",
    "had": "AUX", "will": "AUX", "would": "AUX", "can": "AUX",
    "could": "AUX", "shall": "AUX", "should": "AUX", "may": "AUX",
    "might": "AUX", "must": "AUX", "do": "AUX", "does": "AUX", "did": "AUX",
    "'d": "AUX", "'s": "AUX", "'ll": "AUX", "'re": "AUX", "'ve": "AUX",
    "not": "PART", "n't": "PART",
    "very": "ADV", "never": "ADV", "always": "ADV", "just": "ADV",
    "only": "ADV", "often": "ADV", "too": "ADV", "also": "ADV",
    "run": "VERB", "runs": "VERB", "ran": "VERB", "know": "VERB",
    "knows": "VERB", "knew": "VERB", "like": "VERB", "likes": "VERB",
    "think": "VERB", "thought": "VERB", "see": "VERB", "saw": "VERB",
    "go": "VERB", "goes": "VERB", "went": "VERB", "make": "VERB",
    "makes": "VERB", "made": "VERB", "say": "VERB", "says": "VERB",
    "said": "VERB", "take": "VERB", "takes": "VERB", "took": "VERB",
    "get": "VERB", "gets": "VERB", "got": "VERB", "sleep": "VERB",
    "sleeps": "VERB", "eat": "VERB", "eats": "VERB", "ate": "VERB",
}


class LexiconTagger:
    """Pure function of the word forms; no models, no downloads."""

    def tag(self, words) -> list[str]:
        tags = []
        for word in words:
            lower = word.lower()
            if _PUNCT_RE.match(word):
                tags.append("PUNCT")
            elif lower in _LEXICON:
                tags.append(_LEXICON[lower])
            elif lower.endswith("ly"):
                tags.append("ADV")
            else:
                tags.append("NOUN")
        return tags


class StanzaTagger:
    """Pretokenized UPOS tagging through Stanza (models must be installed)."""

    def __init__(self, lang: str = "en"):
        try:
            import stanza
        except ImportError as exc:
            raise TaggerError(
                "stanza is not installed; install the sidecar's [stanza] extra "
                "or use --tagger lexicon") from exc
        try:
            self._pipeline = stanza.Pipeline(
                lang=lang, processors="tokenize,pos",
                tokenize_pretokenized=True, download_method=None, verbose=False)
        except Exception as exc:
            raise TaggerError(f"could not load stanza pipeline: {exc}") from exc

    def tag(self, words) -> list[str]:
        document = self._pipeline([list(words)])
        return [word.upos for sentence in document.sentences
                for word in sentence.words]


def make_tagger(package: str):
    if package == "lexicon":
        return LexiconTagger()
    if package == "stanza":
        return StanzaTagger()
    raise TaggerError(f"unknown tagger package {package!r}")
