"""Substitution sets: masked-LM replacement variants for a target sentence.

For every substitution-eligible position (open-class UPOS, see
``OPEN_CLASS_TAGS``) the provider is asked for more candidates than needed
(``slack_factor * k`` extra), candidates are filtered, and the ``k``
survivors become single-word variants of the target sentence.  Every variant
differs from the target in exactly one position and has the same word count.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .provider import OP_MLM_TOPK, OP_UPOS

OPEN_CLASS_TAGS = frozenset({"ADJ", "NOUN", "PROPN", "VERB", "ADV", "ADP", "DET"})

_HAS_WORD_CHAR = re.compile(r"\w")


def eligible_positions(words, upos, include_propn: bool = True) -> list[int]:
    """Word indices open to substitution, in sentence order."""
    if len(words) != len(upos):
        raise ValueError("words and upos lengths differ")
    allowed = OPEN_CLASS_TAGS if include_propn else OPEN_CLASS_TAGS - {"PROPN"}
    return [i for i, tag in enumerate(upos) if tag in allowed]


@dataclass(frozen=True)
class Variant:
    position: int
    replacement: str
    logprob: float
    rank: int  # rank among the survivors at this position, 0-based


@dataclass
class SubstitutionSet:
    """A target sentence plus its single-word substitution variants.

    ``variants`` is ordered by position, then rank, which makes restriction
    to a smaller ``k`` a pure prefix operation per position.
    """

    target_words: tuple[str, ...]
    upos: tuple[str, ...]
    k: int
    eligible: tuple[int, ...]
    variants: list[Variant] = field(default_factory=list)
    shortfall: dict[int, int] = field(default_factory=dict)  # position -> missing

    def variant_words(self, variant: Variant) -> tuple[str, ...]:
        words = list(self.target_words)
        words[variant.position] = variant.replacement
        return tuple(words)

    def all_variant_words(self) -> list[tuple[str, ...]]:
        return [self.variant_words(v) for v in self.variants]

    def by_position(self) -> dict[int, list[Variant]]:
        grouped: dict[int, list[Variant]] = {}
        for variant in self.variants:
            grouped.setdefault(variant.position, []).append(variant)
        return grouped

    def restrict(self, k: int) -> "SubstitutionSet":
        """The same set at a smaller k (top-ranked survivors per position)."""
        if k > self.k:
            raise ValueError(f"cannot restrict k={self.k} set to larger k={k}")
        kept = [v for v in self.variants if v.rank < k]
        shortfall = {pos: k - have
                     for pos, have in self._per_position_counts(kept).items()
                     if have < k}
        return SubstitutionSet(target_words=self.target_words, upos=self.upos,
                               k=k, eligible=self.eligible, variants=kept,
                               shortfall=shortfall)

    def _per_position_counts(self, variants) -> dict[int, int]:
        counts = {pos: 0 for pos in self.eligible}
        for v in variants:
            counts[v.position] += 1
        return counts

    def to_dict(self) -> dict:
        return {
            "target_words": list(self.target_words),
            "upos": list(self.upos),
            "k": self.k,
            "eligible": list(self.eligible),
            "variants": [
                {"position": v.position, "replacement": v.replacement,
                 "logprob": v.logprob, "rank": v.rank}
                for v in self.variants
            ],
            "shortfall": {str(pos): missing for pos, missing in sorted(self.shortfall.items())},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SubstitutionSet":
        return cls(
            target_words=tuple(data["target_words"]),
            upos=tuple(data["upos"]),
            k=int(data["k"]),
            eligible=tuple(data["eligible"]),
            variants=[Variant(position=int(v["position"]),
                              replacement=str(v["replacement"]),
                              logprob=float(v["logprob"]),
                              rank=int(v["rank"]))
                      for v in data["variants"]],
            shortfall={int(pos): int(missing)
                       for pos, missing in data.get("shortfall", {}).items()},
        )


def _acceptable(candidate: str, original: str) -> bool:
    if candidate.lower() == original.lower():
        return False
    if candidate.startswith("##"):  # subword continuation
        return False
    if not _HAS_WORD_CHAR.search(candidate):  # pure punctuation / symbols
        return False
    return True


def generate(words, upos, k: int, provider, *, slack_factor: int = 2,
             strict_pos: bool = False, include_propn: bool = True,
             ) -> SubstitutionSet:
    """Build the substitution set for one sentence.

    ``provider`` must answer ``mlm_topk`` (and ``upos`` when
    ``strict_pos=True``).  Positions with fewer than ``k`` surviving
    candidates keep what survives and record the shortfall.
    """
    words = tuple(words)
    upos = tuple(upos)
    if k < 0:
        raise ValueError("k must be >= 0")
    eligible = tuple(eligible_positions(words, upos, include_propn=include_propn))
    subst = SubstitutionSet(target_words=words, upos=upos, k=k, eligible=eligible)
    if k == 0:
        return subst

    for position in eligible:
        request = provider.new_request(
            OP_MLM_TOPK, words=words, position=position, k=k + slack_factor * k)
        response = provider.request(request)
        survivors: list[tuple[str, float]] = []
        seen: set[str] = set()
        for candidate, logprob in response.candidates:
            if not _acceptable(candidate, words[position]):
                continue
            key = candidate.lower()
            if key in seen:
                continue
            if strict_pos and not _same_tag(words, position, candidate, upos, provider):
                continue
            seen.add(key)
            survivors.append((candidate, logprob))
            if len(survivors) == k:
                break
        for rank, (candidate, logprob) in enumerate(survivors):
            subst.variants.append(Variant(position=position, replacement=candidate,
                                          logprob=logprob, rank=rank))
        if len(survivors) < k:
            subst.shortfall[position] = k - len(survivors)
    return subst


def _same_tag(words, position, candidate, upos, provider) -> bool:
    variant = list(words)
    variant[position] = candidate
    response = provider.request(provider.new_request(OP_UPOS, words=tuple(variant)))
    return response.upos[position] == upos[position]


def save_substitutions(path, sets: list[SubstitutionSet], metadata: dict) -> None:
    payload = {"metadata": metadata, "sentences": [s.to_dict() for s in sets]}
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, sort_keys=True, indent=1)
        handle.write("\n")


def load_substitutions(path) -> tuple[dict, list[SubstitutionSet]]:
    with open(path, encoding="utf-8") as handle:
        payload = json.load(handle)
    sets = [SubstitutionSet.from_dict(entry) for entry in payload["sentences"]]
    return payload.get("metadata", {}), sets
