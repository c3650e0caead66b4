"""Generated subject-verb agreement constructions and edge recall.

Two templates, eight words each, main verb separated from its subject by a
relative clause:

* object RC:  ``the N1 that the N2 Vt Vmain .``   ("the pilot that the
  minister likes cooks .")
* subject RC: ``the N1 that Vt the N2 Vmain .``   ("the customer that hates
  the skater swims .")

The subject is always position 1 and the main verb position 6.  Copular
verbs are excluded from the vocabulary so the main verb is always lexical.
Sampling is seeded and proceeds without replacement until the template
space is exhausted, then with replacement.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from itertools import product

from .corpus import Sentence, Token
from .induction import InducedTree

OBJECT_RC = "object_rc"
SUBJECT_RC = "subject_rc"
KINDS = (OBJECT_RC, SUBJECT_RC)

DETERMINER = "the"

NOUNS = (
    "author", "pilot", "surgeon", "farmer", "customer", "manager", "mechanic",
    "minister", "senator", "teacher", "consultant", "officer", "skater",
    "executive", "architect", "dancer", "chef", "clerk",
)

EMBEDDED_VERBS = ("likes", "hates", "loves", "admires")

MAIN_VERBS = (
    "cooks", "swims", "laughs", "smiles", "writes", "dances", "sings", "jumps",
)

# Kept only to assert the vocabulary stays copula-free.
COPULAR_VERBS = frozenset({"is", "was", "are", "were", "be", "been", "being",
                           "seems", "appears", "becomes", "remains"})

# Published recall of conditional-MI trees on these constructions; quoted in
# reports for comparison, never recomputed here.
CONDITIONAL_MI_RECALL = {OBJECT_RC: 8.9, SUBJECT_RC: 1.9}

SUBJECT_INDEX = 1
VERB_INDEX = 6

_UPOS = {
    OBJECT_RC: ("DET", "NOUN", "PRON", "DET", "NOUN", "VERB", "VERB", "PUNCT"),
    SUBJECT_RC: ("DET", "NOUN", "PRON", "VERB", "DET", "NOUN", "VERB", "PUNCT"),
}


@dataclass(frozen=True)
class AgreementExample:
    kind: str
    sentence: Sentence
    subject_index: int
    verb_index: int


def fill(kind: str, noun1: str, noun2: str, embedded_verb: str,
         main_verb: str) -> AgreementExample:
    """Instantiate one template with the given lexical choices."""
    if kind == OBJECT_RC:
        words = (DETERMINER, noun1, "that", DETERMINER, noun2,
                 embedded_verb, main_verb, ".")
    elif kind == SUBJECT_RC:
        words = (DETERMINER, noun1, "that", embedded_verb, DETERMINER,
                 noun2, main_verb, ".")
    else:
        raise ValueError(f"unknown template kind {kind!r}")
    tokens = [Token(index=i, form=form, upos=tag)
              for i, (form, tag) in enumerate(zip(words, _UPOS[kind]))]
    sentence = Sentence(tokens=tokens, gold=None,
                        sent_id=f"{kind}-{noun1}-{noun2}-{embedded_verb}-{main_verb}")
    return AgreementExample(kind=kind, sentence=sentence,
                            subject_index=SUBJECT_INDEX, verb_index=VERB_INDEX)


def generate_agreement(kind: str, count: int, seed: int) -> list[AgreementExample]:
    """``count`` seeded template instances; distinct until the space runs out."""
    if count < 1:
        raise ValueError("count must be >= 1")
    combos = [
        (n1, n2, emb, main)
        for n1, n2, emb, main in product(NOUNS, NOUNS, EMBEDDED_VERBS, MAIN_VERBS)
        if n1 != n2
    ]
    rng = random.Random(seed)
    rng.shuffle(combos)
    picks = list(combos[:count])
    while len(picks) < count:
        picks.append(combos[rng.randrange(len(combos))])
    return [fill(kind, *pick) for pick in picks]


def agreement_recall(trees: list[InducedTree],
                     examples: list[AgreementExample]) -> tuple[int, int]:
    """(hits, total): sentences whose tree contains the subject-verb edge."""
    if len(trees) != len(examples):
        raise ValueError("one tree per example required")
    hits = 0
    for tree, example in zip(trees, examples):
        pair = frozenset((example.subject_index, example.verb_index))
        if pair in tree.unordered_pairs():
            hits += 1
    return hits, len(examples)


def save_corpus(path, examples: list[AgreementExample]) -> None:
    """CoNLL-U-like serialization with subject/verb indices in comments."""
    blocks = []
    for example in examples:
        lines = [
            f"# sent_id = {example.sentence.sent_id}",
            f"# kind = {example.kind}",
            f"# subject = {example.subject_index}",
            f"# verb = {example.verb_index}",
        ]
        for token in example.sentence.tokens:
            lines.append("\t".join([str(token.index + 1), token.form, "_",
                                    token.upos, "_", "_", "_", "_", "_", "_"]))
        blocks.append("\n".join(lines))
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n\n".join(blocks) + "\n")


def load_corpus(path) -> list[AgreementExample]:
    examples = []
    with open(path, encoding="utf-8") as handle:
        block: list[str] = []
        for raw in list(handle) + [""]:
            line = raw.rstrip("\n")
            if line.strip():
                block.append(line)
                continue
            if not block:
                continue
            meta = {}
            rows = []
            for entry in block:
                if entry.startswith("#"):
                    key, _, value = entry[1:].partition("=")
                    meta[key.strip()] = value.strip()
                else:
                    cols = entry.split("\t")
                    rows.append((cols[1], cols[3]))
            tokens = [Token(index=i, form=form, upos=tag)
                      for i, (form, tag) in enumerate(rows)]
            sentence = Sentence(tokens=tokens, gold=None,
                                sent_id=meta.get("sent_id", ""))
            examples.append(AgreementExample(
                kind=meta["kind"],
                sentence=sentence,
                subject_index=int(meta["subject"]),
                verb_index=int(meta["verb"]),
            ))
            block = []
    return examples
