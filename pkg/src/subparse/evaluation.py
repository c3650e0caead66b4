"""Scoring induced trees against gold treebanks.

Metrics: undirected unlabeled attachment (UUAS), per-relation recall, and
directed UAS/LAS.  Corpus scores are micro-averaged (edge-weighted) by
default; a macro (sentence-averaged) variant is available behind a flag.
Gold edges incident to punctuation are excluded when ``exclude_punct`` is
set (the default), and the root arc is never counted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .corpus import Sentence, base_label
from .induction import (
    AggregationSpec,
    InducedTree,
    collapse_heads,
    induce,
)


class EvalError(Exception):
    pass


@dataclass(frozen=True)
class EvalConfig:
    exclude_punct: bool = True
    scheme: str = "UD"
    macro: bool = False
    base_labels: bool = True  # strip relation subtypes for LAS


def considered_gold_edges(sentence: Sentence, exclude_punct: bool,
                          ) -> list[tuple[int, int, str]]:
    if sentence.gold is None:
        raise EvalError(f"sentence {sentence.sent_id!r} has no gold tree")
    punct = {t.index for t in sentence.tokens if t.is_punct}
    edges = []
    for head, dep, label in sorted(sentence.gold.edges):
        if exclude_punct and (head in punct or dep in punct):
            continue
        edges.append((head, dep, label))
    return edges


def uuas(predicted: InducedTree, sentence: Sentence, cfg: EvalConfig,
         ) -> tuple[int, int]:
    """(matched, total) gold edges recovered ignoring direction and labels."""
    if predicted.n != sentence.n:
        raise EvalError(
            f"predicted tree has {predicted.n} words, gold has {sentence.n}")
    gold = considered_gold_edges(sentence, cfg.exclude_punct)
    pred_pairs = predicted.unordered_pairs()
    matched = sum(1 for h, d, _ in gold if frozenset((h, d)) in pred_pairs)
    return matched, len(gold)


def corpus_uuas(pairs: list[tuple[InducedTree, Sentence]], cfg: EvalConfig,
                ) -> dict:
    """Aggregate UUAS over (tree, sentence) pairs; micro unless cfg.macro."""
    matched_total = 0
    gold_total = 0
    ratios = []
    per_sentence = []
    for tree, sentence in pairs:
        matched, total = uuas(tree, sentence, cfg)
        matched_total += matched
        gold_total += total
        if total > 0:
            ratios.append(matched / total)
        per_sentence.append({"sent_id": sentence.sent_id, "matched": matched,
                             "total": total})
    micro = matched_total / gold_total if gold_total else 0.0
    macro = sum(ratios) / len(ratios) if ratios else 0.0
    return {
        "uuas": macro if cfg.macro else micro,
        "micro": micro,
        "macro": macro,
        "matched": matched_total,
        "total": gold_total,
        "sentences": len(pairs),
        "per_sentence": per_sentence,
    }


def relation_recall(pairs: list[tuple[InducedTree, Sentence]], cfg: EvalConfig,
                    ) -> dict[str, dict]:
    """Per gold relation label: fraction of its arcs present in the predicted
    tree as unordered pairs.  Labels absent from the corpus are omitted."""
    counts: dict[str, list[int]] = {}
    for tree, sentence in pairs:
        pred_pairs = tree.unordered_pairs()
        for head, dep, label in considered_gold_edges(sentence, cfg.exclude_punct):
            entry = counts.setdefault(label, [0, 0])
            entry[1] += 1
            if frozenset((head, dep)) in pred_pairs:
                entry[0] += 1
    return {
        label: {"matched": matched, "total": total, "recall": matched / total}
        for label, (matched, total) in sorted(counts.items())
    }


def uas_las(pairs: list[tuple[InducedTree, Sentence]], cfg: EvalConfig,
            ) -> dict:
    """Directed attachment scores over words (punctuation excluded by default)."""
    uas_correct = 0
    las_correct = 0
    total = 0
    for tree, sentence in pairs:
        if not tree.directed:
            raise EvalError("uas_las needs directed trees")
        if tree.n != sentence.n:
            raise EvalError("tree size mismatch")
        head_map = tree.head_of()
        label_map = {}
        if tree.labels is not None:
            label_map = {dep: tree.labels[i]
                         for i, (_, dep) in enumerate(tree.edges)}
        for token in sentence.tokens:
            if cfg.exclude_punct and token.is_punct:
                continue
            if token.gold_head is None:
                raise EvalError(f"sentence {sentence.sent_id!r} has no gold heads")
            total += 1
            predicted_head = -1 if token.index == tree.root else head_map[token.index]
            if predicted_head != token.gold_head:
                continue
            uas_correct += 1
            if token.index == tree.root:
                las_correct += 1  # root arc has no label to mismatch
                continue
            gold = token.gold_deprel or ""
            pred = label_map.get(token.index, "")
            if cfg.base_labels:
                gold, pred = base_label(gold), base_label(pred)
            if gold == pred:
                las_correct += 1
    return {
        "uas": uas_correct / total if total else 0.0,
        "las": las_correct / total if total else 0.0,
        "uas_correct": uas_correct,
        "las_correct": las_correct,
        "total": total,
    }


@dataclass
class EvalReport:
    metadata: dict
    scores: dict
    relations: dict[str, dict] = field(default_factory=dict)
    per_sentence: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "metadata": self.metadata,
            "scores": self.scores,
            "relations": self.relations,
            "per_sentence": self.per_sentence,
        }


@dataclass
class SweepCell:
    layer: int
    k: int
    uuas: float | None = None
    matched: int = 0
    total: int = 0
    delta: float | None = None
    error: str | None = None


def sweep(sentences: list[Sentence], layers: list[int], k_values: list[int],
          subst_sets: list, source, spec_template: AggregationSpec,
          cfg: EvalConfig, symmetrize_mode: str = "avg") -> list[SweepCell]:
    """Score the (layer, k) grid.

    ``subst_sets`` holds one full-k substitution set per sentence; smaller k
    cells reuse its top-ranked variants.  ``source`` maps a word tuple to
    per-layer, per-head attention matrices.  The k=0 target-only baseline is
    always computed; cell failures are recorded and the sweep continues.
    """
    grid_k = sorted(set(k_values) | {0})
    cells: list[SweepCell] = []
    baseline: dict[int, float] = {}
    for layer in layers:
        spec = AggregationSpec(layer=layer, head_mode=spec_template.head_mode,
                               head=spec_template.head,
                               include_target=spec_template.include_target)
        for k in grid_k:
            cell = SweepCell(layer=layer, k=k)
            try:
                pairs = []
                for sentence, subst in zip(sentences, subst_sets):
                    if not sentence.usable or sentence.gold is None:
                        continue
                    target = collapse_heads(source(sentence.words)[layer], spec)
                    variants = []
                    if k > 0:
                        restricted = subst.restrict(k)
                        variants = [
                            collapse_heads(source(words)[layer], spec)
                            for words in restricted.all_variant_words()
                        ]
                    tree, _ = induce(target, variants, spec,
                                     symmetrize_mode=symmetrize_mode)
                    pairs.append((tree, sentence))
                summary = corpus_uuas(pairs, cfg)
                cell.uuas = summary["uuas"]
                cell.matched = summary["matched"]
                cell.total = summary["total"]
                if k == 0:
                    baseline[layer] = cell.uuas
                if layer in baseline:
                    cell.delta = cell.uuas - baseline[layer]
            except Exception as exc:  # cell-level failure, sweep continues
                cell.error = f"{type(exc).__name__}: {exc}"
            cells.append(cell)
    return cells
