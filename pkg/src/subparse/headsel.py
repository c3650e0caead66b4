"""Per-relation attention-head selection and directed tree induction.

Gold arcs from a supervision corpus pick, for every relation label and
direction, the (layer, head) whose row-argmax best recovers the arcs.  The
selected inventory then scores a directed matrix (element-wise max over the
per-relation matrices, oriented head-to-dependent) that is decoded with the
Chu-Liu/Edmonds arborescence.  Gold trees are used only for selection,
never for decoding.

A word is never its own parent, so the diagonal is excluded from every
argmax.  Ties break toward the smaller index (and the smaller (layer, head)
pair during selection).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .corpus import Sentence, base_label
from .induction import InducedTree, InductionError, chu_liu_edmonds

DIR_DEP_TO_PARENT = "dep_to_parent"
DIR_PARENT_TO_DEP = "parent_to_dep"
DIRECTIONS = (DIR_DEP_TO_PARENT, DIR_PARENT_TO_DEP)


@dataclass(frozen=True)
class HeadChoice:
    layer: int
    head: int
    direction: str
    accuracy: float


@dataclass
class HeadInventory:
    """Selected (layer, head, direction) per relation label."""

    entries: dict[tuple[str, str], HeadChoice] = field(default_factory=dict)
    selection_size: int = 0

    def labels(self) -> list[str]:
        return sorted({label for label, _ in self.entries})

    def to_dict(self) -> dict:
        return {
            "selection_size": self.selection_size,
            "entries": [
                {"label": label, "direction": direction, "layer": choice.layer,
                 "head": choice.head, "accuracy": choice.accuracy}
                for (label, direction), choice in sorted(self.entries.items())
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HeadInventory":
        inventory = cls(selection_size=int(data.get("selection_size", 0)))
        for entry in data["entries"]:
            choice = HeadChoice(layer=int(entry["layer"]), head=int(entry["head"]),
                                direction=entry["direction"],
                                accuracy=float(entry["accuracy"]))
            inventory.entries[(entry["label"], entry["direction"])] = choice
        return inventory

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.to_dict(), handle, sort_keys=True, indent=1)
            handle.write("\n")

    @classmethod
    def load(cls, path) -> "HeadInventory":
        with open(path, encoding="utf-8") as handle:
            return cls.from_dict(json.load(handle))


def _masked(tensor: np.ndarray) -> np.ndarray:
    """Copy with the self-attention diagonal suppressed for argmax purposes."""
    masked = np.array(tensor, dtype=float)
    n = masked.shape[-1]
    idx = np.arange(n)
    masked[..., idx, idx] = -1.0
    return masked


def _gold_arcs(sentence: Sentence, use_base_labels: bool,
               ) -> list[tuple[int, int, str]]:
    arcs = []
    for head, dep, label in sorted(sentence.gold.edges):
        arcs.append((head, dep, base_label(label) if use_base_labels else label))
    return arcs


def _arc_hits(masked: np.ndarray, head: int, dep: int, direction: str) -> np.ndarray:
    """Boolean (layers, heads) grid: does the argmax recover this arc?"""
    if direction == DIR_DEP_TO_PARENT:
        return masked[:, :, dep, :].argmax(axis=-1) == head
    if direction == DIR_PARENT_TO_DEP:
        return masked[:, :, head, :].argmax(axis=-1) == dep
    raise ValueError(f"unknown direction {direction!r}")


def head_accuracy(items: list[tuple[Sentence, np.ndarray]], layer: int, head: int,
                  label: str, direction: str, use_base_labels: bool = True,
                  ) -> float | None:
    """Fraction of gold arcs with ``label`` recovered by (layer, head) argmax.

    Returns None when the label does not occur in the slice (undefined, not
    zero).  ``items`` pairs each sentence with its word-level attention
    tensor of shape (layers, heads, n, n).
    """
    hits = 0
    total = 0
    for sentence, tensor in items:
        if sentence.gold is None:
            continue
        masked = _masked(tensor[layer:layer + 1, head:head + 1])
        for arc_head, arc_dep, arc_label in _gold_arcs(sentence, use_base_labels):
            if arc_label != label:
                continue
            total += 1
            if _arc_hits(masked, arc_head, arc_dep, direction)[0, 0]:
                hits += 1
    if total == 0:
        return None
    return hits / total


def select_heads(items: list[tuple[Sentence, np.ndarray]],
                 labels: list[str] | None = None,
                 selection_size: int | None = None,
                 use_base_labels: bool = True) -> HeadInventory:
    """Pick the best (layer, head) per (label, direction) over the slice."""
    if selection_size is not None:
        items = items[:selection_size]
    if not items:
        raise ValueError("empty selection corpus")
    n_layers, n_heads = items[0][1].shape[:2]

    hits: dict[tuple[str, str], np.ndarray] = {}
    totals: dict[str, int] = {}
    for sentence, tensor in items:
        if sentence.gold is None:
            continue
        masked = _masked(tensor)
        for arc_head, arc_dep, arc_label in _gold_arcs(sentence, use_base_labels):
            if labels is not None and arc_label not in labels:
                continue
            totals[arc_label] = totals.get(arc_label, 0) + 1
            for direction in DIRECTIONS:
                key = (arc_label, direction)
                if key not in hits:
                    hits[key] = np.zeros((n_layers, n_heads), dtype=int)
                hits[key] += _arc_hits(masked, arc_head, arc_dep, direction)

    inventory = HeadInventory(selection_size=len(items))
    for (label, direction), grid in sorted(hits.items()):
        flat = int(np.argmax(grid))  # row-major: smallest (layer, head) wins ties
        layer, head = divmod(flat, n_heads)
        inventory.entries[(label, direction)] = HeadChoice(
            layer=layer, head=head, direction=direction,
            accuracy=grid[layer, head] / totals[label])
    return inventory


def combined_scores(tensor: np.ndarray, inventory: HeadInventory,
                    ) -> tuple[np.ndarray, list[str]]:
    """Directed score matrix: element-wise max over inventory entries.

    ``scores[h][d]`` is the best head-to-dependent evidence among relations;
    the returned label grid names the winning relation per cell.
    """
    if not inventory.entries:
        raise InductionError("empty head inventory")
    n = tensor.shape[-1]
    stack = []
    names = []
    for (label, direction), choice in sorted(inventory.entries.items()):
        matrix = np.array(tensor[choice.layer, choice.head], dtype=float)
        if direction == DIR_DEP_TO_PARENT:
            matrix = matrix.T  # rows of dependents become head -> dep scores
        stack.append(matrix)
        names.append(label)
    stacked = np.stack(stack)
    idx = np.arange(n)
    stacked[:, idx, idx] = 0.0
    scores = stacked.max(axis=0)
    winner = stacked.argmax(axis=0)
    labels = [[names[winner[i, j]] for j in range(n)] for i in range(n)]
    return scores, labels


def induce_directed(words, tensor: np.ndarray, inventory: HeadInventory,
                    root: int | None = None) -> InducedTree:
    """Decode a labeled arborescence from inventory-combined scores.

    The root defaults to the word with the highest total outgoing score.
    """
    n = len(words)
    scores, labels = combined_scores(tensor, inventory)
    if root is None:
        root = int(np.argmax(scores.sum(axis=1)))
    tree = chu_liu_edmonds(scores, root)
    arc_labels = tuple(labels[h][d] for h, d in tree.edges)
    return InducedTree(n=n, edges=tree.edges, directed=True, root=root,
                       labels=arc_labels)
