"""Word-level attention matrices: reduction from subwords, averaging, symmetrization.

Backends return subword-level attention.  ``reduce_to_words`` converts it to
word level: attention *to* a word sums the columns of its subwords, attention
*from* a word averages its subword rows (``from_word_mode="sum"`` adds them
instead), special-token mass is dropped, and every row is renormalized to
sum to 1.  All in-memory math is float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .provider import ModelResponse, ProtocolError

ROW_SUM_TOL = 1e-4


class AlignmentError(Exception):
    """Subword-to-word alignment does not cover every word."""


@dataclass(frozen=True)
class AttentionMatrix:
    """Square word-level attention for one (layer, head); ``head=None`` means
    averaged over heads."""

    values: np.ndarray
    layer: int
    head: int | None
    row_stochastic: bool

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError(f"attention matrix must be square, got {values.shape}")
        if not np.isfinite(values).all():
            raise ValueError("attention matrix contains non-finite entries")
        if (values < 0).any():
            raise ValueError("attention matrix contains negative entries")
        if self.row_stochastic:
            deviation = np.abs(values.sum(axis=1) - 1.0).max()
            if deviation > ROW_SUM_TOL:
                raise ValueError(f"row sums deviate from 1 by {deviation:.2e}")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]


def reduce_to_words(resp: ModelResponse, from_word_mode: str = "mean",
                    ) -> dict[int, list[AttentionMatrix]]:
    """Reduce an attention response to word-level matrices, one list per layer.

    Raises :class:`AlignmentError` when some word has no subword.
    """
    if resp.attention is None or resp.word_ids is None:
        raise ProtocolError("response carries no attention payload")
    if from_word_mode not in ("mean", "sum"):
        raise ValueError(f"unknown from_word_mode {from_word_mode!r}")

    word_ids = resp.word_ids
    t = len(word_ids)
    real = [w for w in word_ids if w is not None]
    if not real:
        raise AlignmentError("no non-special subwords in response")
    n = max(real) + 1
    counts = np.zeros(n, dtype=float)
    onto = np.zeros((t, n), dtype=float)  # column grouping: subword -> word
    for sub, word in enumerate(word_ids):
        if word is None:
            continue
        if word < 0:
            raise AlignmentError(f"negative word id {word}")
        onto[sub, word] = 1.0
        counts[word] += 1
    if (counts == 0).any():
        missing = int(np.nonzero(counts == 0)[0][0])
        raise AlignmentError(f"word {missing} has no subwords")

    weights = onto.T.copy()  # row grouping: word <- subwords
    if from_word_mode == "mean":
        weights /= counts[:, None]

    out: dict[int, list[AttentionMatrix]] = {}
    for layer, tensor in resp.attention.items():
        tensor = np.asarray(tensor, dtype=float)
        mats = []
        for head in range(tensor.shape[0]):
            collapsed = weights @ tensor[head] @ onto
            sums = collapsed.sum(axis=1)
            starved = sums <= 0  # all mass went to special tokens
            sums[starved] = 1.0
            collapsed = collapsed / sums[:, None]
            collapsed[starved] = 1.0 / n
            mats.append(AttentionMatrix(values=collapsed, layer=layer, head=head,
                                        row_stochastic=True))
        out[layer] = mats
    return out


def layer_average(mats: list[AttentionMatrix]) -> AttentionMatrix:
    """Element-wise mean over the heads of one layer."""
    if not mats:
        raise ValueError("cannot average zero matrices")
    layer = mats[0].layer
    n = mats[0].n
    for m in mats:
        if m.layer != layer:
            raise ValueError("matrices belong to different layers")
        if m.n != n:
            raise ValueError("matrix dimensions differ")
    mean = np.mean([m.values for m in mats], axis=0)
    return AttentionMatrix(values=mean, layer=layer, head=None,
                           row_stochastic=all(m.row_stochastic for m in mats))


def symmetrize(matrix: AttentionMatrix, mode: str = "avg") -> AttentionMatrix:
    """Make pairwise scores direction-free; zeroes the diagonal.

    ``avg``: (M + M^T) / 2.  ``max``: element-wise max(M, M^T).
    """
    values = matrix.values
    if mode == "avg":
        sym = (values + values.T) / 2.0
    elif mode == "max":
        sym = np.maximum(values, values.T)
    else:
        raise ValueError(f"unknown symmetrization mode {mode!r}")
    sym = sym.copy()
    np.fill_diagonal(sym, 0.0)
    return AttentionMatrix(values=sym, layer=matrix.layer, head=matrix.head,
                           row_stochastic=False)
