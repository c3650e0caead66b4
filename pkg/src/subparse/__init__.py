"""Dependency tree induction from transformer attention with substitution ensembles."""

from .attention import AttentionMatrix, layer_average, reduce_to_words, symmetrize
from .corpus import (
    CorpusFilter,
    GoldTree,
    Sentence,
    Token,
    filter_corpus,
    parse_conllu,
)
from .induction import (
    AggregationSpec,
    InducedTree,
    ScoreMatrix,
    aggregate,
    chu_liu_edmonds,
    induce,
    prim_mst,
)

__version__ = "0.1.0"

__all__ = [
    "AggregationSpec",
    "AttentionMatrix",
    "CorpusFilter",
    "GoldTree",
    "InducedTree",
    "ScoreMatrix",
    "Sentence",
    "Token",
    "aggregate",
    "chu_liu_edmonds",
    "filter_corpus",
    "induce",
    "layer_average",
    "parse_conllu",
    "prim_mst",
    "reduce_to_words",
    "symmetrize",
    "__version__",
]
