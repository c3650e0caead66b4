"""CoNLL-U corpora: parsing, filtering, and gold dependency trees.

A corpus is a list of :class:`Sentence` objects.  Each sentence carries its
words, UPOS tags, and (when the input provides them) a gold dependency tree.
Multiword-token ranges and empty nodes are skipped and never counted as
words.  Token indices are re-based to 0; a head of 0 in the file becomes the
``ROOT`` marker.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass

ROOT = -1  # gold_head value marking the root word

PUNCT = "PUNCT"

_N_COLUMNS = 10


class CorpusError(Exception):
    """Malformed treebank input; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class Token:
    """One word of a sentence, 0-indexed."""

    index: int
    form: str
    upos: str
    gold_head: int | None = None  # 0-based head, ROOT, or None when no gold
    gold_deprel: str | None = None

    @property
    def is_punct(self) -> bool:
        return self.upos == PUNCT


@dataclass(frozen=True)
class GoldTree:
    """Gold word-to-word arcs: (head, dependent, label), excluding the root arc.

    A well-formed tree over ``n`` words has exactly ``n - 1`` such arcs plus
    one root word (whose incoming arc from the virtual root is represented
    by ``root``, not by an edge).
    """

    edges: frozenset[tuple[int, int, str]]
    root: int
    scheme: str = "UD"

    def unordered_pairs(self) -> set[frozenset[int]]:
        return {frozenset((h, d)) for h, d, _ in self.edges}


@dataclass
class Sentence:
    tokens: list[Token]
    gold: GoldTree | None = None
    sent_id: str = ""
    usable: bool = True  # False when the gold arcs are not a valid tree

    @property
    def n(self) -> int:
        return len(self.tokens)

    @property
    def words(self) -> tuple[str, ...]:
        return tuple(t.form for t in self.tokens)

    @property
    def upos(self) -> tuple[str, ...]:
        return tuple(t.upos for t in self.tokens)

    def word_count(self, count_punct: bool = True) -> int:
        if count_punct:
            return len(self.tokens)
        return sum(1 for t in self.tokens if not t.is_punct)


@dataclass(frozen=True)
class CorpusFilter:
    """Length filter; ``max_length=None`` keeps everything."""

    max_length: int | None = None
    count_punct_in_length: bool = True

    def __post_init__(self):
        if self.max_length is not None and self.max_length < 1:
            raise ValueError("max_length must be >= 1")

    def keeps(self, sentence: Sentence) -> bool:
        if self.max_length is None:
            return True
        return sentence.word_count(self.count_punct_in_length) <= self.max_length


def _is_int(text: str) -> bool:
    try:
        int(text)
    except ValueError:
        return False
    return True


def _build_gold(tokens: list[Token], heads: list[int], deprels: list[str],
                scheme: str, sent_id: str) -> tuple[GoldTree | None, bool]:
    """Assemble the gold tree; flag the sentence unusable when arcs are not a tree."""
    roots = [i for i, h in enumerate(heads) if h == ROOT]
    n = len(tokens)
    if len(roots) != 1:
        warnings.warn(f"sentence {sent_id!r}: {len(roots)} root arcs, flagged unusable")
        return None, False
    root = roots[0]
    children: dict[int, list[int]] = {}
    for dep, head in enumerate(heads):
        if head != ROOT:
            children.setdefault(head, []).append(dep)
    seen = {root}
    stack = [root]
    while stack:
        node = stack.pop()
        for child in children.get(node, ()):
            seen.add(child)
            stack.append(child)
    if len(seen) != n:  # unreachable words sit on a cycle
        warnings.warn(f"sentence {sent_id!r}: cycle in gold arcs, flagged unusable")
        return None, False
    edges = frozenset(
        (heads[dep], dep, deprels[dep]) for dep in range(n) if heads[dep] != ROOT
    )
    return GoldTree(edges=edges, root=root, scheme=scheme), True


def parse_conllu(source, scheme: str = "UD") -> list[Sentence]:
    """Parse CoNLL-U text into sentences.

    ``source`` may be a str, bytes, or a text file object.  Raises
    :class:`CorpusError` for malformed token lines or non-integer heads;
    sentences whose gold arcs do not form a tree are kept but flagged
    ``usable=False`` (a warning is emitted).
    """
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if isinstance(source, str):
        source = io.StringIO(source)

    sentences: list[Sentence] = []
    rows: list[tuple[str, str, int, str]] = []  # form, upos, head(1-based), deprel
    sent_id = ""

    def flush(line_no: int):
        nonlocal rows, sent_id
        if not rows:
            return
        tokens = []
        heads = []
        deprels = []
        n = len(rows)
        for i, (form, upos, head1, deprel) in enumerate(rows):
            if head1 < 0 or head1 > n:
                raise CorpusError(f"head {head1} out of range for {n}-word sentence",
                                  line_no)
            head = ROOT if head1 == 0 else head1 - 1
            tokens.append(Token(index=i, form=form, upos=upos,
                                gold_head=head, gold_deprel=deprel))
            heads.append(head)
            deprels.append(deprel)
        this_id = sent_id or f"s{len(sentences) + 1}"
        gold, usable = _build_gold(tokens, heads, deprels, scheme, this_id)
        sentences.append(Sentence(tokens=tokens, gold=gold, sent_id=this_id,
                                  usable=usable))
        rows = []
        sent_id = ""

    expected_index = 1
    line_no = 0
    for line_no, raw in enumerate(source, start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            flush(line_no)
            expected_index = 1
            continue
        if line.startswith("#"):
            if line[1:].split("=", 1)[0].strip() == "sent_id" and "=" in line:
                sent_id = line.split("=", 1)[1].strip()
            continue
        cols = line.split("\t")
        if len(cols) != _N_COLUMNS:
            raise CorpusError(f"expected {_N_COLUMNS} tab-separated columns, "
                              f"got {len(cols)}", line_no)
        tok_id = cols[0]
        if "-" in tok_id or "." in tok_id:
            continue  # multiword range or empty node
        if not _is_int(tok_id):
            raise CorpusError(f"non-integer token id {tok_id!r}", line_no)
        if int(tok_id) != expected_index:
            raise CorpusError(f"token id {tok_id} not contiguous "
                              f"(expected {expected_index})", line_no)
        expected_index += 1
        if not _is_int(cols[6]):
            raise CorpusError(f"non-integer head {cols[6]!r}", line_no)
        rows.append((cols[1], cols[3], int(cols[6]), cols[7]))
    flush(line_no)
    return sentences


def serialize_conllu(sentences: list[Sentence]) -> str:
    """Write sentences back to CoNLL-U, retaining FORM/UPOS/HEAD/DEPREL only."""
    blocks = []
    for sent in sentences:
        lines = []
        if sent.sent_id:
            lines.append(f"# sent_id = {sent.sent_id}")
        for tok in sent.tokens:
            if tok.gold_head is None:
                head = "_"
            elif tok.gold_head == ROOT:
                head = "0"
            else:
                head = str(tok.gold_head + 1)
            deprel = tok.gold_deprel if tok.gold_deprel is not None else "_"
            lines.append("\t".join([
                str(tok.index + 1), tok.form, "_", tok.upos, "_", "_",
                head, deprel, "_", "_",
            ]))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + ("\n" if blocks else "")


def filter_corpus(corpus: list[Sentence], corpus_filter: CorpusFilter) -> list[Sentence]:
    return [s for s in corpus if corpus_filter.keeps(s)]


def load_conllu_file(path, scheme: str = "UD") -> list[Sentence]:
    with open(path, encoding="utf-8") as handle:
        return parse_conllu(handle, scheme=scheme)


def align_schemes(primary: list[Sentence], other: list[Sentence]) -> None:
    """Assert two annotation variants cover the same sentences in the same order."""
    if len(primary) != len(other):
        raise CorpusError(
            f"annotation files differ in sentence count: {len(primary)} vs {len(other)}")
    for i, (a, b) in enumerate(zip(primary, other)):
        if a.words != b.words:
            raise CorpusError(f"sentence {i}: token forms differ between annotation files")


def base_label(deprel: str) -> str:
    """Relation label without the subtype (``nsubj:pass`` -> ``nsubj``)."""
    return deprel.split(":", 1)[0]
