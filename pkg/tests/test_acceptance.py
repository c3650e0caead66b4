"""Acceptance suite: one test per release criterion, tolerances pinned.

Each test prints a single PASS line (visible with ``pytest -s``); the
model-backed reproduction criteria need a live sidecar plus treebank files
and are skipped unless the SUBPARSE_E2E environment variables are set.

Run:  pytest tests/test_acceptance.py -v -s
"""

import io
import json
import os
import struct
import time
from functools import lru_cache

import numpy as np
import pytest
import yaml

from oracles import all_arborescences, all_spanning_trees
from subparse.archive import ArchiveError, ArchiveRecord, read_archive, write_archive
from subparse.attention import AttentionMatrix, reduce_to_words, symmetrize
from subparse.cli import EXIT_OK, main
from subparse.corpus import load_conllu_file
from subparse.evaluation import EvalConfig, corpus_uuas, uuas
from subparse.induction import InducedTree, ScoreMatrix, chu_liu_edmonds, prim_mst
from subparse.provider import ModelResponse

DATA = os.path.join(os.path.dirname(__file__), "data")


def _flat_indices(edges, n):
    return np.array(sorted(i * n + j for i, j in edges), dtype=np.int64)


@lru_cache(maxsize=None)
def _tree_index_matrix(n: int) -> np.ndarray:
    """All spanning trees of K_n as a (T, n-1) matrix of flat score indices."""
    trees = all_spanning_trees(n)
    return np.stack([_flat_indices(edges, n) for edges in trees])


@lru_cache(maxsize=None)
def _arborescence_index_matrix(n: int, root: int) -> np.ndarray:
    rows = []
    for parent in all_arborescences(n, root):
        edges = [(head, dep) for dep, head in parent.items()]
        rows.append(_flat_indices(edges, n))
    return np.stack(rows)


def _random_square(rng, n, trial):
    if trial % 4 == 0:  # integer weights force exact ties
        values = rng.integers(0, 40, size=(n, n)).astype(float)
    else:
        values = rng.random((n, n))
    return values


def test_mst_oracle_equivalence():
    """prim_mst matches brute force on 1000 random symmetric matrices for
    each n in 2..6, weights exactly equal, under 10 seconds."""
    start = time.monotonic()
    rng = np.random.default_rng(20_240_501)
    for n in range(2, 7):
        index_matrix = _tree_index_matrix(n)
        for trial in range(1000):
            raw = _random_square(rng, n, trial)
            values = np.triu(raw, 1)
            values = values + values.T
            scores = ScoreMatrix(values=values, symmetric=True)
            tree = prim_mst(scores)
            oracle_best = values.flat[index_matrix].sum(axis=1).max()
            prim_weight = values.flat[_flat_indices(tree.edges, n)].sum()
            assert prim_weight == oracle_best, (n, trial)
    elapsed = time.monotonic() - start
    assert elapsed < 10.0, f"MST oracle sweep took {elapsed:.1f}s"
    print(f"\nACCEPTANCE PASS: MST oracle equivalence (5000 matrices, "
          f"{elapsed:.1f}s)")


def test_arborescence_oracle_equivalence():
    """chu_liu_edmonds matches exhaustive search on 500 random matrices for
    each n in 2..5, exact, under 30 seconds."""
    start = time.monotonic()
    rng = np.random.default_rng(77)
    for n in range(2, 6):
        for trial in range(500):
            scores = _random_square(rng, n, trial)
            np.fill_diagonal(scores, 0.0)
            root = trial % n
            index_matrix = _arborescence_index_matrix(n, root)
            tree = chu_liu_edmonds(scores, root)
            oracle_best = scores.flat[index_matrix].sum(axis=1).max()
            cle_weight = scores.flat[_flat_indices(tree.edges, n)].sum()
            assert cle_weight == oracle_best, (n, trial)
    elapsed = time.monotonic() - start
    assert elapsed < 30.0, f"arborescence oracle sweep took {elapsed:.1f}s"
    print(f"\nACCEPTANCE PASS: arborescence oracle equivalence (2000 matrices, "
          f"{elapsed:.1f}s)")


def test_row_stochastic_reduction():
    """reduce_to_words rows sum to 1 within 1e-6 on 10,000 generated tensors
    including split-word and special-token cases."""
    rng = np.random.default_rng(5)
    worst = 0.0
    for case in range(10_000):
        n_words = int(rng.integers(1, 7))
        word_ids = [None] if case % 2 else []
        for word in range(n_words):
            word_ids.extend([word] * int(rng.integers(1, 4)))
        if case % 2:
            word_ids.append(None)
        t = len(word_ids)
        raw = rng.random((t, t)) + 1e-4
        tensor = raw / raw.sum(axis=1, keepdims=True)
        resp = ModelResponse(id=1, subword_forms=[""] * t, word_ids=word_ids,
                             attention={0: tensor[None]})
        out = reduce_to_words(resp)[0][0]
        worst = max(worst, float(np.abs(out.values.sum(axis=1) - 1.0).max()))
    assert worst <= 1e-6
    print(f"\nACCEPTANCE PASS: row-stochastic reduction (10000 tensors, "
          f"max deviation {worst:.2e})")


def test_symmetrize_properties():
    """Idempotence and mean/symmetrize commutation within 1e-12."""
    rng = np.random.default_rng(9)
    worst_idem = worst_comm = 0.0
    for _ in range(500):
        n = int(rng.integers(2, 9))
        mats = [rng.random((n, n)) for _ in range(int(rng.integers(2, 7)))]
        for mode in ("avg", "max"):
            m = AttentionMatrix(values=mats[0], layer=0, head=0,
                                row_stochastic=False)
            once = symmetrize(m, mode)
            twice = symmetrize(once, mode)
            worst_idem = max(worst_idem,
                             float(np.abs(twice.values - once.values).max()))
        wrap = [AttentionMatrix(values=v, layer=0, head=0, row_stochastic=False)
                for v in mats]
        mean_then = symmetrize(
            AttentionMatrix(values=np.mean(mats, axis=0), layer=0, head=0,
                            row_stochastic=False), "avg").values
        then_mean = np.mean([symmetrize(m, "avg").values for m in wrap], axis=0)
        worst_comm = max(worst_comm, float(np.abs(mean_then - then_mean).max()))
    assert worst_idem <= 1e-12
    assert worst_comm <= 1e-12
    print(f"\nACCEPTANCE PASS: symmetrize idempotence ({worst_idem:.2e}) and "
          f"mean commutation ({worst_comm:.2e})")


def _walk_records(data: bytes, n_layers: int, heads: int):
    pos = 6
    (header_len,) = struct.unpack_from("<I", data, pos)
    pos += 4 + header_len
    while pos < len(data):
        (rec_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        rec = json.loads(data[pos:pos + rec_len])
        pos += rec_len
        payload = n_layers * heads * rec["n"] * rec["n"] * 4
        yield pos, payload
        pos += payload + 4


def test_archive_round_trip_and_corruption():
    """Bitwise-exact tensor round trip; a flipped byte in any record is
    detected and attributed to that record."""
    rng = np.random.default_rng(13)
    records = []
    for i in range(12):
        n = int(rng.integers(2, 8))
        raw = rng.random((2, 3, n, n)).astype(np.float32) + 0.01
        tensor = raw / raw.sum(axis=-1, keepdims=True)
        records.append(ArchiveRecord(words=tuple(f"w{j}" for j in range(n)),
                                     tensor=tensor, meta={"i": i}))
    buf = io.BytesIO()
    write_archive(buf, model="m", layers=[0, 5], heads=3, records=records)
    data = buf.getvalue()
    _, loaded = read_archive(data)
    for original, reloaded in zip(records, loaded):
        assert reloaded.tensor.tobytes() == original.tensor.astype("<f4").tobytes()

    detected = 0
    for index, (start, length) in enumerate(_walk_records(data, 2, 3)):
        corrupt = bytearray(data)
        corrupt[start + length // 2] ^= 0x40
        with pytest.raises(ArchiveError, match=f"record {index}"):
            read_archive(bytes(corrupt))
        detected += 1
    assert detected == len(records)
    print(f"\nACCEPTANCE PASS: archive round trip bit-exact, corruption "
          f"detected in {detected}/{detected} records")


def _pipeline_config(base, out_dir, cache_dir):
    return {
        "provider": {"kind": "fixture", "seed": 11, "layers": 3, "heads": 2},
        "corpus": {"ud": os.path.join(DATA, "fixture_ud.conllu"),
                   "sud": os.path.join(DATA, "fixture_sud.conllu")},
        "layers": [2],
        "k_values": [0, 2],
        "paths": {"output_dir": str(out_dir), "cache_dir": str(cache_dir)},
        "workers": 2,
    }


def test_end_to_end_determinism(tmp_path):
    """substitute -> extract -> induce -> eval twice on the 20-sentence
    fixture corpus: byte-identical outputs."""
    outputs = []
    for run_name in ("one", "two"):
        base = tmp_path / run_name
        os.makedirs(base)
        config_path = base / "exp.yaml"
        config_path.write_text(yaml.safe_dump(
            _pipeline_config(base, base / "out", base / "cache")))
        for command in ("substitute", "extract", "induce", "eval"):
            assert main([command, "-c", str(config_path)]) == EXIT_OK
        outputs.append(base / "out")
    first, second = outputs
    names = sorted(p.name for p in first.iterdir())
    assert names == sorted(p.name for p in second.iterdir())
    for name in names:
        assert (first / name).read_bytes() == (second / name).read_bytes(), name
    print(f"\nACCEPTANCE PASS: end-to-end determinism ({len(names)} "
          f"byte-identical outputs)")


def test_uuas_metric_properties():
    """uuas(t, t) = 1, disjoint trees score 0, micro-average verified by an
    independent recount."""
    cfg = EvalConfig()
    sentences = load_conllu_file(os.path.join(DATA, "fixture_ud.conllu"))
    # self-score = 1 on every fixture gold tree
    for sent in sentences:
        edges = tuple(sorted((min(h, d), max(h, d))
                             for h, d, _ in sent.gold.edges))
        tree = InducedTree(n=sent.n, edges=edges)
        matched, total = uuas(tree, sent, cfg)
        assert matched == total
    # disjoint trees score 0 (verified disjointness)
    sent = sentences[1]  # "a dog chased the ball ." with gold pairs
    gold_pairs = {frozenset((h, d)) for h, d, _ in sent.gold.edges}
    disjoint = InducedTree(n=6, edges=((0, 2), (0, 3), (0, 4), (0, 5), (1, 3)))
    assert not disjoint.unordered_pairs() & gold_pairs
    assert uuas(disjoint, sent, cfg)[0] == 0
    # micro-average identity on randomized predictions
    pairs = []
    for sent in sentences:
        chain = InducedTree(n=sent.n,
                            edges=tuple((i, i + 1) for i in range(sent.n - 1)))
        pairs.append((chain, sent))
    summary = corpus_uuas(pairs, cfg)
    recount_matched = sum(uuas(t, s, cfg)[0] for t, s in pairs)
    recount_total = sum(uuas(t, s, cfg)[1] for t, s in pairs)
    assert summary["matched"] == recount_matched
    assert summary["total"] == recount_total
    assert summary["uuas"] == recount_matched / recount_total
    print("\nACCEPTANCE PASS: UUAS metric properties (self=1, disjoint=0, "
          "micro recount exact)")


# -- model-backed reproduction criteria (opt in; need sidecar + treebanks) -----

_E2E_VARS = ("SUBPARSE_SIDECAR", "SUBPARSE_ENPUD_UD")
_e2e_ready = all(os.environ.get(v) for v in _E2E_VARS)
needs_model = pytest.mark.skipif(
    not _e2e_ready,
    reason="model-backed reproduction: set SUBPARSE_SIDECAR (launch command) "
           "and SUBPARSE_ENPUD_UD / SUBPARSE_ENPUD_SUD / SUBPARSE_SELECTION "
           "(treebank paths); expect 1-3h on a desktop CPU")


def _model_config(tmp_path, **extra):
    config = {
        "provider": {"kind": "sidecar",
                     "command": os.environ["SUBPARSE_SIDECAR"]},
        "corpus": {"ud": os.environ["SUBPARSE_ENPUD_UD"],
                   "sud": os.environ.get("SUBPARSE_ENPUD_SUD")},
        "layers": [10],
        "k_values": [0, 1, 3, 5, 10],
        "paths": {"output_dir": str(tmp_path / "out"),
                  "cache_dir": os.environ.get("SUBPARSE_CACHE_DIR",
                                              str(tmp_path / "cache"))},
    }
    config.update(extra)
    path = tmp_path / "model.yaml"
    path.write_text(yaml.safe_dump(config))
    return path


@needs_model
def test_reference_mlm_candidates():
    """The reference masked LM proposes figured/knew/think for "thought" in
    the known eight-word sample."""
    import shlex

    from subparse.provider import OP_MLM_TOPK, SidecarClient

    words = ("just", "thought", "you", "'d", "like", "to", "know", ".")
    with SidecarClient(shlex.split(os.environ["SUBPARSE_SIDECAR"])) as client:
        resp = client.request(client.new_request(OP_MLM_TOPK, words=words,
                                                 position=1, k=3))
    assert sorted(w for w, _ in resp.candidates) == ["figured", "knew", "think"]
    print("\nACCEPTANCE PASS: reference mask-fill candidates")


@needs_model
def test_reference_en_pud_sentence_count():
    """The public EN-PUD treebank parses to exactly 1000 sentences."""
    sentences = load_conllu_file(os.environ["SUBPARSE_ENPUD_UD"])
    assert len(sentences) == 1000
    print("\nACCEPTANCE PASS: EN-PUD sentence count")


@needs_model
def test_reference_en_pud_uuas(tmp_path):
    """Layer 10 on the public EN-PUD treebank: target-only 44.3 +- 1.5 UUAS,
    k=10 46.4 +- 1.5, positive gain."""
    config = _model_config(tmp_path)
    assert main(["sweep", "-c", str(config)]) == EXIT_OK
    payload = json.loads((tmp_path / "out" / "sweep.json").read_text())
    cells = {(c["layer"], c["k"]): c for c in payload["cells"]}
    target_only = cells[(10, 0)]["uuas"] * 100
    k10 = cells[(10, 10)]["uuas"] * 100
    assert target_only == pytest.approx(44.3, abs=1.5)
    assert k10 == pytest.approx(46.4, abs=1.5)
    assert k10 > target_only
    print(f"\nACCEPTANCE PASS: EN-PUD UUAS T.={target_only:.1f} k10={k10:.1f}")


@needs_model
def test_reference_sud_rescoring(tmp_path):
    """The same k=10 trees rescored against SUD: 59.0 +- 2.0, larger gain
    than under UD."""
    if not os.environ.get("SUBPARSE_ENPUD_SUD"):
        pytest.skip("SUBPARSE_ENPUD_SUD not set")
    config = _model_config(tmp_path)
    for command in ("substitute", "extract", "induce"):
        assert main([command, "-c", str(config)]) == EXIT_OK
    assert main(["eval", "-c", str(config)]) == EXIT_OK
    ud = json.loads((tmp_path / "out" / "eval.json").read_text())
    assert main(["eval", "-c", str(config), "--scheme", "SUD"]) == EXIT_OK
    sud = json.loads((tmp_path / "out" / "eval.json").read_text())

    def score(payload, k):
        return next(c["uuas"] for c in payload["cells"]
                    if c["layer"] == 10 and c["k"] == k) * 100

    assert score(sud, 10) == pytest.approx(59.0, abs=2.0)
    assert score(ud, 10) == pytest.approx(46.4, abs=1.5)
    sud_gain = score(sud, 10) - score(sud, 0)
    ud_gain = score(ud, 10) - score(ud, 0)
    assert sud_gain > ud_gain
    print(f"\nACCEPTANCE PASS: SUD rescoring {score(sud, 10):.1f} "
          f"(gain {sud_gain:.1f} vs UD {ud_gain:.1f})")


@needs_model
def test_reference_agreement_recall(tmp_path):
    """1000 generated sentences per construction: object RC 71.1->79.5 +- 4,
    subject RC 54.7->63.0 +- 4, k=10 strictly above target-only."""
    config = _model_config(tmp_path, agreement={
        "kinds": ["object_rc", "subject_rc"], "count": 1000, "seed": 13})
    assert main(["agreement", "-c", str(config)]) == EXIT_OK
    payload = json.loads((tmp_path / "out" / "agreement.json").read_text())
    rows = {(r["kind"], r["k"]): r["recall"] * 100 for r in payload["rows"]}
    expected = {("object_rc", 0): 71.1, ("object_rc", 10): 79.5,
                ("subject_rc", 0): 54.7, ("subject_rc", 10): 63.0}
    for key, value in expected.items():
        assert rows[key] == pytest.approx(value, abs=4.0)
    assert rows[("object_rc", 10)] > rows[("object_rc", 0)]
    assert rows[("subject_rc", 10)] > rows[("subject_rc", 0)]
    print("\nACCEPTANCE PASS: agreement recall within published tolerances")


@needs_model
def test_reference_head_selection(tmp_path):
    """nsubj dep-to-parent accuracy improves monotonically over k in
    {0,1,3,5} to 68.2 +- 3; UAS peaks at k=3 (54.5 +- 2), LAS 26.3 +- 3."""
    if not os.environ.get("SUBPARSE_SELECTION"):
        pytest.skip("SUBPARSE_SELECTION not set")
    config = _model_config(tmp_path, k_values=[0, 1, 3, 5], headsel={
        "selection": os.environ["SUBPARSE_SELECTION"],
        "selection_size": 1000})
    assert main(["headsel", "-c", str(config)]) == EXIT_OK
    payload = json.loads((tmp_path / "out" / "headsel.json").read_text())
    nsubj = {r["k"]: r["accuracy"] * 100 for r in payload["head_selection"]
             if r["label"] == "nsubj"}
    assert nsubj[0] < nsubj[1] < nsubj[3] < nsubj[5]
    assert nsubj[5] == pytest.approx(68.2, abs=3.0)
    trees = {r["k"]: r for r in payload["tree_induction"]}
    assert trees[3]["uas"] * 100 == pytest.approx(54.5, abs=2.0)
    assert trees[3]["las"] * 100 == pytest.approx(26.3, abs=3.0)
    print("\nACCEPTANCE PASS: head selection within published tolerances")
