import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import all_spanning_trees, max_arborescence_weight, max_spanning_tree_weight
from subparse.attention import AttentionMatrix
from subparse.induction import (
    AggregationSpec,
    InducedTree,
    InductionError,
    ScoreMatrix,
    aggregate,
    choose_pseudo_root,
    chu_liu_edmonds,
    collapse_heads,
    induce,
    orient_from_root,
    prim_mst,
    render_bracket,
    tree_to_conllu,
)


def symmetric_scores(values):
    values = np.asarray(values, dtype=float)
    return ScoreMatrix(values=values, symmetric=True)


def random_symmetric(rng, n, integers=False):
    if integers:
        raw = rng.integers(0, 50, size=(n, n)).astype(float)
    else:
        raw = rng.random((n, n))
    sym = np.triu(raw, 1)
    sym = sym + sym.T
    return sym


def tree_weight(scores, edges):
    # single shared weight evaluation: canonical edge order, one np.sum
    idx = [i * scores.shape[0] + j for i, j in sorted(edges)]
    return scores.flat[np.array(idx, dtype=int)].sum() if idx else 0.0


# -- prim_mst ---------------------------------------------------------------------


def test_two_nodes_single_edge():
    tree = prim_mst(symmetric_scores([[0.0, 0.4], [0.4, 0.0]]))
    assert tree.edges == ((0, 1),)


def test_single_node_empty():
    tree = prim_mst(symmetric_scores([[0.0]]))
    assert tree.edges == ()


def test_chain_favoring_matrix_gives_chain():
    n = 5
    values = np.full((n, n), 0.01)
    for i in range(n - 1):
        values[i, i + 1] = values[i + 1, i] = 1.0
    np.fill_diagonal(values, 0.0)
    scores = symmetric_scores(values)
    tree = prim_mst(scores)
    chain = tuple((i, i + 1) for i in range(n - 1))
    assert tree.edges == chain
    # brute force confirms the chain is optimal
    assert tree_weight(values, tree.edges) == max_spanning_tree_weight(values)


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_prim_matches_brute_force(n):
    rng = np.random.default_rng(100 + n)
    trees = all_spanning_trees(n)
    for trial in range(60):
        # integer scores make weight comparisons exact and force tie handling
        values = random_symmetric(rng, n, integers=(trial % 2 == 0))
        tree = prim_mst(symmetric_scores(values))
        best = max(tree_weight(values, edges) for edges in trees)
        assert tree_weight(values, tree.edges) == best


def test_prim_deterministic_tie_break():
    # all off-diagonal weights equal: smallest (min, max) pairs must win
    values = np.ones((4, 4)) - np.eye(4)
    tree = prim_mst(symmetric_scores(values))
    assert tree.edges == ((0, 1), (0, 2), (0, 3))


def test_score_matrix_rejects_non_finite():
    values = np.zeros((2, 2))
    values[0, 1] = values[1, 0] = np.nan
    with pytest.raises(InductionError):
        ScoreMatrix(values=values, symmetric=True)


@given(st.integers(2, 6), st.integers(0, 10_000),
       st.floats(0.1, 50.0, allow_nan=False))
@settings(max_examples=60, deadline=None)
def test_prim_scale_invariance(n, seed, scale):
    values = random_symmetric(np.random.default_rng(seed), n)
    base = prim_mst(symmetric_scores(values))
    scaled = prim_mst(symmetric_scores(values * scale))
    assert base.edges == scaled.edges


# -- chu_liu_edmonds ---------------------------------------------------------------


def test_cle_two_nodes():
    scores = np.array([[0.0, 0.9], [0.3, 0.0]])
    tree = chu_liu_edmonds(scores, root=0)
    assert tree.edges == ((0, 1),)
    tree = chu_liu_edmonds(scores, root=1)
    assert tree.edges == ((1, 0),)


def test_cle_single_node():
    tree = chu_liu_edmonds(np.zeros((1, 1)), root=0)
    assert tree.edges == ()


def test_cle_breaks_dominant_cycle():
    # 1 and 2 prefer each other strongly; optimal solution must break the
    # cycle and hang it off the root
    scores = np.array([
        [0.0, 5.0, 4.9, 1.0],
        [0.0, 0.0, 9.0, 1.0],
        [0.0, 9.0, 0.0, 8.0],
        [0.0, 1.0, 1.0, 0.0],
    ])
    tree = chu_liu_edmonds(scores, root=0)
    weight = sum(scores[h, d] for h, d in tree.edges)
    assert weight == max_arborescence_weight(scores, 0)


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_cle_matches_brute_force(n):
    rng = np.random.default_rng(200 + n)
    for trial in range(40 if n < 6 else 12):
        if trial % 2 == 0:
            scores = rng.integers(0, 50, size=(n, n)).astype(float)
        else:
            scores = rng.random((n, n))
        np.fill_diagonal(scores, 0.0)
        root = int(rng.integers(0, n))
        tree = chu_liu_edmonds(scores, root)
        assert tree.root == root
        weight = tree_weight(scores, tree.edges)
        assert weight == pytest.approx(max_arborescence_weight(scores, root),
                                       abs=1e-9)


def test_cle_cross_checked_against_networkx():
    nx = pytest.importorskip("networkx")
    rng = np.random.default_rng(999)
    for trial in range(60):
        n = int(rng.integers(2, 13))
        if trial % 2:
            scores = rng.random((n, n))
        else:
            scores = rng.integers(0, 30, size=(n, n)).astype(float)
        np.fill_diagonal(scores, 0.0)
        root = int(rng.integers(0, n))
        tree = chu_liu_edmonds(scores, root)
        mine = sum(scores[h, d] for h, d in tree.edges)
        graph = nx.DiGraph()
        graph.add_nodes_from(range(n))
        for h in range(n):
            for d in range(n):
                if h != d and d != root:
                    graph.add_edge(h, d, weight=scores[h, d])
        arb = nx.algorithms.tree.branchings.maximum_spanning_arborescence(
            graph, attr="weight")
        theirs = sum(scores[h, d] for h, d in arb.edges())
        assert mine == pytest.approx(theirs, abs=1e-9)


def test_prim_cross_checked_against_networkx():
    nx = pytest.importorskip("networkx")
    rng = np.random.default_rng(555)
    for _ in range(60):
        n = int(rng.integers(2, 20))
        values = random_symmetric(rng, n)
        tree = prim_mst(symmetric_scores(values))
        mine = sum(values[i, j] for i, j in tree.edges)
        graph = nx.Graph()
        graph.add_nodes_from(range(n))
        for i in range(n):
            for j in range(i + 1, n):
                graph.add_edge(i, j, weight=values[i, j])
        best = nx.maximum_spanning_tree(graph, weight="weight")
        theirs = sum(values[i, j] for i, j in best.edges())
        assert mine == pytest.approx(theirs, abs=1e-9)


def test_cle_output_is_arborescence():
    rng = np.random.default_rng(33)
    for _ in range(50):
        n = int(rng.integers(2, 9))
        scores = rng.random((n, n))
        tree = chu_liu_edmonds(scores, root=0)
        assert len(tree.edges) == n - 1  # construction validates the rest


# -- aggregate ----------------------------------------------------------------------


def attn(values, layer=0, head=0):
    return AttentionMatrix(values=np.asarray(values, dtype=float), layer=layer,
                           head=head, row_stochastic=False)


SPEC = AggregationSpec(layer=0)


def test_aggregate_target_only_is_symmetrized_target():
    target = attn([[0.0, 0.6, 0.4], [0.3, 0.0, 0.7], [0.5, 0.5, 0.0]])
    scores = aggregate(target, [], SPEC)
    expected = (target.values + target.values.T) / 2
    np.fill_diagonal(expected, 0.0)
    np.testing.assert_allclose(scores.values, expected, atol=1e-15)


def test_aggregate_identical_matrices_identity():
    m = attn([[0.0, 0.5], [0.5, 0.0]])
    scores = aggregate(m, [m, m, m], SPEC)
    np.testing.assert_allclose(scores.values, m.values)


def test_aggregate_two_matrices_hand_computed():
    a = attn([[0.0, 0.6, 0.4], [0.3, 0.0, 0.7], [0.5, 0.5, 0.0]])
    b = attn([[0.0, 0.2, 0.8], [0.9, 0.0, 0.1], [0.4, 0.6, 0.0]])
    scores = aggregate(a, [b], SPEC)
    # mean = [[0, .4, .6], [.6, 0, .4], [.45, .55, 0]]; then (M + M^T) / 2
    expected = np.array([
        [0.0, 0.5, 0.525],
        [0.5, 0.0, 0.475],
        [0.525, 0.475, 0.0],
    ])
    np.testing.assert_allclose(scores.values, expected, atol=1e-15)


def test_aggregate_empty_error():
    with pytest.raises(InductionError, match="nothing to aggregate"):
        aggregate(None, [], SPEC)


def test_aggregate_exclude_target():
    spec = AggregationSpec(layer=0, include_target=False)
    a = attn([[0.0, 1.0], [1.0, 0.0]])
    b = attn([[0.0, 0.4], [0.2, 0.0]])
    scores = aggregate(a, [b], spec)
    np.testing.assert_allclose(scores.values, [[0.0, 0.3], [0.3, 0.0]])


def test_collapse_heads_single():
    mats = [attn([[0.0, 1.0], [1.0, 0.0]], head=0),
            attn([[0.0, 0.5], [0.5, 0.0]], head=1)]
    spec = AggregationSpec(layer=0, head_mode="single_head", head=1)
    np.testing.assert_array_equal(collapse_heads(mats, spec).values,
                                  mats[1].values)


def test_induce_sets_pseudo_root():
    target = attn([[0.0, 0.9, 0.1], [0.9, 0.0, 0.1], [0.1, 0.1, 0.0]])
    tree, scores = induce(target, [], SPEC)
    assert tree.root == choose_pseudo_root(scores)
    assert len(tree.edges) == 2


# -- tree containers and serialization ------------------------------------------------


def test_induced_tree_validation():
    with pytest.raises(InductionError):
        InducedTree(n=3, edges=((0, 1),))  # too few edges
    with pytest.raises(InductionError):
        InducedTree(n=3, edges=((0, 1), (0, 1)))  # duplicate edge
    with pytest.raises(InductionError):
        InducedTree(n=4, edges=((0, 1), (2, 3), (0, 1)))  # disconnected + dup


def test_directed_tree_validation():
    InducedTree(n=3, edges=((0, 1), (1, 2)), directed=True, root=0)
    with pytest.raises(InductionError):
        InducedTree(n=3, edges=((1, 2), (2, 1)), directed=True, root=0)


def test_orient_from_root():
    tree = InducedTree(n=4, edges=((0, 1), (1, 2), (1, 3)))
    arcs = orient_from_root(tree, root=1)
    assert dict((d, h) for h, d in arcs) == {0: 1, 2: 1, 3: 1}


def test_tree_to_conllu_undirected():
    tree = InducedTree(n=3, edges=((0, 1), (1, 2)), root=1)
    block = tree_to_conllu(tree, ["a", "b", "c"], ["X", "Y", "Z"], sent_id="t1")
    lines = [l for l in block.strip().split("\n") if not l.startswith("#")]
    heads = [line.split("\t")[6] for line in lines]
    assert heads == ["2", "0", "2"]
    assert "# sent_id = t1" in block


def test_tree_to_conllu_directed_labels():
    tree = InducedTree(n=3, edges=((1, 0), (1, 2)), directed=True, root=1,
                       labels=("det", "obj"))
    block = tree_to_conllu(tree, ["a", "b", "c"])
    rows = [line.split("\t") for line in block.strip().split("\n")]
    assert rows[0][7] == "det" and rows[2][7] == "obj"
    assert rows[1][6] == "0" and rows[1][7] == "root"


def test_render_bracket():
    tree = InducedTree(n=4, edges=((0, 1), (1, 2), (1, 3)), root=1)
    assert render_bracket(tree, ["a", "b", "c", "d"]) == "(b a c d)"


def test_render_bracket_nested():
    tree = InducedTree(n=4, edges=((0, 1), (1, 2), (2, 3)), root=0)
    assert render_bracket(tree, ["a", "b", "c", "d"]) == "(a (b (c d)))"
