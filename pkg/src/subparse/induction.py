"""Tree induction: score aggregation over substitution sets and MST decoding.

Undirected trees come from Prim's algorithm run as a *maximum* spanning tree
over a symmetric score matrix; directed trees from the Chu-Liu/Edmonds
maximum arborescence.  Aggregation is the element-wise mean of the target's
and variants' attention matrices, then symmetrization.

Tie-breaking is deterministic everywhere: among equal-weight edges Prim
prefers the lexicographically smallest ``(min(i, j), max(i, j))`` pair, and
argmax-style choices take the smallest index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import AttentionMatrix, layer_average, symmetrize

HEAD_MODE_LAYER_AVERAGE = "layer_average"
HEAD_MODE_SINGLE = "single_head"
HEAD_MODE_INVENTORY = "head_inventory"


class InductionError(Exception):
    pass


@dataclass(frozen=True)
class AggregationSpec:
    """How to turn fetched attention into one matrix per sentence."""

    layer: int
    head_mode: str = HEAD_MODE_LAYER_AVERAGE
    head: int | None = None
    include_target: bool = True
    mode: str = "mean"

    def __post_init__(self):
        if self.head_mode not in (HEAD_MODE_LAYER_AVERAGE, HEAD_MODE_SINGLE,
                                  HEAD_MODE_INVENTORY):
            raise ValueError(f"unknown head_mode {self.head_mode!r}")
        if self.head_mode == HEAD_MODE_SINGLE and self.head is None:
            raise ValueError("single_head mode needs a head index")
        if self.mode != "mean":
            raise ValueError(f"unknown aggregation mode {self.mode!r}")


@dataclass(frozen=True)
class ScoreMatrix:
    """Non-negative pairwise scores with zero diagonal."""

    values: np.ndarray
    symmetric: bool

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError(f"score matrix must be square, got {values.shape}")
        if not np.isfinite(values).all():
            raise InductionError("score matrix contains non-finite entries")
        if (values < 0).any():
            raise ValueError("score matrix contains negative entries")
        if np.abs(np.diag(values)).max(initial=0.0) != 0.0:
            raise ValueError("score matrix diagonal must be zero")
        if self.symmetric and not np.array_equal(values, values.T):
            raise ValueError("matrix marked symmetric is not")
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class InducedTree:
    """A decoded spanning tree.

    Undirected trees store canonical ``(min, max)`` pairs; directed trees
    store ``(head, dependent)`` arcs plus optional labels.  ``root`` is the
    arborescence root for directed trees and the serialization pseudo-root
    for undirected ones.
    """

    n: int
    edges: tuple[tuple[int, int], ...]
    directed: bool = False
    root: int | None = None
    labels: tuple[str, ...] | None = None  # aligned with edges

    def __post_init__(self):
        _check_tree(self.n, self.edges, self.directed, self.root)
        if self.labels is not None and len(self.labels) != len(self.edges):
            raise ValueError("labels not aligned with edges")

    def unordered_pairs(self) -> set[frozenset[int]]:
        return {frozenset(edge) for edge in self.edges}

    def head_of(self) -> dict[int, int]:
        """Dependent -> head map (directed trees only)."""
        if not self.directed:
            raise ValueError("undirected tree has no head map")
        return {d: h for h, d in self.edges}


def _check_tree(n: int, edges, directed: bool, root: int | None):
    if n < 1:
        raise ValueError("tree needs at least one node")
    if len(edges) != n - 1:
        raise InductionError(f"{len(edges)} edges for {n} nodes is not a tree")
    if n == 1:
        return
    if directed:
        if root is None:
            raise ValueError("directed tree needs a root")
        seen_dep = set()
        children: dict[int, list[int]] = {}
        for h, d in edges:
            if d == root or d in seen_dep:
                raise InductionError("not an arborescence: duplicate or root dependent")
            seen_dep.add(d)
            children.setdefault(h, []).append(d)
        reached = {root}
        stack = [root]
        while stack:
            for child in children.get(stack.pop(), ()):
                reached.add(child)
                stack.append(child)
        if len(reached) != n:
            raise InductionError("not an arborescence: unreachable nodes")
    else:
        adjacency: dict[int, list[int]] = {}
        for i, j in edges:
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise InductionError(f"bad edge ({i}, {j})")
            adjacency.setdefault(i, []).append(j)
            adjacency.setdefault(j, []).append(i)
        reached = {0}
        stack = [0]
        while stack:
            for neighbor in adjacency.get(stack.pop(), ()):
                if neighbor not in reached:
                    reached.add(neighbor)
                    stack.append(neighbor)
        if len(reached) != n:  # n-1 edges + connected implies acyclic
            raise InductionError("edges do not connect all nodes")


def collapse_heads(per_head: list[AttentionMatrix], spec: AggregationSpec,
                   ) -> AttentionMatrix:
    """Reduce one layer's per-head matrices according to ``spec.head_mode``."""
    if spec.head_mode == HEAD_MODE_LAYER_AVERAGE:
        return layer_average(per_head)
    if spec.head_mode == HEAD_MODE_SINGLE:
        if spec.head >= len(per_head):
            raise InductionError(f"head {spec.head} outside {len(per_head)} heads")
        return per_head[spec.head]
    raise InductionError("head_inventory collapse is handled by directed induction")


def aggregate(target: AttentionMatrix | None, variants: list[AttentionMatrix],
              spec: AggregationSpec, symmetrize_mode: str = "avg") -> ScoreMatrix:
    """Element-wise mean over target and variants, then symmetrized."""
    pool: list[AttentionMatrix] = []
    if spec.include_target and target is not None:
        pool.append(target)
    pool.extend(variants)
    if not pool:
        raise InductionError("nothing to aggregate: no target, no variants")
    n = pool[0].n
    for matrix in pool:
        if matrix.n != n:
            raise InductionError("matrices of different sizes in one aggregate")
    mean = np.mean([m.values for m in pool], axis=0)
    averaged = AttentionMatrix(values=mean, layer=spec.layer, head=None,
                               row_stochastic=False)
    sym = symmetrize(averaged, mode=symmetrize_mode)
    return ScoreMatrix(values=sym.values, symmetric=True)


def prim_mst(scores: ScoreMatrix) -> InducedTree:
    """Maximum spanning tree over symmetric scores (undirected, unlabeled)."""
    if not scores.symmetric:
        raise InductionError("prim_mst needs a symmetric score matrix")
    values = scores.values
    n = scores.n
    if not np.isfinite(values).all():
        raise InductionError("non-finite scores")
    if n == 1:
        return InducedTree(n=1, edges=())

    in_tree = np.zeros(n, dtype=bool)
    in_tree[0] = True
    edges: list[tuple[int, int]] = []
    for _ in range(n - 1):
        best: tuple[int, int] | None = None
        inside = np.nonzero(in_tree)[0]
        outside = np.nonzero(~in_tree)[0]
        sub = values[np.ix_(inside, outside)]
        best_weight = sub.max()
        # resolve ties toward the lexicographically smallest canonical pair
        rows, cols = np.nonzero(sub == best_weight)
        for r, c in zip(rows, cols):
            u, v = int(inside[r]), int(outside[c])
            pair = (min(u, v), max(u, v))
            if best is None or pair < best:
                best = pair
        edges.append(best)
        in_tree[best[0] if not in_tree[best[0]] else best[1]] = True
    return InducedTree(n=n, edges=tuple(sorted(edges)))


def _find_cycle(parent: np.ndarray, root: int) -> list[int] | None:
    n = len(parent)
    color = np.zeros(n, dtype=int)  # 0 unvisited, 1 on path, 2 done
    color[root] = 2
    for start in range(n):
        if color[start] != 0:
            continue
        path = []
        node = start
        while color[node] == 0:
            color[node] = 1
            path.append(node)
            node = int(parent[node])
        if color[node] == 1:  # found a new cycle; slice it out of the path
            cycle = path[path.index(node):]
            for v in path:
                color[v] = 2
            return cycle
        for v in path:
            color[v] = 2
    return None


def chu_liu_edmonds(scores: np.ndarray, root: int) -> InducedTree:
    """Maximum-weight arborescence rooted at ``root`` over ``scores[h][d]``."""
    scores = np.asarray(scores, dtype=float)
    n = scores.shape[0]
    if scores.shape != (n, n):
        raise InductionError(f"square matrix required, got {scores.shape}")
    if not np.isfinite(scores).all():
        raise InductionError("non-finite scores")
    if not 0 <= root < n:
        raise InductionError(f"root {root} out of range")
    arcs = _cle(scores, root)
    return InducedTree(n=n, edges=tuple(arcs), directed=True, root=root)


def _cle(scores: np.ndarray, root: int) -> list[tuple[int, int]]:
    n = scores.shape[0]
    if n == 1:
        return []
    masked = scores.astype(float).copy()
    np.fill_diagonal(masked, -np.inf)
    masked[:, root] = -np.inf

    parent = np.zeros(n, dtype=int)
    parent[root] = root
    for v in range(n):
        if v != root:
            parent[v] = int(np.argmax(masked[:, v]))

    cycle = _find_cycle(parent, root)
    if cycle is None:
        return [(int(parent[v]), v) for v in range(n) if v != root]

    cycle_set = set(cycle)
    cycle_score = {v: masked[parent[v], v] for v in cycle}
    keep = [v for v in range(n) if v not in cycle_set]
    m = len(keep) + 1
    sup = m - 1  # contracted supernode
    new = np.full((m, m), -np.inf)
    enter_choice: dict[int, int] = {}  # outside node index -> entry node in cycle
    leave_choice: dict[int, int] = {}  # outside node index -> exit node in cycle
    for i, u in enumerate(keep):
        for j, w in enumerate(keep):
            if i != j:
                new[i, j] = masked[u, w]
        enter_gains = np.array([masked[u, v] - cycle_score[v] for v in cycle])
        best_in = int(np.argmax(enter_gains))
        new[i, sup] = enter_gains[best_in]
        enter_choice[i] = cycle[best_in]
        leave_gains = np.array([masked[v, u] for v in cycle])
        best_out = int(np.argmax(leave_gains))
        new[sup, i] = leave_gains[best_out]
        leave_choice[i] = cycle[best_out]

    contracted = _cle(new, keep.index(root))

    arcs: list[tuple[int, int]] = []
    entered: int | None = None
    for h, d in contracted:
        if d == sup:
            entered = enter_choice[h]
            arcs.append((keep[h], entered))
        elif h == sup:
            arcs.append((leave_choice[d], keep[d]))
        else:
            arcs.append((keep[h], keep[d]))
    for v in cycle:  # keep the cycle arcs except the one displaced by entry
        if v != entered:
            arcs.append((int(parent[v]), v))
    return arcs


def choose_pseudo_root(scores: ScoreMatrix) -> int:
    """Serialization root for undirected trees: word with the highest total score."""
    totals = scores.values.sum(axis=1)
    return int(np.argmax(totals))


def induce(target_matrix: AttentionMatrix,
           variant_matrices: list[AttentionMatrix],
           spec: AggregationSpec,
           symmetrize_mode: str = "avg") -> tuple[InducedTree, ScoreMatrix]:
    """Aggregate then decode; returns the tree together with its score matrix."""
    scores = aggregate(target_matrix, variant_matrices, spec,
                       symmetrize_mode=symmetrize_mode)
    tree = prim_mst(scores)
    root = choose_pseudo_root(scores)
    return InducedTree(n=tree.n, edges=tree.edges, root=root), scores


def orient_from_root(tree: InducedTree, root: int) -> list[tuple[int, int]]:
    """Orient undirected edges away from ``root``: (head, dependent) arcs."""
    adjacency: dict[int, list[int]] = {}
    for i, j in tree.edges:
        adjacency.setdefault(i, []).append(j)
        adjacency.setdefault(j, []).append(i)
    arcs = []
    seen = {root}
    stack = [root]
    while stack:
        head = stack.pop()
        for dep in sorted(adjacency.get(head, ())):
            if dep not in seen:
                seen.add(dep)
                arcs.append((head, dep))
                stack.append(dep)
    return sorted(arcs, key=lambda arc: arc[1])


def tree_to_conllu(tree: InducedTree, words, upos=None, sent_id: str = "",
                   comments: list[str] | None = None) -> str:
    """Serialize a decoded tree as a CoNLL-U block.

    Undirected trees are oriented away from their pseudo-root; unlabeled
    arcs get the placeholder relation ``dep``.
    """
    n = len(words)
    if tree.n != n:
        raise InductionError("tree size does not match words")
    if tree.directed:
        arcs = sorted(tree.edges, key=lambda arc: arc[1])
        label_of = {tuple(edge): (tree.labels[i] if tree.labels else "dep")
                    for i, edge in enumerate(tree.edges)}
        root = tree.root
    else:
        root = tree.root if tree.root is not None else 0
        arcs = orient_from_root(tree, root)
        label_of = {arc: "dep" for arc in arcs}
    head_of = {d: h for h, d in arcs}
    lines = []
    if sent_id:
        lines.append(f"# sent_id = {sent_id}")
    for comment in comments or ():
        lines.append(f"# {comment}")
    for i, word in enumerate(words):
        head = 0 if i == root else head_of[i] + 1
        deprel = "root" if i == root else label_of[(head_of[i], i)]
        tag = upos[i] if upos is not None else "_"
        lines.append("\t".join([str(i + 1), word, "_", tag, "_", "_",
                                str(head), deprel, "_", "_"]))
    return "\n".join(lines) + "\n"


def render_bracket(tree: InducedTree, words) -> str:
    """Plain-text nested-bracket rendering, children in word order."""
    root = tree.root if tree.root is not None else 0
    if tree.directed:
        children: dict[int, list[int]] = {}
        for h, d in tree.edges:
            children.setdefault(h, []).append(d)
    else:
        arcs = orient_from_root(tree, root)
        children = {}
        for h, d in arcs:
            children.setdefault(h, []).append(d)

    def render(node: int) -> str:
        kids = sorted(children.get(node, ()))
        if not kids:
            return words[node]
        inner = " ".join(render(kid) for kid in kids)
        return f"({words[node]} {inner})"

    return render(root)
