"""Key-set algebra and tree similarity over canonical SQL trees.

A tree is summarized by two flat sets: node keys (category, label, sibling
occurrence) and edge keys (parent key, child key). Merging accumulates the
union of both sets while keeping an actual tree around, because the structural
half of the reward needs an ordered tree edit distance, not just sets.
"""

from __future__ import annotations

import enum

from .errors import DegenerateInput
from .nodes import (
    CATEGORIES,
    DEFAULT_WEIGHTS,
    Ast,
    BuildNode,
    SimWeights,
    freeze,
)


class StepClass(enum.Enum):
    PROGRESSIVE = "progressive"
    REDUNDANT = "redundant"
    INVALID = "invalid"
    ROOT = "root"  # search-tree root only; classify() never returns this


def is_subtree(inner: Ast, outer: Ast) -> bool:
    """True when every node key and edge key of `inner` appears in `outer`.

    The empty tree is a subtree of everything.
    """
    return (
        inner.node_keys() <= outer.node_keys()
        and inner.edge_keys() <= outer.edge_keys()
    )


def classify(step: Ast | None, merged: Ast, target: Ast) -> StepClass:
    """Sort one decomposition step against the target and what came before.

    `step` is None when the step's SQL failed to parse; that is Invalid, as is
    any step introducing keys outside the target. A parseable step fully
    contained in the running merge adds nothing and is Redundant.
    """
    if step is None or step.is_empty:
        return StepClass.INVALID
    if not is_subtree(step, target):
        return StepClass.INVALID
    if is_subtree(step, merged):
        return StepClass.REDUNDANT
    return StepClass.PROGRESSIVE


def _clone(node: BuildNode) -> BuildNode:
    return BuildNode(node.category, node.label, [_clone(c) for c in node.children])


def _occ_items(children: list[BuildNode]) -> list[tuple[tuple[str, str, int], BuildNode]]:
    seen: dict[tuple[str, str], int] = {}
    out = []
    for child in children:
        base = (child.category, child.label)
        occ = seen.get(base, 0)
        seen[base] = occ + 1
        out.append(((child.category, child.label, occ), child))
    return out


def _merge_into(dst: BuildNode, src: BuildNode) -> None:
    index = {key: child for key, child in _occ_items(dst.children)}
    for key, child in _occ_items(src.children):
        if key in index:
            _merge_into(index[key], child)
        else:
            dst.children.append(_clone(child))


def merge(summary: Ast, step: Ast) -> Ast:
    """Union of the two trees' node and edge key sets, realized as a tree.

    Roots matching by key are merged pairwise. A step that subsumes the running
    summary (say a set operation whose first arm is the summary so far) absorbs
    it instead. Anything unrelated is kept as a detached extra root so the key
    union stays exact.
    """
    if summary.is_empty:
        return freeze(step.to_build()) if step.nodes else step
    if step.is_empty:
        return summary

    out = summary.to_build()
    for skey, src in _occ_items(step.to_build()):
        matched = False
        for dkey, dst in _occ_items(out):
            if dkey == skey:
                _merge_into(dst, src)
                matched = True
                break
        if matched:
            continue
        for idx, (dkey, dst) in enumerate(_occ_items(out)):
            absorb = {key: child for key, child in _occ_items(src.children)}
            if dkey in absorb:
                _merge_into(absorb[dkey], dst)
                out[idx] = src
                matched = True
                break
        if not matched:
            out.append(src)
    return freeze(out, canonical=True)


def jaccard(a: frozenset, b: frozenset) -> float:
    """|a ∩ b| / |a ∪ b|, with two empty sets counting as identical."""
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def sim_node(a: Ast, b: Ast, weights: SimWeights = DEFAULT_WEIGHTS) -> float:
    """Category-weighted Jaccard similarity over node key sets."""
    total = 0.0
    for category in CATEGORIES:
        total += weights.for_category(category) * jaccard(
            a.category_keys(category), b.category_keys(category)
        )
    return total


def _annotate(ast: Ast) -> tuple[list[tuple[str, str]], list[int], list[int]]:
    """Postorder labels, leftmost leaf descendants, and keyroots, 1-based.

    A shared sentinel root is appended over `ast.roots` so forests and the
    empty tree run through the same machinery at zero extra cost.
    """
    labels: list[tuple[str, str]] = [("", "")]  # index 0 unused
    lmd: list[int] = [0]

    def walk(node_id: int) -> int:
        node = ast.nodes[node_id]
        first = None
        for child_id in node.children:
            child_idx = walk(child_id)
            if first is None:
                first = lmd[child_idx]
        labels.append((node.category, node.label))
        idx = len(labels) - 1
        lmd.append(first if first is not None else idx)
        return idx

    first_leaf = None
    for root_id in ast.roots:
        root_idx = walk(root_id)
        if first_leaf is None:
            first_leaf = lmd[root_idx]
    labels.append(("\x00", "\x00"))
    idx = len(labels) - 1
    lmd.append(first_leaf if first_leaf is not None else idx)

    last_for_lmd: dict[int, int] = {}
    for k in range(1, len(labels)):
        last_for_lmd[lmd[k]] = k
    keyroots = sorted(last_for_lmd.values())
    return labels, lmd, keyroots


def tree_edit_distance(a: Ast, b: Ast) -> int:
    """Minimum number of unit-cost node edits (insert, delete, relabel) turning
    `a` into `b`, children order significant."""
    la, lmda, kra = _annotate(a)
    lb, lmdb, krb = _annotate(b)
    n = len(la) - 1
    m = len(lb) - 1
    td = [[0] * (m + 1) for _ in range(n + 1)]

    for i in kra:
        for j in krb:
            li = lmda[i]
            lj = lmdb[j]
            rows = i - li + 2
            cols = j - lj + 2
            fd = [[0] * cols for _ in range(rows)]
            for di in range(1, rows):
                fd[di][0] = fd[di - 1][0] + 1
            for dj in range(1, cols):
                fd[0][dj] = fd[0][dj - 1] + 1
            for di in range(1, rows):
                ai = li + di - 1
                for dj in range(1, cols):
                    bj = lj + dj - 1
                    if lmda[ai] == li and lmdb[bj] == lj:
                        cost = 0 if la[ai] == lb[bj] else 1
                        fd[di][dj] = min(
                            fd[di - 1][dj] + 1,
                            fd[di][dj - 1] + 1,
                            fd[di - 1][dj - 1] + cost,
                        )
                        td[ai][bj] = fd[di][dj]
                    else:
                        fd[di][dj] = min(
                            fd[di - 1][dj] + 1,
                            fd[di][dj - 1] + 1,
                            fd[lmda[ai] - li][lmdb[bj] - lj] + td[ai][bj],
                        )
    return td[n][m]


def sim_struct(a: Ast, b: Ast) -> float:
    """1 - TED / max(sizes), floored at 0; raises DegenerateInput when both
    trees are empty.

    The floor matters: the distance between two trees sharing nothing can
    reach the sum of their sizes, and a similarity score must not go negative.
    """
    if a.is_empty and b.is_empty:
        raise DegenerateInput("structural similarity of two empty trees")
    return max(0.0, 1.0 - tree_edit_distance(a, b) / max(a.size, b.size))


def reward(merged: Ast, target: Ast, weights: SimWeights = DEFAULT_WEIGHTS) -> float:
    """Blend of node-set similarity and structural similarity."""
    return weights.alpha * sim_node(merged, target, weights) + weights.beta * sim_struct(
        merged, target
    )
