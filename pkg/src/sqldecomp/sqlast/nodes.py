"""Canonical SQL syntax trees.

Every node belongs to exactly one of three categories:

* ``Clause``   -- statement-level keywords: SELECT, FROM, WHERE, GROUP BY,
                  HAVING, ORDER BY, LIMIT, and set operators (UNION, UNION ALL,
                  INTERSECT, EXCEPT), which root compound queries.
* ``Operator`` -- anything that combines or transforms values: comparison and
                  arithmetic tokens, AND/OR/NOT, LIKE, IN, EXISTS, BETWEEN,
                  IS NULL, CASE/WHEN/ELSE, CAST, DISTINCT, JOIN variants, ON,
                  function calls, DESC.
* ``Operand``  -- terminals: table names, ``table.column`` references, literals,
                  ``*``, and type names.

Set math over trees works on *keys*: ``(category, label, occurrence)`` where the
occurrence index counts same-labeled siblings under one parent (0 for the first
or only occurrence). Edge keys pair the parent and child keys. Two nodes with
equal keys are the same element in every union / intersection / inclusion.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

CLAUSE = "Clause"
OPERATOR = "Operator"
OPERAND = "Operand"

CATEGORIES = (CLAUSE, OPERATOR, OPERAND)

# Child ranks under a SELECT clause: select items first, then named clauses in
# the order the grammar admits them. Used when re-canonicalizing merged trees.
_SELECT_CLAUSE_RANK = {
    "FROM": 1,
    "WHERE": 2,
    "GROUP BY": 3,
    "HAVING": 4,
    "ORDER BY": 5,
    "LIMIT": 6,
}

SET_OP_LABELS = ("UNION", "UNION ALL", "INTERSECT", "EXCEPT")

# Associative-commutative constructs: nested same-label children are flattened
# and the resulting child list is sorted. EXCEPT keeps syntactic order.
_FLATTEN_SORT = {
    (OPERATOR, "AND"),
    (OPERATOR, "OR"),
    (CLAUSE, "UNION"),
    (CLAUSE, "UNION ALL"),
    (CLAUSE, "INTERSECT"),
}


class NodeKey(NamedTuple):
    category: str
    label: str
    occ: int

    def render(self) -> str:
        base = f"{self.category}:{self.label}"
        return base if self.occ == 0 else f"{base}#{self.occ}"


EdgeKey = tuple[NodeKey, NodeKey]


@dataclass(frozen=True)
class AstNode:
    id: int
    category: str
    label: str
    children: tuple[int, ...]


@dataclass(frozen=True)
class Ast:
    """Frozen canonical tree. ``roots`` has one entry for parsed SQL; merged
    summaries may carry extra detached roots when step roots share no ancestor."""

    nodes: tuple[AstNode, ...] = ()
    roots: tuple[int, ...] = ()
    _keys: tuple[NodeKey, ...] = field(default=(), repr=False)

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def is_empty(self) -> bool:
        return not self.nodes

    @property
    def root(self) -> AstNode:
        if not self.roots:
            raise ValueError("empty tree has no root")
        return self.nodes[self.roots[0]]

    def key_of(self, node_id: int) -> NodeKey:
        return self._keys[node_id]

    def node_keys(self) -> frozenset[NodeKey]:
        return frozenset(self._keys)

    def category_keys(self, category: str) -> frozenset[NodeKey]:
        return frozenset(k for k in self._keys if k.category == category)

    def edge_keys(self) -> frozenset[EdgeKey]:
        out = set()
        for node in self.nodes:
            pk = self._keys[node.id]
            for child_id in node.children:
                out.add((pk, self._keys[child_id]))
        return frozenset(out)

    def edges(self) -> Iterator[tuple[int, int]]:
        for node in self.nodes:
            for child_id in node.children:
                yield node.id, child_id

    def to_build(self) -> list["BuildNode"]:
        """Mutable copies of the root trees, for merging."""
        return [_thaw(self, r) for r in self.roots]


@dataclass
class BuildNode:
    """Mutable tree node used by the parser and by merge before freezing."""

    category: str
    label: str
    children: list["BuildNode"] = field(default_factory=list)

    def signature(self) -> str:
        inner = ",".join(c.signature() for c in self.children)
        return f"{self.category}\x1f{self.label}\x1f({inner})"


@dataclass(frozen=True)
class SimWeights:
    """Per-category weights for node similarity plus the node/structure mix."""

    w_clause: float = 1.0 / 3.0
    w_operator: float = 1.0 / 3.0
    w_operand: float = 1.0 / 3.0
    alpha: float = 0.75
    beta: float = 0.25

    def __post_init__(self):
        if abs(self.w_clause + self.w_operator + self.w_operand - 1.0) > 1e-9:
            raise ValueError("category weights must sum to 1")
        if abs(self.alpha + self.beta - 1.0) > 1e-9:
            raise ValueError("alpha + beta must equal 1")
        for v in (self.w_clause, self.w_operator, self.w_operand, self.alpha, self.beta):
            if not 0.0 <= v <= 1.0:
                raise ValueError("weights must lie in [0, 1]")

    def for_category(self, category: str) -> float:
        return {
            CLAUSE: self.w_clause,
            OPERATOR: self.w_operator,
            OPERAND: self.w_operand,
        }[category]


DEFAULT_WEIGHTS = SimWeights()


def _child_rank(parent: BuildNode, child: BuildNode) -> int:
    if parent.category == CLAUSE and parent.label == "SELECT":
        if child.category == CLAUSE:
            return _SELECT_CLAUSE_RANK.get(child.label, 0)
        return 0
    if parent.category == CLAUSE and parent.label in SET_OP_LABELS:
        if child.category == CLAUSE and child.label in ("ORDER BY", "LIMIT"):
            return _SELECT_CLAUSE_RANK[child.label]
        return 0
    return 0


def canonicalize_order(node: BuildNode) -> None:
    """Normalize child order in place.

    Same-label chains of AND / OR / UNION / UNION ALL / INTERSECT are flattened
    into one n-ary node and their children sorted by (category, label, subtree
    signature), so trivially reordered conditions produce one tree. Clause
    children of SELECT and of set operators are kept in grammar order; all other
    children keep syntactic order.
    """
    for child in node.children:
        canonicalize_order(child)
    if (node.category, node.label) in _FLATTEN_SORT:
        flat: list[BuildNode] = []
        for child in node.children:
            if child.category == node.category and child.label == node.label:
                flat.extend(child.children)
            else:
                flat.append(child)
        flat.sort(key=lambda c: (c.category, c.label, c.signature()))
        node.children = flat
    elif node.category == CLAUSE and (node.label == "SELECT" or node.label in SET_OP_LABELS):
        node.children = sorted(node.children, key=lambda c: _child_rank(node, c))


def freeze(build_roots: list[BuildNode], canonical: bool = True) -> Ast:
    """Assign dense preorder ids and occurrence keys; returns the frozen Ast."""
    if canonical:
        for r in build_roots:
            canonicalize_order(r)

    nodes: list[AstNode] = []
    keys: list[NodeKey] = []

    def occ_indices(children: list[BuildNode]) -> list[int]:
        seen: dict[tuple[str, str], int] = {}
        occs = []
        for c in children:
            k = (c.category, c.label)
            occs.append(seen.get(k, 0))
            seen[k] = occs[-1] + 1
        return occs

    def walk(b: BuildNode, occ: int) -> int:
        node_id = len(nodes)
        nodes.append(None)  # type: ignore[arg-type]  # reserve preorder slot
        keys.append(NodeKey(b.category, b.label, occ))
        child_ids = []
        for child, child_occ in zip(b.children, occ_indices(b.children)):
            child_ids.append(walk(child, child_occ))
        nodes[node_id] = AstNode(node_id, b.category, b.label, tuple(child_ids))
        return node_id

    root_ids = [
        walk(b, occ) for b, occ in zip(build_roots, occ_indices(build_roots))
    ]
    return Ast(nodes=tuple(nodes), roots=tuple(root_ids), _keys=tuple(keys))


def _thaw(ast: Ast, node_id: int) -> BuildNode:
    node = ast.nodes[node_id]
    return BuildNode(
        category=node.category,
        label=node.label,
        children=[_thaw(ast, c) for c in node.children],
    )


EMPTY_AST = Ast()
