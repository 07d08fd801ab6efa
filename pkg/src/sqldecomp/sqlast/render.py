"""Render canonical trees back to single-line SQL.

The output is meant to reparse to the identical tree, so rendering plus parse
is a stable round trip and merged trees can be executed against SQLite.
"""

from __future__ import annotations

import re

from .errors import DegenerateInput
from .nodes import CLAUSE, OPERAND, OPERATOR, Ast, AstNode
from .parser import _RESERVED

_PLAIN_IDENT = re.compile(r"^[a-z_][a-z0-9_]*$")
_NUMBER_LIKE = re.compile(r"^-?(\d+(\.\d*)?|\.\d+)(e[+-]?\d+)?$", re.IGNORECASE)

# Binding strength, loosest first; atoms and self-delimiting forms sit at 9.
_PREC = {
    "OR": 1,
    "AND": 2,
    "NOT": 3,
    "=": 4, "!=": 4, "<": 4, "<=": 4, ">": 4, ">=": 4,
    "IS": 4, "LIKE": 4, "GLOB": 4, "BETWEEN": 4, "IN": 4,
    "+": 5, "-": 5,
    "*": 6, "/": 6, "%": 6,
    "||": 7,
}

_SECTION_ORDER = ("FROM", "WHERE", "GROUP BY", "HAVING", "ORDER BY", "LIMIT")


def pretty_print(ast: Ast) -> str:
    if ast.is_empty:
        raise DegenerateInput("cannot render an empty tree")
    if len(ast.roots) != 1:
        raise DegenerateInput("cannot render a forest as one statement")
    return _render_query(ast, ast.root)


def _node(ast: Ast, node_id: int) -> AstNode:
    return ast.nodes[node_id]


def _render_query(ast: Ast, node: AstNode) -> str:
    if node.category != CLAUSE:
        raise DegenerateInput(f"expected a query root, found {node.label}")
    if node.label == "SELECT":
        return _render_select(ast, node)
    return _render_set_op(ast, node)


def _render_select(ast: Ast, node: AstNode) -> str:
    items: list[str] = []
    distinct = False
    sections: dict[str, AstNode] = {}
    for cid in node.children:
        child = _node(ast, cid)
        if child.category == OPERATOR and child.label == "DISTINCT" and not child.children:
            distinct = True
        elif child.category == CLAUSE and child.label in _SECTION_ORDER:
            sections[child.label] = child
        else:
            items.append(_expr(ast, child, 0))
    parts = ["SELECT"]
    if distinct:
        parts.append("DISTINCT")
    parts.append(", ".join(items) if items else "*")
    for label in _SECTION_ORDER:
        if label in sections:
            parts.append(_render_section(ast, sections[label]))
    return " ".join(parts)


def _render_set_op(ast: Ast, node: AstNode) -> str:
    arms: list[str] = []
    trailer: list[str] = []
    for cid in node.children:
        child = _node(ast, cid)
        if child.category == CLAUSE and child.label in ("ORDER BY", "LIMIT"):
            trailer.append(_render_section(ast, child))
        elif child.category == CLAUSE and child.label == "SELECT":
            arms.append(_render_select(ast, child))
        elif child.category == CLAUSE:
            arms.append("(" + _render_set_op(ast, child) + ")")
        else:
            raise DegenerateInput(f"unexpected {child.label} under {node.label}")
    if len(arms) < 2:
        raise DegenerateInput(f"{node.label} needs at least two arms")
    joined = f" {node.label} ".join(arms)
    return " ".join([joined] + trailer)


def _render_section(ast: Ast, node: AstNode) -> str:
    label = node.label
    if label == "FROM":
        return _render_from(ast, node)
    if label in ("WHERE", "HAVING"):
        return f"{label} " + _expr(ast, _node(ast, node.children[0]), 0)
    if label == "GROUP BY":
        keys = ", ".join(_expr(ast, _node(ast, c), 0) for c in node.children)
        return f"GROUP BY {keys}"
    if label == "ORDER BY":
        keys = []
        for cid in node.children:
            child = _node(ast, cid)
            if child.category == OPERATOR and child.label == "DESC":
                keys.append(_expr(ast, _node(ast, child.children[0]), 0) + " DESC")
            else:
                keys.append(_expr(ast, child, 0))
        return "ORDER BY " + ", ".join(keys)
    if label == "LIMIT":
        count = _expr(ast, _node(ast, node.children[0]), 5)
        out = f"LIMIT {count}"
        for cid in node.children[1:]:
            child = _node(ast, cid)
            if child.category == OPERATOR and child.label == "OFFSET":
                out += " OFFSET " + _expr(ast, _node(ast, child.children[0]), 5)
        return out
    raise DegenerateInput(f"unexpected clause {label}")


def _render_from(ast: Ast, node: AstNode) -> str:
    out = "FROM"
    first = True
    for cid in node.children:
        child = _node(ast, cid)
        if child.category == OPERAND:
            out += (" " if first else ", ") + _identifier(child.label)
        elif child.category == OPERATOR and child.label.endswith("JOIN"):
            if first:
                raise DegenerateInput("FROM clause starts with a join")
            table = _node(ast, child.children[0])
            out += f" {child.label} " + _identifier(table.label)
            if len(child.children) > 1:
                out += " ON " + _expr(ast, _node(ast, child.children[1]), 0)
        else:
            raise DegenerateInput(f"unexpected {child.label} under FROM")
        first = False
    return out


def _expr(ast: Ast, node: AstNode, needed: int) -> str:
    text, prec = _expr_prec(ast, node)
    return f"({text})" if prec < needed else text


def _expr_prec(ast: Ast, node: AstNode) -> tuple[str, int]:
    if node.category == OPERAND:
        return _operand_text(node.label), 9
    if node.category == CLAUSE:
        return "(" + _render_query(ast, node) + ")", 9
    label = node.label
    kids = [_node(ast, c) for c in node.children]

    if label in ("AND", "OR"):
        prec = _PREC[label]
        joined = f" {label} ".join(_expr(ast, k, prec + 1) for k in kids)
        return joined, prec
    if label == "NOT":
        return "NOT " + _expr(ast, kids[0], 3), 3
    if label == "BETWEEN":
        subject = _expr(ast, kids[0], 5)
        low = _expr(ast, kids[1], 5)
        high = _expr(ast, kids[2], 5)
        return f"{subject} BETWEEN {low} AND {high}", 4
    if label == "IN":
        subject = _expr(ast, kids[0], 5)
        if len(kids) == 2 and kids[1].category == CLAUSE:
            return f"{subject} IN ({_render_query(ast, kids[1])})", 4
        members = ", ".join(_expr(ast, k, 0) for k in kids[1:])
        return f"{subject} IN ({members})", 4
    if label == "EXISTS":
        return "EXISTS (" + _render_query(ast, kids[0]) + ")", 9
    if label == "CASE":
        parts = ["CASE"]
        for kid in kids:
            if kid.category == OPERATOR and kid.label == "WHEN":
                cond = _expr(ast, _node(ast, kid.children[0]), 0)
                result = _expr(ast, _node(ast, kid.children[1]), 0)
                parts.append(f"WHEN {cond} THEN {result}")
            elif kid.category == OPERATOR and kid.label == "ELSE":
                parts.append("ELSE " + _expr(ast, _node(ast, kid.children[0]), 0))
            else:
                parts.insert(1, _expr(ast, kid, 0))
        parts.append("END")
        return " ".join(parts), 9
    if label == "CAST":
        value = _expr(ast, kids[0], 0)
        return f"CAST({value} AS {kids[1].label})", 9
    if label == "DISTINCT":
        return "DISTINCT " + _expr(ast, kids[0], 4), 3
    if label == "DESC":
        return _expr(ast, kids[0], 4) + " DESC", 3
    if label == "-" and len(kids) == 1:
        return "-" + _expr(ast, kids[0], 8), 8
    if label in _PREC and len(kids) == 2:
        prec = _PREC[label]
        left = _expr(ast, kids[0], prec)
        right = _expr(ast, kids[1], prec + 1)
        return f"{left} {label} {right}", prec
    # Anything else renders as a call.
    args = ", ".join(_expr(ast, k, 0) for k in kids)
    return f"{label}({args})", 9


def _operand_text(label: str) -> str:
    if label.startswith("'") or label in ("NULL", "*"):
        return label
    if _NUMBER_LIKE.match(label):
        return label
    return _identifier(label)


def _identifier(label: str) -> str:
    parts = label.split(".")
    out = []
    for part in parts:
        if part == "*":
            out.append(part)
        elif _PLAIN_IDENT.match(part) and part.upper() not in _RESERVED:
            out.append(part)
        else:
            out.append('"' + part.replace('"', '""') + '"')
    return ".".join(out)
