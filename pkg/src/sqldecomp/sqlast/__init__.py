"""Canonical SQL trees: parsing, rendering, key sets, and similarity."""

from .errors import AstError, DegenerateInput, SqlSyntaxError, UnsupportedConstruct
from .nodes import (
    CATEGORIES,
    CLAUSE,
    DEFAULT_WEIGHTS,
    EMPTY_AST,
    OPERAND,
    OPERATOR,
    Ast,
    AstNode,
    EdgeKey,
    NodeKey,
    SimWeights,
)
from .parser import parse
from .render import pretty_print
from .similarity import (
    StepClass,
    classify,
    is_subtree,
    jaccard,
    merge,
    reward,
    sim_node,
    sim_struct,
    tree_edit_distance,
)

__all__ = [
    "AstError",
    "DegenerateInput",
    "SqlSyntaxError",
    "UnsupportedConstruct",
    "CATEGORIES",
    "CLAUSE",
    "OPERATOR",
    "OPERAND",
    "DEFAULT_WEIGHTS",
    "EMPTY_AST",
    "Ast",
    "AstNode",
    "EdgeKey",
    "NodeKey",
    "SimWeights",
    "parse",
    "pretty_print",
    "StepClass",
    "classify",
    "is_subtree",
    "jaccard",
    "merge",
    "reward",
    "sim_node",
    "sim_struct",
    "tree_edit_distance",
]
