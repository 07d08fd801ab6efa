import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corpus import random_queries
from sqldecomp.sqlast import (
    DEFAULT_WEIGHTS,
    SimWeights,
    jaccard,
    parse,
    reward,
    sim_node,
    sim_struct,
)

TOL = 1e-9

# Strategy over parsed corpus queries; parsing is cheap enough to do inline.
_CORPUS_ASTS = [parse(q) for q in random_queries(60, seed=11)]
asts = st.sampled_from(_CORPUS_ASTS)


def test_default_weights_are_normalized():
    w = DEFAULT_WEIGHTS
    assert abs(w.w_clause + w.w_operator + w.w_operand - 1.0) < TOL
    assert abs(w.alpha + w.beta - 1.0) < TOL
    assert w.alpha == 0.75


def test_jaccard_hand_values():
    assert jaccard(frozenset(), frozenset()) == 1.0
    assert jaccard(frozenset("ab"), frozenset("ab")) == 1.0
    assert jaccard(frozenset("ab"), frozenset("bc")) == pytest.approx(1 / 3)
    assert jaccard(frozenset("a"), frozenset("b")) == 0.0


def test_worked_example_scores(users_schema):
    """Pinned floats for the two-query example used throughout the docs:

    clause Jaccard 2/3, operator 0 (empty vs {>}), operand 2/4, each
    weighted 1/3; TED 4 against the larger tree's 8 nodes.
    """
    a = parse("SELECT name FROM users", users_schema)
    b = parse("SELECT name FROM users WHERE age > 18", users_schema)
    assert sim_node(a, b) == pytest.approx((2 / 3 + 0 + 2 / 4) / 3, abs=TOL)
    assert sim_node(a, b) == 0.38888888888888884
    assert sim_struct(a, b) == 0.5
    assert reward(a, b, DEFAULT_WEIGHTS) == 0.41666666666666663


def test_empty_category_counts_as_identical(users_schema):
    # Neither side has Operator nodes, so the operator term contributes 1.
    a = parse("SELECT name FROM users", users_schema)
    assert sim_node(a, a) == 1.0


def test_disjoint_singletons_score_zero_per_category():
    a = parse("SELECT 1")
    b = parse("SELECT 2")
    w = SimWeights(w_clause=0.0, w_operator=0.0, w_operand=1.0, alpha=0.75, beta=0.25)
    assert sim_node(a, b, w) == 0.0


def test_reward_composes_the_two_scores(users_schema):
    a = parse("SELECT name FROM users", users_schema)
    b = parse("SELECT name FROM users WHERE age > 18", users_schema)
    w = DEFAULT_WEIGHTS
    expected = w.alpha * sim_node(a, b, w) + w.beta * sim_struct(a, b)
    assert reward(a, b, w) == pytest.approx(expected, abs=TOL)
    # alpha 0.75 with component scores 0.4 and 0.8 must land on 0.5 exactly.
    assert 0.75 * 0.4 + 0.25 * 0.8 == 0.5


@settings(max_examples=150, deadline=None)
@given(a=asts, b=asts)
def test_similarity_is_symmetric_and_bounded(a, b):
    ns = sim_node(a, b)
    ss = sim_struct(a, b)
    assert abs(ns - sim_node(b, a)) < TOL
    assert abs(ss - sim_struct(b, a)) < TOL
    assert -TOL <= ns <= 1 + TOL
    assert -TOL <= ss <= 1 + TOL
    assert -TOL <= reward(a, b, DEFAULT_WEIGHTS) <= 1 + TOL


@settings(max_examples=60, deadline=None)
@given(a=asts)
def test_identity_scores_one(a):
    assert sim_node(a, a) == pytest.approx(1.0, abs=TOL)
    assert sim_struct(a, a) == pytest.approx(1.0, abs=TOL)
    assert reward(a, a, DEFAULT_WEIGHTS) == pytest.approx(1.0, abs=TOL)
