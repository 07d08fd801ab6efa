import pytest

from sqldecomp.sqlast.errors import SqlSyntaxError
from sqldecomp.sqlast.lexer import (
    END,
    IDENT,
    NUMBER,
    QIDENT,
    STRING,
    SYMBOL,
    tokenize,
)


def test_full_token_stream():
    text = "SELECT a.b, 'it''s' FROM t -- tail\nWHERE x >= 1.5e2 /* c */ AND \"q id\" <> 2"
    got = [(t.kind, t.text, t.value, t.pos) for t in tokenize(text)]
    assert got == [
        (IDENT, "SELECT", "SELECT", 0),
        (IDENT, "a", "a", 7),
        (SYMBOL, ".", ".", 8),
        (IDENT, "b", "b", 9),
        (SYMBOL, ",", ",", 10),
        (STRING, "'it''s'", "it's", 12),
        (IDENT, "FROM", "FROM", 20),
        (IDENT, "t", "t", 25),
        (IDENT, "WHERE", "WHERE", 35),
        (IDENT, "x", "x", 41),
        (SYMBOL, ">=", ">=", 43),
        (NUMBER, "1.5e2", "1.5e2", 46),
        (IDENT, "AND", "AND", 60),
        (QIDENT, '"q id"', "q id", 64),
        (SYMBOL, "<>", "<>", 71),
        (NUMBER, "2", "2", 74),
        (END, "", "", 75),
    ]


@pytest.mark.parametrize("sym", ["<=", ">=", "<>", "!=", "||", "=="])
def test_two_char_symbols_lex_as_one_token(sym):
    toks = tokenize(f"a {sym} b")
    kinds = [t.kind for t in toks]
    assert kinds == [IDENT, SYMBOL, IDENT, END]
    assert toks[1].text == sym


def test_doubled_quote_escapes_inside_string():
    toks = tokenize("'it''s'")
    assert toks[0].kind == STRING
    assert toks[0].value == "it's"
    # The raw text keeps the doubled quote so offsets stay honest.
    assert toks[0].text == "'it''s'"


def test_end_token_always_present():
    assert [t.kind for t in tokenize("")] == [END]
    toks = tokenize("SELECT 1")
    assert toks[-1].kind == END
    assert toks[-1].pos == len("SELECT 1")


def test_comments_are_skipped():
    line = tokenize("SELECT 1 -- the rest\n")
    block = tokenize("SELECT /* noise */ 1")
    assert [t.value for t in line] == ["SELECT", "1", ""]
    assert [t.value for t in block] == ["SELECT", "1", ""]


def test_unterminated_string_reports_offset():
    with pytest.raises(SqlSyntaxError) as exc:
        tokenize("SELECT 'oops")
    assert exc.value.offset == 7
    assert str(exc.value) == "unterminated string literal (at offset 7)"


def test_unterminated_block_comment_reports_offset():
    text = "SELECT 1 /* dangling"
    with pytest.raises(SqlSyntaxError) as exc:
        tokenize(text)
    assert exc.value.offset == text.index("/*")


def test_token_upper_never_touches_string_values():
    toks = tokenize("select 'Mixed Case'")
    assert toks[0].upper() == "SELECT"
    assert toks[1].value == "Mixed Case"
