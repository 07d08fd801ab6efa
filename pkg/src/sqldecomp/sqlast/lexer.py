"""Tokenizer for the supported SQL subset. Tracks character offsets so parse
errors can point at the offending input."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import SqlSyntaxError

IDENT = "ident"
QIDENT = "qident"
NUMBER = "number"
STRING = "string"
SYMBOL = "symbol"
END = "end"

_TWO_CHAR = ("<=", ">=", "<>", "!=", "||", "==")
_ONE_CHAR = "()+-*/%<>=,.;"


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    value: str
    pos: int

    def upper(self) -> str:
        return self.text.upper()


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if text.startswith("--", i):
            nl = text.find("\n", i)
            i = n if nl < 0 else nl + 1
            continue
        if text.startswith("/*", i):
            end = text.find("*/", i + 2)
            if end < 0:
                raise SqlSyntaxError("unterminated block comment", i)
            i = end + 2
            continue
        if ch == "'":
            value, i2 = _scan_quoted(text, i, "'")
            tokens.append(Token(STRING, text[i:i2], value, i))
            i = i2
            continue
        if ch == '"':
            value, i2 = _scan_quoted(text, i, '"')
            tokens.append(Token(QIDENT, text[i:i2], value, i))
            i = i2
            continue
        if ch == "`":
            end = text.find("`", i + 1)
            if end < 0:
                raise SqlSyntaxError("unterminated quoted identifier", i)
            tokens.append(Token(QIDENT, text[i : end + 1], text[i + 1 : end], i))
            i = end + 1
            continue
        if ch == "[":
            end = text.find("]", i + 1)
            if end < 0:
                raise SqlSyntaxError("unterminated quoted identifier", i)
            tokens.append(Token(QIDENT, text[i : end + 1], text[i + 1 : end], i))
            i = end + 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and text[i + 1].isdigit()):
            j = _scan_number(text, i)
            tokens.append(Token(NUMBER, text[i:j], text[i:j], i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i + 1
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(Token(IDENT, text[i:j], text[i:j], i))
            i = j
            continue
        two = text[i : i + 2]
        if two in _TWO_CHAR:
            tokens.append(Token(SYMBOL, two, two, i))
            i += 2
            continue
        if ch in _ONE_CHAR:
            tokens.append(Token(SYMBOL, ch, ch, i))
            i += 1
            continue
        raise SqlSyntaxError(f"unexpected character {ch!r}", i)
    tokens.append(Token(END, "", "", n))
    return tokens


def _scan_quoted(text: str, start: int, quote: str) -> tuple[str, int]:
    """Scan a quoted region starting at `start`; doubled quotes escape."""
    i = start + 1
    out = []
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == quote:
            if i + 1 < n and text[i + 1] == quote:
                out.append(quote)
                i += 2
                continue
            return "".join(out), i + 1
        out.append(ch)
        i += 1
    raise SqlSyntaxError("unterminated string literal", start)


def _scan_number(text: str, start: int) -> int:
    i = start
    n = len(text)
    while i < n and text[i].isdigit():
        i += 1
    if i < n and text[i] == ".":
        i += 1
        while i < n and text[i].isdigit():
            i += 1
    if i < n and text[i] in "eE":
        j = i + 1
        if j < n and text[j] in "+-":
            j += 1
        if j < n and text[j].isdigit():
            i = j
            while i < n and text[i].isdigit():
                i += 1
    return i
