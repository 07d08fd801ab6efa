"""Errors raised while turning SQL text into canonical trees."""

from __future__ import annotations


class AstError(Exception):
    pass


class SqlSyntaxError(AstError):
    """Input text is not parseable SQL. Carries the character offset of the failure."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UnsupportedConstruct(AstError):
    """Valid SQL that is outside the supported SELECT-family subset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class DegenerateInput(AstError):
    """Operation undefined on the given inputs (e.g. both trees empty)."""
