"""Recursive descent parser for the supported SELECT subset.

Produces canonical trees directly: keywords uppercased, identifiers lowercased
and schema-resolved to table.column where unambiguous, aliases erased, literals
normalized. Anything outside the subset raises UnsupportedConstruct with the
offending offset rather than guessing.
"""

from __future__ import annotations

from ..schema import SchemaDescriptor
from .errors import SqlSyntaxError, UnsupportedConstruct
from .lexer import END, IDENT, NUMBER, QIDENT, STRING, SYMBOL, Token, tokenize
from .nodes import CLAUSE, OPERAND, OPERATOR, Ast, BuildNode, freeze

_UNSUPPORTED_STMT = {
    "WITH": "common table expressions",
    "INSERT": "INSERT statements",
    "UPDATE": "UPDATE statements",
    "DELETE": "DELETE statements",
    "CREATE": "CREATE statements",
    "DROP": "DROP statements",
    "ALTER": "ALTER statements",
    "REPLACE": "REPLACE statements",
    "PRAGMA": "PRAGMA statements",
    "VACUUM": "VACUUM statements",
    "ATTACH": "ATTACH statements",
    "EXPLAIN": "EXPLAIN statements",
    "VALUES": "bare VALUES clauses",
}

# Words that terminate an expression; a bare identifier equal to one of these
# is never read as a column or alias.
_RESERVED = {
    "SELECT", "FROM", "WHERE", "GROUP", "HAVING", "ORDER", "LIMIT", "OFFSET",
    "UNION", "INTERSECT", "EXCEPT", "JOIN", "LEFT", "RIGHT", "FULL", "INNER",
    "OUTER", "CROSS", "NATURAL", "ON", "USING", "AS", "AND", "OR", "NOT", "IN",
    "IS", "LIKE", "GLOB", "BETWEEN", "CASE", "WHEN", "THEN", "ELSE", "END",
    "EXISTS", "CAST", "DISTINCT", "ALL", "ASC", "DESC", "NULL", "BY", "COLLATE",
}

_COMPARISONS = {"=", "==", "!=", "<>", "<", "<=", ">", ">="}
_CANON_COMPARISON = {"==": "=", "<>": "!="}


class _Scope:
    """One FROM clause worth of tables; chains to the enclosing query."""

    def __init__(self, schema: SchemaDescriptor | None, parent: "_Scope | None"):
        self.schema = schema
        self.parent = parent
        self.tables: list[str] = []
        self.aliases: dict[str, str] = {}

    def add_table(self, name: str, alias: str | None) -> None:
        self.tables.append(name)
        if alias:
            self.aliases[alias] = name

    def qualifier_table(self, qualifier: str) -> str | None:
        if qualifier in self.aliases:
            return self.aliases[qualifier]
        if qualifier in self.tables:
            return qualifier
        if self.parent is not None:
            return self.parent.qualifier_table(qualifier)
        return None

    def column_table(self, column: str) -> str | None:
        """The one in-scope table declaring `column`, walking outward; None when
        the name is ambiguous or unknown."""
        if self.schema is not None:
            hits = set()
            for name in self.tables:
                info = self.schema.find_table(name)
                if info and any(c.name.lower() == column for c in info.columns):
                    hits.add(name)
            if len(hits) == 1:
                return next(iter(hits))
            if len(hits) > 1:
                return None
        if self.parent is not None:
            return self.parent.column_table(column)
        return None


def _clone(node: BuildNode) -> BuildNode:
    return BuildNode(node.category, node.label, [_clone(c) for c in node.children])


def _number_label(text: str) -> str:
    try:
        return str(int(text))
    except ValueError:
        return repr(float(text))


def _string_label(value: str) -> str:
    return "'" + value.replace("'", "''") + "'"


class _Parser:
    def __init__(self, text: str, schema: SchemaDescriptor | None):
        self.text = text
        self.tokens = tokenize(text)
        self.i = 0
        self.schema = schema
        self.scope: _Scope | None = None
        self.alias_ctx: dict[str, BuildNode] | None = None
        # (operand node, identifier parts, scope at parse time); labels are
        # filled in after the whole statement is parsed so correlated references
        # see fully populated outer scopes.
        self.pending: list[tuple[BuildNode, tuple[str, ...], _Scope | None]] = []

    # token plumbing

    def peek(self, ahead: int = 0) -> Token:
        return self.tokens[min(self.i + ahead, len(self.tokens) - 1)]

    def advance(self) -> Token:
        tok = self.tokens[self.i]
        if tok.kind != END:
            self.i += 1
        return tok

    def at_kw(self, *words: str) -> bool:
        tok = self.peek()
        return tok.kind == IDENT and tok.upper() in words

    def eat_kw(self, *words: str) -> bool:
        if self.at_kw(*words):
            self.advance()
            return True
        return False

    def expect_kw(self, word: str) -> Token:
        if not self.at_kw(word):
            tok = self.peek()
            raise SqlSyntaxError(f"expected {word}, found {tok.text or 'end of input'!r}", tok.pos)
        return self.advance()

    def at_sym(self, *symbols: str) -> bool:
        tok = self.peek()
        return tok.kind == SYMBOL and tok.text in symbols

    def eat_sym(self, *symbols: str) -> bool:
        if self.at_sym(*symbols):
            self.advance()
            return True
        return False

    def expect_sym(self, symbol: str) -> Token:
        if not self.at_sym(symbol):
            tok = self.peek()
            raise SqlSyntaxError(
                f"expected {symbol!r}, found {tok.text or 'end of input'!r}", tok.pos
            )
        return self.advance()

    # statement level

    def parse_statement(self) -> BuildNode:
        tok = self.peek()
        if tok.kind == END:
            raise SqlSyntaxError("empty input", tok.pos)
        if tok.kind == IDENT and tok.upper() in _UNSUPPORTED_STMT:
            raise UnsupportedConstruct(
                f"{_UNSUPPORTED_STMT[tok.upper()]} are not supported", tok.pos
            )
        node, _, _, _ = self.query_expr()
        self.eat_sym(";")
        tail = self.peek()
        if tail.kind != END:
            raise SqlSyntaxError(f"unexpected trailing input {tail.text!r}", tail.pos)
        return node

    def query_expr(self):
        """select [set-op select]* [ORDER BY ...] [LIMIT ...]

        Returns (node, scope, select aliases, select items) of the first arm;
        trailing ORDER BY and LIMIT attach to the top node.
        """
        node, scope, aliases, items = self.select_arm()
        while True:
            if self.at_kw("UNION"):
                self.advance()
                label = "UNION ALL" if self.eat_kw("ALL") else "UNION"
            elif self.at_kw("INTERSECT"):
                self.advance()
                label = "INTERSECT"
            elif self.at_kw("EXCEPT"):
                self.advance()
                label = "EXCEPT"
            else:
                break
            right, _, _, _ = self.select_arm()
            node = BuildNode(CLAUSE, label, [node, right])

        if self.at_kw("ORDER") or self.at_kw("LIMIT"):
            saved_scope, saved_ctx = self.scope, self.alias_ctx
            self.scope, self.alias_ctx = scope, aliases
            try:
                if self.eat_kw("ORDER"):
                    self.expect_kw("BY")
                    node.children.append(self.order_by_clause(aliases, items))
                if self.eat_kw("LIMIT"):
                    node.children.append(self.limit_clause())
            finally:
                self.scope, self.alias_ctx = saved_scope, saved_ctx
        return node, scope, aliases, items

    def select_arm(self):
        if self.at_sym("(") and (
            self.peek(1).upper() == "SELECT" or self.peek(1).text == "("
        ):
            self.advance()
            result = self.query_expr()
            self.expect_sym(")")
            return result
        return self.select_core()

    def select_core(self):
        self.expect_kw("SELECT")
        scope = _Scope(self.schema, self.scope)
        saved_ctx = self.alias_ctx
        self.scope, self.alias_ctx = scope, None

        select = BuildNode(CLAUSE, "SELECT")
        if self.eat_kw("DISTINCT"):
            select.children.append(BuildNode(OPERATOR, "DISTINCT"))
        else:
            self.eat_kw("ALL")

        aliases: dict[str, BuildNode] = {}
        items: list[BuildNode] = []
        while True:
            item, alias = self.select_item()
            items.append(item)
            select.children.append(item)
            if alias:
                aliases[alias] = item
            if not self.eat_sym(","):
                break

        if self.eat_kw("FROM"):
            select.children.append(self.from_clause(scope))

        if self.eat_kw("WHERE"):
            select.children.append(BuildNode(CLAUSE, "WHERE", [self.expr()]))

        if self.eat_kw("GROUP"):
            self.expect_kw("BY")
            self.alias_ctx = aliases
            group = BuildNode(CLAUSE, "GROUP BY")
            while True:
                group.children.append(self.group_item(aliases, items))
                if not self.eat_sym(","):
                    break
            select.children.append(group)
            self.alias_ctx = None

        if self.eat_kw("HAVING"):
            self.alias_ctx = aliases
            select.children.append(BuildNode(CLAUSE, "HAVING", [self.expr()]))
            self.alias_ctx = None

        self.scope, self.alias_ctx = scope.parent, saved_ctx
        return select, scope, aliases, items

    def select_item(self) -> tuple[BuildNode, str | None]:
        if self.at_sym("*"):
            self.advance()
            return BuildNode(OPERAND, "*"), None
        item = self.expr()
        alias = None
        if self.eat_kw("AS"):
            alias = self.identifier_token().value.lower()
        elif self.peek().kind in (IDENT, QIDENT) and self.peek().upper() not in _RESERVED:
            alias = self.identifier_token().value.lower()
        return item, alias

    def from_clause(self, scope: _Scope) -> BuildNode:
        from_node = BuildNode(CLAUSE, "FROM", [self.table_ref(scope)])
        while True:
            if self.eat_sym(","):
                from_node.children.append(
                    BuildNode(OPERATOR, "JOIN", [self.table_ref(scope)])
                )
                continue
            label = self.join_kind()
            if label is None:
                break
            join = BuildNode(OPERATOR, label, [self.table_ref(scope)])
            if self.eat_kw("ON"):
                join.children.append(self.expr())
            elif self.at_kw("USING"):
                raise UnsupportedConstruct(
                    "JOIN ... USING is not supported, spell out the ON condition",
                    self.peek().pos,
                )
            from_node.children.append(join)
        return from_node

    def join_kind(self) -> str | None:
        if self.at_kw("JOIN"):
            self.advance()
            return "JOIN"
        if self.at_kw("INNER"):
            self.advance()
            self.expect_kw("JOIN")
            return "JOIN"
        if self.at_kw("LEFT"):
            self.advance()
            self.eat_kw("OUTER")
            self.expect_kw("JOIN")
            return "LEFT JOIN"
        if self.at_kw("CROSS"):
            self.advance()
            self.expect_kw("JOIN")
            return "CROSS JOIN"
        if self.at_kw("RIGHT", "FULL", "NATURAL"):
            tok = self.peek()
            raise UnsupportedConstruct(
                f"{tok.upper()} joins are not supported", tok.pos
            )
        return None

    def table_ref(self, scope: _Scope) -> BuildNode:
        tok = self.peek()
        if tok.kind == SYMBOL and tok.text == "(":
            raise UnsupportedConstruct("subqueries in FROM are not supported", tok.pos)
        name_tok = self.identifier_token()
        name = name_tok.value.lower()
        if self.schema is not None:
            info = self.schema.find_table(name)
            if info is not None:
                name = info.name.lower()
        alias = None
        if self.eat_kw("AS"):
            alias = self.identifier_token().value.lower()
        elif self.peek().kind in (IDENT, QIDENT) and self.peek().upper() not in _RESERVED:
            alias = self.identifier_token().value.lower()
        scope.add_table(name, alias)
        return BuildNode(OPERAND, name)

    def order_by_clause(self, aliases: dict[str, BuildNode], items: list[BuildNode]) -> BuildNode:
        order = BuildNode(CLAUSE, "ORDER BY")
        while True:
            item = self.sort_key(aliases, items)
            if self.eat_kw("DESC"):
                item = BuildNode(OPERATOR, "DESC", [item])
            else:
                self.eat_kw("ASC")
            if self.at_kw("COLLATE"):
                raise UnsupportedConstruct(
                    "COLLATE is not supported", self.peek().pos
                )
            order.children.append(item)
            if not self.eat_sym(","):
                break
        return order

    def sort_key(self, aliases: dict[str, BuildNode], items: list[BuildNode]) -> BuildNode:
        # Bare ordinals address select items, per the usual ORDER BY shorthand.
        tok = self.peek()
        nxt = self.peek(1)
        standalone = (
            nxt.kind == END
            or (nxt.kind == SYMBOL and nxt.text in (",", ";", ")"))
            or (
                nxt.kind == IDENT
                and nxt.upper()
                in ("ASC", "DESC", "LIMIT", "HAVING", "UNION", "INTERSECT", "EXCEPT")
            )
        )
        if tok.kind == NUMBER and tok.text.isdigit() and standalone:
            pos = int(tok.text)
            if 1 <= pos <= len(items):
                self.advance()
                return _clone(items[pos - 1])
        return self.expr()

    def group_item(self, aliases: dict[str, BuildNode], items: list[BuildNode]) -> BuildNode:
        return self.sort_key(aliases, items)

    def limit_clause(self) -> BuildNode:
        first = self.additive()
        limit = BuildNode(CLAUSE, "LIMIT", [first])
        if self.eat_kw("OFFSET"):
            limit.children.append(BuildNode(OPERATOR, "OFFSET", [self.additive()]))
        elif self.eat_sym(","):
            # LIMIT skip, count
            count = self.additive()
            limit.children = [count, BuildNode(OPERATOR, "OFFSET", [first])]
        return limit

    # expressions, loosest binding first

    def expr(self) -> BuildNode:
        node = self.and_expr()
        while self.at_kw("OR"):
            self.advance()
            node = BuildNode(OPERATOR, "OR", [node, self.and_expr()])
        return node

    def and_expr(self) -> BuildNode:
        node = self.not_expr()
        while self.at_kw("AND"):
            self.advance()
            node = BuildNode(OPERATOR, "AND", [node, self.not_expr()])
        return node

    def not_expr(self) -> BuildNode:
        if self.at_kw("NOT") and not (self.peek(1).upper() == "EXISTS"):
            self.advance()
            return BuildNode(OPERATOR, "NOT", [self.not_expr()])
        return self.predicate()

    def predicate(self) -> BuildNode:
        node = self.additive()
        tok = self.peek()
        if tok.kind == SYMBOL and tok.text in _COMPARISONS:
            self.advance()
            op = _CANON_COMPARISON.get(tok.text, tok.text)
            return BuildNode(OPERATOR, op, [node, self.additive()])
        if self.at_kw("IS"):
            self.advance()
            negated = self.eat_kw("NOT")
            if self.at_kw("NULL"):
                self.advance()
                rhs = BuildNode(OPERAND, "NULL")
            else:
                rhs = self.additive()
            made = BuildNode(OPERATOR, "IS", [node, rhs])
            return BuildNode(OPERATOR, "NOT", [made]) if negated else made
        negated = self.eat_kw("NOT")
        if self.at_kw("LIKE", "GLOB"):
            op = self.advance().upper()
            made = BuildNode(OPERATOR, op, [node, self.additive()])
            return BuildNode(OPERATOR, "NOT", [made]) if negated else made
        if self.at_kw("BETWEEN"):
            self.advance()
            low = self.additive()
            self.expect_kw("AND")
            high = self.additive()
            made = BuildNode(OPERATOR, "BETWEEN", [node, low, high])
            return BuildNode(OPERATOR, "NOT", [made]) if negated else made
        if self.at_kw("IN"):
            self.advance()
            made = self.in_rhs(node)
            return BuildNode(OPERATOR, "NOT", [made]) if negated else made
        if negated:
            raise SqlSyntaxError(
                f"expected LIKE, IN or BETWEEN after NOT, found {self.peek().text!r}",
                self.peek().pos,
            )
        return node

    def in_rhs(self, subject: BuildNode) -> BuildNode:
        self.expect_sym("(")
        made = BuildNode(OPERATOR, "IN", [subject])
        if self.peek().upper() == "SELECT":
            sub, _, _, _ = self.query_expr()
            made.children.append(sub)
        else:
            while True:
                made.children.append(self.expr())
                if not self.eat_sym(","):
                    break
        self.expect_sym(")")
        return made

    def additive(self) -> BuildNode:
        node = self.multiplicative()
        while self.at_sym("+", "-"):
            op = self.advance().text
            node = BuildNode(OPERATOR, op, [node, self.multiplicative()])
        return node

    def multiplicative(self) -> BuildNode:
        node = self.concat()
        while self.at_sym("*", "/", "%"):
            op = self.advance().text
            node = BuildNode(OPERATOR, op, [node, self.concat()])
        return node

    def concat(self) -> BuildNode:
        node = self.unary()
        while self.at_sym("||"):
            self.advance()
            node = BuildNode(OPERATOR, "||", [node, self.unary()])
        return node

    def unary(self) -> BuildNode:
        if self.at_sym("-", "+"):
            op = self.advance().text
            tok = self.peek()
            if tok.kind == NUMBER:
                # Fold signs into the literal so -1 is one operand.
                self.advance()
                label = _number_label(tok.text)
                if op == "-":
                    label = label[1:] if label.startswith("-") else "-" + label
                return BuildNode(OPERAND, label)
            operand = self.unary()
            if op == "+":
                return operand
            return BuildNode(OPERATOR, "-", [operand])
        return self.primary()

    def primary(self) -> BuildNode:
        tok = self.peek()
        if tok.kind == NUMBER:
            self.advance()
            return BuildNode(OPERAND, _number_label(tok.text))
        if tok.kind == STRING:
            self.advance()
            return BuildNode(OPERAND, _string_label(tok.value))
        if tok.kind == SYMBOL and tok.text == "(":
            if self.peek(1).upper() == "SELECT":
                self.advance()
                sub, _, _, _ = self.query_expr()
                self.expect_sym(")")
                return sub
            self.advance()
            inner = self.expr()
            self.expect_sym(")")
            return inner
        if tok.kind == QIDENT:
            return self.identifier_chain()
        if tok.kind != IDENT:
            raise SqlSyntaxError(
                f"unexpected token {tok.text or 'end of input'!r}", tok.pos
            )

        upper = tok.upper()
        if upper == "NULL":
            self.advance()
            return BuildNode(OPERAND, "NULL")
        if upper == "TRUE":
            self.advance()
            return BuildNode(OPERAND, "1")
        if upper == "FALSE":
            self.advance()
            return BuildNode(OPERAND, "0")
        if upper == "CASE":
            return self.case_expr()
        if upper == "CAST":
            return self.cast_expr()
        if upper == "EXISTS":
            self.advance()
            self.expect_sym("(")
            sub, _, _, _ = self.query_expr()
            self.expect_sym(")")
            return BuildNode(OPERATOR, "EXISTS", [sub])
        if upper == "NOT" and self.peek(1).upper() == "EXISTS":
            self.advance()
            return BuildNode(OPERATOR, "NOT", [self.primary()])
        if upper in _RESERVED:
            raise SqlSyntaxError(f"unexpected keyword {tok.text!r}", tok.pos)
        if self.peek(1).kind == SYMBOL and self.peek(1).text == "(":
            return self.function_call()
        return self.identifier_chain()

    def case_expr(self) -> BuildNode:
        self.expect_kw("CASE")
        case = BuildNode(OPERATOR, "CASE")
        if not self.at_kw("WHEN"):
            case.children.append(self.expr())
        while self.eat_kw("WHEN"):
            cond = self.expr()
            self.expect_kw("THEN")
            case.children.append(BuildNode(OPERATOR, "WHEN", [cond, self.expr()]))
        if self.eat_kw("ELSE"):
            case.children.append(BuildNode(OPERATOR, "ELSE", [self.expr()]))
        self.expect_kw("END")
        return case

    def cast_expr(self) -> BuildNode:
        self.expect_kw("CAST")
        self.expect_sym("(")
        value = self.expr()
        self.expect_kw("AS")
        parts = [self.identifier_token().value]
        while self.peek().kind == IDENT:
            parts.append(self.advance().value)
        self.expect_sym(")")
        type_name = " ".join(parts).upper()
        return BuildNode(OPERATOR, "CAST", [value, BuildNode(OPERAND, type_name)])

    def function_call(self) -> BuildNode:
        name_tok = self.advance()
        func = BuildNode(OPERATOR, name_tok.upper())
        self.expect_sym("(")
        if not self.at_sym(")"):
            if self.at_sym("*"):
                self.advance()
                func.children.append(BuildNode(OPERAND, "*"))
            elif self.eat_kw("DISTINCT"):
                func.children.append(BuildNode(OPERATOR, "DISTINCT", [self.expr()]))
            else:
                while True:
                    func.children.append(self.expr())
                    if not self.eat_sym(","):
                        break
        self.expect_sym(")")
        if self.at_kw("OVER"):
            raise UnsupportedConstruct(
                "window functions are not supported", self.peek().pos
            )
        if self.at_kw("FILTER"):
            raise UnsupportedConstruct(
                "FILTER clauses are not supported", self.peek().pos
            )
        return func

    def identifier_chain(self) -> BuildNode:
        parts = [self.identifier_token().value.lower()]
        while self.at_sym("."):
            self.advance()
            if self.at_sym("*"):
                self.advance()
                parts.append("*")
                break
            parts.append(self.identifier_token().value.lower())
        if (
            len(parts) == 1
            and self.alias_ctx is not None
            and parts[0] in self.alias_ctx
        ):
            return _clone(self.alias_ctx[parts[0]])
        node = BuildNode(OPERAND, ".".join(parts))
        self.pending.append((node, tuple(parts), self.scope))
        return node

    def identifier_token(self) -> Token:
        tok = self.peek()
        if tok.kind == QIDENT:
            return self.advance()
        if tok.kind == IDENT and tok.upper() not in _RESERVED:
            return self.advance()
        raise SqlSyntaxError(
            f"expected identifier, found {tok.text or 'end of input'!r}", tok.pos
        )

    def resolve_identifiers(self) -> None:
        for node, parts, scope in self.pending:
            node.label = self.resolved_label(parts, scope)

    def resolved_label(self, parts: tuple[str, ...], scope: _Scope | None) -> str:
        if scope is None or len(parts) > 2:
            return ".".join(parts)
        if len(parts) == 2:
            table = scope.qualifier_table(parts[0])
            return f"{table or parts[0]}.{parts[1]}"
        table = scope.column_table(parts[0])
        return f"{table}.{parts[0]}" if table else parts[0]


def parse(sql: str, schema: SchemaDescriptor | None = None) -> Ast:
    """Parse one SELECT statement into its canonical tree."""
    parser = _Parser(sql, schema)
    root = parser.parse_statement()
    parser.resolve_identifiers()
    return freeze([root], canonical=True)
