"""SQL parsing, scope/alias resolution, and ground-truth link extraction.

Supports a SQLite-flavored subset: SELECT with FROM/JOIN..ON, WHERE,
GROUP BY, HAVING, ORDER BY, LIMIT, UNION/INTERSECT/EXCEPT, scalar/EXISTS/IN
subqueries, aliases, star, aggregates, and ordinary expressions. CTEs,
window functions, and derived tables are rejected with a clear error.
Identifiers are matched case-insensitively and reported lowercase.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import AmbiguousColumn, SqlSyntaxError, UnknownColumn, UnknownTable
from .schema import SchemaDocument

# ---------------------------------------------------------------- lexer

_KEYWORDS = {
    "SELECT", "DISTINCT", "FROM", "JOIN", "INNER", "LEFT", "RIGHT", "OUTER",
    "CROSS", "ON", "AS", "WHERE", "GROUP", "BY", "HAVING", "ORDER", "LIMIT",
    "OFFSET", "UNION", "INTERSECT", "EXCEPT", "ALL", "AND", "OR", "NOT",
    "IN", "EXISTS", "BETWEEN", "LIKE", "IS", "NULL", "ASC", "DESC",
    "WITH", "OVER", "USING", "CASE",
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>\d+(\.\d+)?)
  | (?P<string>'(?:[^']|'')*')
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|<>|!=|=|<|>|\*|/|\+|-|\(|\)|,|\.|%)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Tok:
    kind: str  # KEYWORD, IDENT, NUMBER, STRING, OP, EOF
    text: str
    offset: int


def _lex(text: str) -> list[Tok]:
    toks: list[Tok] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise SqlSyntaxError(f"unexpected character {text[pos]!r}", pos)
        pos = m.end()
        if m.lastgroup == "ws":
            continue
        value = m.group()
        if m.lastgroup == "ident":
            upper = value.upper()
            kind = "KEYWORD" if upper in _KEYWORDS else "IDENT"
            toks.append(Tok(kind, value, m.start()))
        else:
            kinds = {"number": "NUMBER", "string": "STRING", "op": "OP"}
            toks.append(Tok(kinds[m.lastgroup], value, m.start()))
    toks.append(Tok("EOF", "", len(text)))
    return toks


# ---------------------------------------------------------------- AST

@dataclass
class ColumnRef:
    qualifier: str | None  # alias or table name as written
    column: str
    offset: int
    resolved_table: str | None = None  # physical table, lowercase, set by resolver


@dataclass
class Star:
    qualifier: str | None
    offset: int
    # physical tables this star expands over, set by resolver
    expanded_tables: list[str] = field(default_factory=list)


@dataclass
class Literal:
    value: object


@dataclass
class FuncCall:
    name: str
    args: list
    star_arg: bool = False  # COUNT(*)
    distinct: bool = False


@dataclass
class BinaryOp:
    op: str
    left: object
    right: object


@dataclass
class UnaryOp:
    op: str
    operand: object


@dataclass
class Between:
    expr: object
    low: object
    high: object
    negated: bool = False


@dataclass
class IsNull:
    expr: object
    negated: bool = False


@dataclass
class InExpr:
    expr: object
    values: list | None  # literal/expr list, or None when subquery
    subquery: "Select | None" = None
    negated: bool = False


@dataclass
class Exists:
    subquery: "Select"
    negated: bool = False


@dataclass
class Subquery:
    select: "Select"


@dataclass
class SelectItem:
    expr: object
    alias: str | None = None


@dataclass
class TableRef:
    name: str
    alias: str | None
    offset: int


@dataclass
class Join:
    table: TableRef
    kind: str  # JOIN, LEFT JOIN, ...
    on: object | None


@dataclass
class OrderItem:
    expr: object
    direction: str  # ASC / DESC


@dataclass
class Select:
    items: list[SelectItem]
    from_tables: list[TableRef]
    joins: list[Join]
    where: object | None = None
    group_by: list | None = None
    having: object | None = None
    order_by: list[OrderItem] | None = None
    limit: object | None = None
    distinct: bool = False


@dataclass
class SetOp:
    op: str  # UNION, UNION ALL, INTERSECT, EXCEPT
    left: object
    right: object
    order_by: list[OrderItem] | None = None
    limit: object | None = None


SqlAst = Select | SetOp

_AGGREGATES = {"count", "sum", "avg", "min", "max", "total"}


# ---------------------------------------------------------------- parser

class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _lex(text)
        self.i = 0

    def peek(self) -> Tok:
        return self.toks[self.i]

    def next(self) -> Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def error(self, msg: str, tok: Tok | None = None) -> SqlSyntaxError:
        tok = tok or self.peek()
        return SqlSyntaxError(msg, tok.offset)

    def at_kw(self, *words: str) -> bool:
        t = self.peek()
        return t.kind == "KEYWORD" and t.text.upper() in words

    def eat_kw(self, word: str) -> Tok:
        if not self.at_kw(word):
            raise self.error(f"expected {word}")
        return self.next()

    def eat_op(self, op: str) -> Tok:
        t = self.peek()
        if t.kind != "OP" or t.text != op:
            raise self.error(f"expected {op!r}")
        return self.next()

    def try_op(self, op: str) -> bool:
        t = self.peek()
        if t.kind == "OP" and t.text == op:
            self.next()
            return True
        return False

    # ---- entry

    def parse_statement(self) -> SqlAst:
        if self.at_kw("WITH"):
            raise self.error("CTEs (WITH) are not supported")
        node = self.parse_select_core()
        while self.at_kw("UNION", "INTERSECT", "EXCEPT"):
            op_tok = self.next()
            op = op_tok.text.upper()
            if op == "UNION" and self.at_kw("ALL"):
                self.next()
                op = "UNION ALL"
            right = self.parse_select_core()
            node = SetOp(op, node, right)
        # trailing ORDER BY / LIMIT bind to the whole set operation
        if isinstance(node, SetOp):
            if self.at_kw("ORDER"):
                node.order_by = self.parse_order_by()
            if self.at_kw("LIMIT"):
                node.limit = self.parse_limit()
        if self.peek().kind != "EOF":
            raise self.error("unexpected trailing input")
        return node

    def parse_select_core(self) -> Select:
        self.eat_kw("SELECT")
        distinct = False
        if self.at_kw("DISTINCT"):
            self.next()
            distinct = True
        if self.at_kw("ALL"):
            self.next()
        items = [self.parse_select_item()]
        while self.try_op(","):
            items.append(self.parse_select_item())
        from_tables: list[TableRef] = []
        joins: list[Join] = []
        if self.at_kw("FROM"):
            self.next()
            from_tables.append(self.parse_table_ref())
            while True:
                if self.try_op(","):
                    from_tables.append(self.parse_table_ref())
                elif self.at_kw("JOIN", "INNER", "LEFT", "RIGHT", "CROSS"):
                    joins.append(self.parse_join())
                else:
                    break
        sel = Select(items, from_tables, joins, distinct=distinct)
        if self.at_kw("WHERE"):
            self.next()
            sel.where = self.parse_expr()
        if self.at_kw("GROUP"):
            self.next()
            self.eat_kw("BY")
            sel.group_by = [self.parse_expr()]
            while self.try_op(","):
                sel.group_by.append(self.parse_expr())
        if self.at_kw("HAVING"):
            self.next()
            sel.having = self.parse_expr()
        if self.at_kw("ORDER"):
            sel.order_by = self.parse_order_by()
        if self.at_kw("LIMIT"):
            sel.limit = self.parse_limit()
        return sel

    def parse_order_by(self) -> list[OrderItem]:
        self.eat_kw("ORDER")
        self.eat_kw("BY")
        items = [self.parse_order_item()]
        while self.try_op(","):
            items.append(self.parse_order_item())
        return items

    def parse_order_item(self) -> OrderItem:
        expr = self.parse_expr()
        direction = "ASC"
        if self.at_kw("ASC", "DESC"):
            direction = self.next().text.upper()
        return OrderItem(expr, direction)

    def parse_limit(self):
        self.eat_kw("LIMIT")
        expr = self.parse_expr()
        if self.at_kw("OFFSET"):
            self.next()
            self.parse_expr()
        return expr

    def parse_select_item(self) -> SelectItem:
        t = self.peek()
        if t.kind == "OP" and t.text == "*":
            self.next()
            return SelectItem(Star(None, t.offset))
        # qualified star: ident . *
        if (
            t.kind == "IDENT"
            and self.toks[self.i + 1].kind == "OP"
            and self.toks[self.i + 1].text == "."
            and self.toks[self.i + 2].kind == "OP"
            and self.toks[self.i + 2].text == "*"
        ):
            self.next(); self.next(); self.next()
            return SelectItem(Star(t.text, t.offset))
        expr = self.parse_expr()
        alias = None
        if self.at_kw("AS"):
            self.next()
            alias_tok = self.next()
            if alias_tok.kind != "IDENT":
                raise self.error("expected alias name", alias_tok)
            alias = alias_tok.text
        elif self.peek().kind == "IDENT":
            alias = self.next().text
        return SelectItem(expr, alias)

    def parse_table_ref(self) -> TableRef:
        t = self.peek()
        if t.kind == "OP" and t.text == "(":
            raise self.error("derived tables (subqueries in FROM) are not supported")
        if t.kind != "IDENT":
            raise self.error("expected table name")
        self.next()
        alias = None
        if self.at_kw("AS"):
            self.next()
            alias_tok = self.next()
            if alias_tok.kind != "IDENT":
                raise self.error("expected alias name", alias_tok)
            alias = alias_tok.text
        elif self.peek().kind == "IDENT":
            alias = self.next().text
        return TableRef(t.text, alias, t.offset)

    def parse_join(self) -> Join:
        kind_words = []
        while self.at_kw("INNER", "LEFT", "RIGHT", "OUTER", "CROSS"):
            kind_words.append(self.next().text.upper())
        self.eat_kw("JOIN")
        kind = " ".join(kind_words + ["JOIN"])
        table = self.parse_table_ref()
        on = None
        if self.at_kw("USING"):
            raise self.error("USING clauses are not supported")
        if self.at_kw("ON"):
            self.next()
            on = self.parse_expr()
        return Join(table, kind, on)

    # ---- expressions, precedence climbing

    def parse_expr(self):
        return self.parse_or()

    def parse_or(self):
        node = self.parse_and()
        while self.at_kw("OR"):
            self.next()
            node = BinaryOp("OR", node, self.parse_and())
        return node

    def parse_and(self):
        node = self.parse_not()
        while self.at_kw("AND"):
            self.next()
            node = BinaryOp("AND", node, self.parse_not())
        return node

    def parse_not(self):
        if self.at_kw("NOT"):
            self.next()
            return UnaryOp("NOT", self.parse_not())
        return self.parse_comparison()

    def parse_comparison(self):
        node = self.parse_additive()
        while True:
            t = self.peek()
            if t.kind == "OP" and t.text in ("=", "!=", "<>", "<", "<=", ">", ">="):
                self.next()
                node = BinaryOp(t.text, node, self.parse_additive())
                continue
            negated = False
            save = self.i
            if self.at_kw("NOT"):
                self.next()
                negated = True
            if self.at_kw("LIKE"):
                self.next()
                node = BinaryOp("NOT LIKE" if negated else "LIKE", node, self.parse_additive())
                continue
            if self.at_kw("BETWEEN"):
                self.next()
                low = self.parse_additive()
                self.eat_kw("AND")
                high = self.parse_additive()
                node = Between(node, low, high, negated)
                continue
            if self.at_kw("IN"):
                self.next()
                self.eat_op("(")
                if self.at_kw("SELECT"):
                    sub = self.parse_select_core()
                    self.eat_op(")")
                    node = InExpr(node, None, sub, negated)
                else:
                    values = [self.parse_expr()]
                    while self.try_op(","):
                        values.append(self.parse_expr())
                    self.eat_op(")")
                    node = InExpr(node, values, None, negated)
                continue
            if negated:
                self.i = save  # bare NOT belongs to parse_not
                break
            if self.at_kw("IS"):
                self.next()
                neg = False
                if self.at_kw("NOT"):
                    self.next()
                    neg = True
                self.eat_kw("NULL")
                node = IsNull(node, neg)
                continue
            break
        return node

    def parse_additive(self):
        node = self.parse_multiplicative()
        while True:
            t = self.peek()
            if t.kind == "OP" and t.text in ("+", "-"):
                self.next()
                node = BinaryOp(t.text, node, self.parse_multiplicative())
            else:
                break
        return node

    def parse_multiplicative(self):
        node = self.parse_unary()
        while True:
            t = self.peek()
            if t.kind == "OP" and t.text in ("*", "/", "%"):
                self.next()
                node = BinaryOp(t.text, node, self.parse_unary())
            else:
                break
        return node

    def parse_unary(self):
        t = self.peek()
        if t.kind == "OP" and t.text == "-":
            self.next()
            return UnaryOp("-", self.parse_unary())
        return self.parse_primary()

    def parse_primary(self):
        t = self.peek()
        if t.kind == "NUMBER":
            self.next()
            return Literal(float(t.text) if "." in t.text else int(t.text))
        if t.kind == "STRING":
            self.next()
            return Literal(t.text[1:-1].replace("''", "'"))
        if t.kind == "KEYWORD" and t.text.upper() == "NULL":
            self.next()
            return Literal(None)
        if t.kind == "KEYWORD" and t.text.upper() == "EXISTS":
            self.next()
            self.eat_op("(")
            sub = self.parse_select_core()
            self.eat_op(")")
            return Exists(sub)
        if t.kind == "KEYWORD" and t.text.upper() == "CASE":
            raise self.error("CASE expressions are not supported")
        if t.kind == "OP" and t.text == "(":
            self.next()
            if self.at_kw("SELECT"):
                sub = self.parse_select_core()
                self.eat_op(")")
                return Subquery(sub)
            expr = self.parse_expr()
            self.eat_op(")")
            return expr
        if t.kind == "IDENT":
            self.next()
            nxt = self.peek()
            if nxt.kind == "OP" and nxt.text == "(":
                self.next()
                if self.at_kw("OVER"):
                    raise self.error("window functions are not supported")
                distinct = False
                star_arg = False
                args: list = []
                if self.try_op("*"):
                    star_arg = True
                elif not (self.peek().kind == "OP" and self.peek().text == ")"):
                    if self.at_kw("DISTINCT"):
                        self.next()
                        distinct = True
                    args = [self.parse_expr()]
                    while self.try_op(","):
                        args.append(self.parse_expr())
                self.eat_op(")")
                if self.at_kw("OVER"):
                    raise self.error("window functions are not supported")
                return FuncCall(t.text.lower(), args, star_arg, distinct)
            if nxt.kind == "OP" and nxt.text == ".":
                self.next()
                col = self.next()
                if col.kind == "OP" and col.text == "*":
                    return Star(t.text, t.offset)
                if col.kind != "IDENT":
                    raise self.error("expected column name after '.'", col)
                return ColumnRef(t.text, col.text, t.offset)
            return ColumnRef(None, t.text, t.offset)
        raise self.error("expected expression")


def parse_sql(text: str) -> SqlAst:
    """Parse a SELECT statement (dialect subset). Deterministic.

    Raises SqlSyntaxError with the byte offset of the first problem.
    """
    if not text or not text.strip():
        raise SqlSyntaxError("empty statement", 0)
    stripped = text.rstrip()
    if stripped.endswith(";"):
        text = stripped[:-1]
    p = _Parser(text)
    if not p.at_kw("SELECT", "WITH"):
        raise p.error("expected SELECT")
    return p.parse_statement()


# ---------------------------------------------------------------- scopes

class _Scope:
    """Alias/table bindings visible to one SELECT, chained to its parent."""

    def __init__(self, parent: "_Scope | None" = None):
        self.parent = parent
        self.bindings: dict[str, str] = {}  # alias-or-name (lower) -> physical table (lower)

    def bind(self, name: str, table: str, offset: int):
        key = name.lower()
        if key in self.bindings:
            raise SqlSyntaxError(f"duplicate alias {name!r} in scope", offset)
        self.bindings[key] = table.lower()

    def local_tables(self) -> list[str]:
        return list(self.bindings.values())

    def resolve_qualifier(self, qualifier: str) -> str | None:
        scope: _Scope | None = self
        key = qualifier.lower()
        while scope is not None:
            if key in scope.bindings:
                return scope.bindings[key]
            scope = scope.parent
        return None

    def resolve_unqualified(self, column: str, schema: SchemaDocument) -> str:
        """Bind a bare column to the unique defining table, innermost scope
        first; an outer scope is consulted only when no local table matches."""
        scope: _Scope | None = self
        col = column.lower()
        while scope is not None:
            owners = sorted({t for t in scope.local_tables() if schema.has_column(t, col)})
            if len(owners) == 1:
                return owners[0]
            if len(owners) > 1:
                raise AmbiguousColumn(f"column {column!r} is defined by tables {owners}")
            scope = scope.parent
        raise UnknownColumn(f"column {column!r} not found in any in-scope table")


def resolve_scopes(ast: SqlAst, schema: SchemaDocument) -> SqlAst:
    """Annotate every column reference with its physical table and every
    star with the tables it expands over. Mutates and returns the AST."""
    _resolve_node(ast, schema, None)
    return ast


def _resolve_node(node, schema: SchemaDocument, parent: _Scope | None):
    if isinstance(node, SetOp):
        _resolve_node(node.left, schema, parent)
        _resolve_node(node.right, schema, parent)
        return
    assert isinstance(node, Select)
    scope = _Scope(parent)
    for ref in node.from_tables + [j.table for j in node.joins]:
        table = schema.table(ref.name)
        if table is None:
            raise UnknownTable(f"table {ref.name!r} not in schema")
        scope.bind(ref.alias or ref.name, ref.name, ref.offset)
    exprs: list = [it.expr for it in node.items]
    exprs += [j.on for j in node.joins if j.on is not None]
    for attr in (node.where, node.having, node.limit):
        if attr is not None:
            exprs.append(attr)
    if node.group_by:
        exprs += node.group_by
    if node.order_by:
        exprs += [o.expr for o in node.order_by]
    for e in exprs:
        _resolve_expr(e, schema, scope)


def _resolve_expr(node, schema: SchemaDocument, scope: _Scope):
    if isinstance(node, ColumnRef):
        if node.qualifier is not None:
            table = scope.resolve_qualifier(node.qualifier)
            if table is None:
                raise UnknownTable(f"unknown table or alias {node.qualifier!r}")
            if not schema.has_column(table, node.column):
                raise UnknownColumn(f"{table}.{node.column} not in schema")
            node.resolved_table = table
        else:
            node.resolved_table = scope.resolve_unqualified(node.column, schema)
    elif isinstance(node, Star):
        if node.qualifier is not None:
            table = scope.resolve_qualifier(node.qualifier)
            if table is None:
                raise UnknownTable(f"unknown table or alias {node.qualifier!r}")
            node.expanded_tables = [table]
        else:
            node.expanded_tables = scope.local_tables()
    elif isinstance(node, FuncCall):
        for a in node.args:
            _resolve_expr(a, schema, scope)
    elif isinstance(node, BinaryOp):
        _resolve_expr(node.left, schema, scope)
        _resolve_expr(node.right, schema, scope)
    elif isinstance(node, UnaryOp):
        _resolve_expr(node.operand, schema, scope)
    elif isinstance(node, Between):
        _resolve_expr(node.expr, schema, scope)
        _resolve_expr(node.low, schema, scope)
        _resolve_expr(node.high, schema, scope)
    elif isinstance(node, IsNull):
        _resolve_expr(node.expr, schema, scope)
    elif isinstance(node, InExpr):
        _resolve_expr(node.expr, schema, scope)
        if node.values:
            for v in node.values:
                _resolve_expr(v, schema, scope)
        if node.subquery is not None:
            _resolve_node(node.subquery, schema, scope)
    elif isinstance(node, Exists):
        _resolve_node(node.subquery, schema, scope)
    elif isinstance(node, Subquery):
        _resolve_node(node.select, schema, scope)
    elif isinstance(node, Literal):
        pass
    else:
        raise TypeError(f"unexpected expression node {type(node).__name__}")


def extract_links(ast: SqlAst, schema: SchemaDocument) -> set[tuple[str, str]]:
    """Union of all resolved (table, column) references.

    `t.*` and bare `*` contribute every column of the expanded tables;
    COUNT(*) contributes nothing. Requires resolve_scopes to have run.
    """
    links: set[tuple[str, str]] = set()
    _collect(ast, schema, links)
    for table, column in links:
        if not schema.has_column(table, column):
            raise UnknownColumn(f"{table}.{column} leaked past resolution")
    return links


def _collect(node, schema: SchemaDocument, links: set):
    if isinstance(node, SetOp):
        _collect(node.left, schema, links)
        _collect(node.right, schema, links)
        if node.order_by:
            for o in node.order_by:
                _collect_expr(o.expr, schema, links)
        return
    assert isinstance(node, Select)
    for it in node.items:
        _collect_expr(it.expr, schema, links)
    for j in node.joins:
        if j.on is not None:
            _collect_expr(j.on, schema, links)
    for attr in (node.where, node.having, node.limit):
        if attr is not None:
            _collect_expr(attr, schema, links)
    if node.group_by:
        for g in node.group_by:
            _collect_expr(g, schema, links)
    if node.order_by:
        for o in node.order_by:
            _collect_expr(o.expr, schema, links)


def _collect_expr(node, schema: SchemaDocument, links: set):
    if isinstance(node, ColumnRef):
        assert node.resolved_table is not None, "run resolve_scopes first"
        links.add((node.resolved_table, node.column.lower()))
    elif isinstance(node, Star):
        for table in node.expanded_tables:
            t = schema.table(table)
            for col in t.column_names():
                links.add((table, col))
    elif isinstance(node, FuncCall):
        for a in node.args:
            _collect_expr(a, schema, links)
    elif isinstance(node, BinaryOp):
        _collect_expr(node.left, schema, links)
        _collect_expr(node.right, schema, links)
    elif isinstance(node, UnaryOp):
        _collect_expr(node.operand, schema, links)
    elif isinstance(node, Between):
        _collect_expr(node.expr, schema, links)
        _collect_expr(node.low, schema, links)
        _collect_expr(node.high, schema, links)
    elif isinstance(node, IsNull):
        _collect_expr(node.expr, schema, links)
    elif isinstance(node, InExpr):
        _collect_expr(node.expr, schema, links)
        if node.values:
            for v in node.values:
                _collect_expr(v, schema, links)
        if node.subquery is not None:
            _collect(node.subquery, schema, links)
    elif isinstance(node, Exists):
        _collect(node.subquery, schema, links)
    elif isinstance(node, Subquery):
        _collect(node.select, schema, links)


def extract_ground_truth(sql: str, schema: SchemaDocument) -> set[tuple[str, str]]:
    """parse -> resolve -> extract, the full ground-truth pipeline."""
    ast = parse_sql(sql)
    resolve_scopes(ast, schema)
    return extract_links(ast, schema)
