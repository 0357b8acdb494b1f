"""SQL-flavored filter language over the groups knowledge graph.

Grammar (keywords case-insensitive):

    query      := SELECT '*' FROM GroupsKnowledgeBase WHERE expr
                | expr
    expr       := and_expr (OR and_expr)*
    and_expr   := not_expr (AND not_expr)*
    not_expr   := NOT not_expr | '(' expr ')' | predicate
    predicate  := FIELD '==' STRING
                | FIELD IN '(' STRING (',' STRING)* ')'

`IN` desugars to a chain of OR-ed equalities. Precedence: NOT > AND > OR.
Country/region/sector/motivation values are canonicalized through the
gazetteer at parse time, so "Russia" and "Russian Federation" are the same
query.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

from .enrichment import Gazetteer
from .graph_store import GroupView, KnowledgeGraph, group_view
from .stix_core import KbError, LocationObject

KEYWORDS = ("SELECT", "FROM", "WHERE", "AND", "OR", "NOT", "IN")

FIELDS = (
    "OriginatesFrom",
    "TargetCountry",
    "TargetRegion",
    "TargetSector",
    "Motivation",
    "UsesTechnique",
    "UsesSoftware",
    "Name",
)
_FIELD_LOOKUP = {f.casefold(): f for f in FIELDS}

_TECHNIQUE_VALUE_RE = re.compile(r"^T\d{4}(\.\d{3})?$")
_SOFTWARE_VALUE_RE = re.compile(r"^S\d{4}$")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


class QueryError(KbError):
    def __init__(self, message: str, offset: int):
        super().__init__(message)
        self.offset = offset


class UnterminatedString(QueryError):
    def __init__(self, offset: int):
        super().__init__(f"unterminated string literal at offset {offset}", offset)


class IllegalCharacter(QueryError):
    def __init__(self, offset: int, char: str):
        super().__init__(f"illegal character {char!r} at offset {offset}", offset)
        self.char = char


class QuerySyntaxError(QueryError):
    def __init__(self, offset: int, expected: str, found: str):
        super().__init__(
            f"expected {expected}, found {found} at offset {offset}", offset
        )
        self.expected = expected
        self.found = found


class UnknownField(QueryError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown field {name!r} at offset {offset}", offset)
        self.name = name


@dataclass(frozen=True)
class Token:
    kind: str  # keyword, identifier, string_literal, operator, lparen, rparen, comma
    text: str
    offset: int


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c == "(":
            tokens.append(Token("lparen", "(", i))
            i += 1
        elif c == ")":
            tokens.append(Token("rparen", ")", i))
            i += 1
        elif c == ",":
            tokens.append(Token("comma", ",", i))
            i += 1
        elif c == "*":
            tokens.append(Token("operator", "*", i))
            i += 1
        elif c == "=":
            if text[i : i + 2] == "==":
                tokens.append(Token("operator", "==", i))
                i += 2
            else:
                raise IllegalCharacter(i, c)
        elif c == '"':
            start = i
            i += 1
            chars: list[str] = []
            while True:
                if i >= n:
                    raise UnterminatedString(start)
                c = text[i]
                if c == "\\":
                    if i + 1 >= n:
                        raise UnterminatedString(start)
                    chars.append(text[i + 1])
                    i += 2
                elif c == '"':
                    i += 1
                    break
                else:
                    chars.append(c)
                    i += 1
            tokens.append(Token("string_literal", "".join(chars), start))
        else:
            m = _IDENT_RE.match(text, i)
            if not m:
                raise IllegalCharacter(i, c)
            word = m.group(0)
            if word.upper() in KEYWORDS:
                tokens.append(Token("keyword", word.upper(), i))
            else:
                tokens.append(Token("identifier", word, i))
            i = m.end()
    return tokens


@dataclass(frozen=True)
class Predicate:
    field: str
    op: str  # always "eq"; IN is desugared at parse time
    value: str
    canonical: str | None  # None when the gazetteer cannot resolve the value


@dataclass(frozen=True)
class And:
    left: "QueryAst"
    right: "QueryAst"


@dataclass(frozen=True)
class Or:
    left: "QueryAst"
    right: "QueryAst"


@dataclass(frozen=True)
class Not:
    expr: "QueryAst"


QueryAst = Union[Predicate, And, Or, Not]


def _canonical_value(field: str, value: str, gazetteer: Gazetteer) -> str | None:
    if field == "OriginatesFrom" or field == "TargetCountry":
        return gazetteer.country(value)
    if field == "TargetRegion":
        return gazetteer.region(value)
    if field == "TargetSector":
        return gazetteer.sector(value)
    if field == "Motivation":
        return gazetteer.motivation(value)
    if field == "UsesTechnique":
        v = value.strip().upper()
        return v if _TECHNIQUE_VALUE_RE.match(v) else None
    if field == "UsesSoftware":
        v = value.strip().upper()
        return v if _SOFTWARE_VALUE_RE.match(v) else None
    return value  # Name: no canonicalization


class _Parser:
    def __init__(self, tokens: list[Token], gazetteer: Gazetteer):
        self.tokens = tokens
        self.gazetteer = gazetteer
        self.pos = 0

    def _eof_offset(self) -> int:
        if not self.tokens:
            return 0
        last = self.tokens[-1]
        return last.offset + len(last.text)

    def _peek(self) -> Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def _next(self, expected: str) -> Token:
        tok = self._peek()
        if tok is None:
            raise QuerySyntaxError(self._eof_offset(), expected, "end of input")
        self.pos += 1
        return tok

    def _expect(self, kind: str, text: str | None = None) -> Token:
        label = text if text is not None else kind
        tok = self._next(label)
        if tok.kind != kind or (text is not None and tok.text != text):
            raise QuerySyntaxError(tok.offset, label, repr(tok.text))
        return tok

    def parse(self) -> QueryAst:
        tok = self._peek()
        if tok is None:
            raise QuerySyntaxError(0, "a query expression", "end of input")
        if tok.kind == "keyword" and tok.text == "SELECT":
            self.pos += 1
            self._expect("operator", "*")
            self._expect("keyword", "FROM")
            table = self._next("GroupsKnowledgeBase")
            if (
                table.kind != "identifier"
                or table.text.casefold() != "groupsknowledgebase"
            ):
                raise QuerySyntaxError(
                    table.offset, "GroupsKnowledgeBase", repr(table.text)
                )
            self._expect("keyword", "WHERE")
        elif tok.kind == "keyword" and tok.text == "WHERE":
            self.pos += 1
        expr = self._or_expr()
        trailing = self._peek()
        if trailing is not None:
            raise QuerySyntaxError(trailing.offset, "end of input", repr(trailing.text))
        return expr

    def _or_expr(self) -> QueryAst:
        node = self._and_expr()
        while (tok := self._peek()) and tok.kind == "keyword" and tok.text == "OR":
            self.pos += 1
            node = Or(node, self._and_expr())
        return node

    def _and_expr(self) -> QueryAst:
        node = self._not_expr()
        while (tok := self._peek()) and tok.kind == "keyword" and tok.text == "AND":
            self.pos += 1
            node = And(node, self._not_expr())
        return node

    def _not_expr(self) -> QueryAst:
        tok = self._peek()
        if tok is not None and tok.kind == "keyword" and tok.text == "NOT":
            self.pos += 1
            return Not(self._not_expr())
        if tok is not None and tok.kind == "lparen":
            self.pos += 1
            expr = self._or_expr()
            self._expect("rparen")
            return expr
        return self._predicate()

    def _make_predicate(self, field: str, value: str) -> Predicate:
        return Predicate(
            field, "eq", value, _canonical_value(field, value, self.gazetteer)
        )

    def _predicate(self) -> QueryAst:
        tok = self._next("a field name")
        if tok.kind != "identifier":
            raise QuerySyntaxError(tok.offset, "a field name", repr(tok.text))
        field = _FIELD_LOOKUP.get(tok.text.casefold())
        if field is None:
            raise UnknownField(tok.text, tok.offset)
        op = self._peek()
        if op is not None and op.kind == "keyword" and op.text == "IN":
            self.pos += 1
            self._expect("lparen")
            values = [self._expect("string_literal", None)]
            while (tok := self._peek()) and tok.kind == "comma":
                self.pos += 1
                values.append(self._expect("string_literal", None))
            self._expect("rparen")
            node: QueryAst = self._make_predicate(field, values[0].text)
            for v in values[1:]:
                node = Or(node, self._make_predicate(field, v.text))
            return node
        self._expect("operator", "==")
        value = self._next("a string literal")
        if value.kind != "string_literal":
            raise QuerySyntaxError(value.offset, "a string literal", repr(value.text))
        return self._make_predicate(field, value.text)


def parse_query(tokens: list[Token], gazetteer: Gazetteer) -> QueryAst:
    return _Parser(tokens, gazetteer).parse()


def compile_query(text: str, gazetteer: Gazetteer) -> QueryAst:
    return parse_query(tokenize(text), gazetteer)


@dataclass(frozen=True)
class UnknownValue:
    field: str
    value: str

    def __str__(self) -> str:
        return f"unknown value for {self.field}: {self.value!r}"


@dataclass(frozen=True)
class QueryResult:
    ids: tuple[str, ...]
    names: tuple[str, ...]
    attack_ids: tuple[str, ...]
    warnings: tuple[UnknownValue, ...]


def _predicate_matches(
    pred: Predicate,
    view: GroupView,
    origin_countries: set[str],
    expand_regions: bool,
    gazetteer: Gazetteer | None,
) -> bool:
    value = pred.canonical
    if pred.field == "OriginatesFrom":
        return value in origin_countries
    if pred.field == "TargetCountry":
        if value in view.target_countries:
            return True
        if expand_regions and gazetteer is not None:
            return any(
                value in gazetteer.countries_in_region(region)
                for region in view.target_regions
            )
        return False
    if pred.field == "TargetRegion":
        return value in view.target_regions
    if pred.field == "TargetSector":
        return value in view.target_sectors
    if pred.field == "Motivation":
        return value == view.primary_motivation or value in view.secondary_motivations
    if pred.field == "UsesTechnique":
        return value in view.techniques
    if pred.field == "UsesSoftware":
        return value in view.software
    if pred.field == "Name":
        needle = (value or "").casefold()
        if needle == view.name.casefold():
            return True
        return any(needle == alias.casefold() for alias in view.aliases)
    raise ValueError(f"unhandled field {pred.field}")


def evaluate(
    ast: QueryAst,
    graph: KnowledgeGraph,
    expand_regions: bool = False,
    gazetteer: Gazetteer | None = None,
) -> QueryResult:
    """Evaluate a query with set semantics over all groups in the graph.

    AND is intersection, OR union, NOT complement within the graph's
    (non-revoked) intrusion sets. Unknown canonical values match nothing and
    are reported as warnings rather than errors.
    """
    views = {gid: group_view(graph, gid) for gid in graph.group_ids()}
    origins: dict[str, set[str]] = {}
    for gid in views:
        countries: set[str] = set()
        for tgt in graph.out_edges.get((gid, "originates-from"), ()):
            obj = graph.objects[tgt]
            if isinstance(obj, LocationObject) and obj.country is not None:
                countries.add(obj.country)
        origins[gid] = countries
    universe = set(views)
    warnings: list[UnknownValue] = []
    seen_warnings: set[tuple[str, str]] = set()

    def eval_node(node: QueryAst) -> set[str]:
        if isinstance(node, Predicate):
            if node.canonical is None:
                key = (node.field, node.value)
                if key not in seen_warnings:
                    seen_warnings.add(key)
                    warnings.append(UnknownValue(node.field, node.value))
                return set()
            return {
                gid
                for gid, view in views.items()
                if _predicate_matches(
                    node, view, origins[gid], expand_regions, gazetteer
                )
            }
        if isinstance(node, And):
            return eval_node(node.left) & eval_node(node.right)
        if isinstance(node, Or):
            return eval_node(node.left) | eval_node(node.right)
        if isinstance(node, Not):
            return universe - eval_node(node.expr)
        raise ValueError(f"unhandled node {node!r}")

    hits = eval_node(ast)
    ordered = sorted(hits, key=lambda gid: (views[gid].attack_id or "~", gid))
    return QueryResult(
        ids=tuple(ordered),
        names=tuple(views[gid].name for gid in ordered),
        attack_ids=tuple(views[gid].attack_id or "" for gid in ordered),
        warnings=tuple(warnings),
    )
