"""Tokenizer and recursive-descent parser for IPL.

Grammar::

    policyset = { policy } ;
    policy    = ("permit" | "deny") ident "when" expr ";" ;
    expr      = andexpr { "or" andexpr } ;
    andexpr   = unary { "and" unary } ;
    unary     = "not" unary | atom ;
    atom      = "(" expr ")" | "true" | "false" | operand op operand ;
    operand   = attrpath | string | integer | set ;

Comments run from ``#`` to end of line.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from ..errors import DuplicatePolicyId, ParseError
from .ast import COMPARISON_OPS, And, Attr, Compare, Const, Int, Not, Or, Policy, Str, StrSet

KEYWORDS = frozenset({"permit", "deny", "when", "and", "or", "not", "true", "false", "in", "matches"})

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+|\#[^\n]*)
  | (?P<word>[A-Za-z_][A-Za-z0-9_\-]*)
  | (?P<int>-?[0-9]+)
  | (?P<op>==|!=|<=|>=|<|>)
  | (?P<punct>[()\[\],;.])
  | (?P<string>")
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # word | int | op | punct | string | eof
    value: str
    line: int
    column: int

    def describe(self) -> str:
        if self.kind == "eof":
            return "end of input"
        if self.kind == "string":
            return "string literal"
        return repr(self.value)


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    pos, line, line_start = 0, 1, 0
    n = len(source)
    while pos < n:
        col = pos - line_start + 1
        m = _TOKEN.match(source, pos)
        if not m:
            raise ParseError(f"unexpected character {source[pos]!r}", line, col)
        kind = m.lastgroup
        if kind == "string":
            value, pos = _read_string(source, pos + 1, line, col)
            tokens.append(Token("string", value, line, col))
            continue
        text = m.group()
        if kind == "ws":
            newlines = text.count("\n")
            if newlines:
                line += newlines
                line_start = pos + text.rindex("\n") + 1
        else:
            tokens.append(Token(kind, text, line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


def _read_string(source: str, pos: int, line: int, col: int) -> tuple[str, int]:
    quote_at = pos - 1
    out = []
    while True:
        if pos >= len(source) or source[pos] == "\n":
            raise ParseError("unterminated string literal", line, col)
        ch = source[pos]
        if ch == '"':
            return "".join(out), pos + 1
        if ch == "\\":
            nxt = source[pos + 1] if pos + 1 < len(source) else ""
            if nxt not in ('"', "\\"):
                raise ParseError(f"invalid escape \\{nxt}", line, col + pos - quote_at)
            out.append(nxt)
            pos += 2
            continue
        out.append(ch)
        pos += 1


class _Parser:
    def __init__(self, source: str):
        self.tokens = tokenize(source)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def advance(self) -> Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def error(self, expected: str, tok: Token | None = None):
        tok = tok or self.tok
        raise ParseError(f"expected {expected}, found {tok.describe()}", tok.line, tok.column)

    def at_word(self, *words: str) -> bool:
        return self.tok.kind == "word" and self.tok.value in words

    def at_punct(self, p: str) -> bool:
        return self.tok.kind == "punct" and self.tok.value == p

    def expect_punct(self, p: str) -> Token:
        if not self.at_punct(p):
            self.error(repr(p))
        return self.advance()

    def policies(self) -> list[Policy]:
        out = []
        while self.tok.kind != "eof":
            out.append(self.policy())
        return out

    def policy(self) -> Policy:
        if not self.at_word("permit", "deny"):
            self.error("'permit' or 'deny'")
        effect = self.advance().value
        if self.tok.kind != "word" or self.tok.value in KEYWORDS:
            self.error("policy identifier")
        pid = self.advance().value
        if not self.at_word("when"):
            self.error("'when'")
        self.advance()
        cond = self.expr()
        self.expect_punct(";")
        return Policy(pid, effect, cond)

    def expr(self):
        items = [self.and_expr()]
        while self.at_word("or"):
            self.advance()
            items.append(self.and_expr())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def and_expr(self):
        items = [self.unary()]
        while self.at_word("and"):
            self.advance()
            items.append(self.unary())
        return items[0] if len(items) == 1 else And(tuple(items))

    def unary(self):
        if self.at_word("not"):
            self.advance()
            return Not(self.unary())
        return self.atom()

    def atom(self):
        if self.at_punct("("):
            self.advance()
            e = self.expr()
            self.expect_punct(")")
            return e
        if self.at_word("true", "false"):
            return Const(self.advance().value == "true")
        start = self.tok
        left = self.operand()
        if isinstance(left, StrSet):
            raise ParseError("set literal is only allowed on the right of 'in'", start.line, start.column)
        if self.tok.kind == "op" or self.at_word("in", "matches"):
            op = self.advance().value
        else:
            self.error("comparison operator")
        assert op in COMPARISON_OPS
        rstart = self.tok
        right = self.operand()
        if isinstance(right, StrSet) and op != "in":
            raise ParseError("set literal is only allowed on the right of 'in'", rstart.line, rstart.column)
        return Compare(op, left, right)

    def operand(self):
        t = self.tok
        if t.kind == "string":
            self.advance()
            return Str(t.value)
        if t.kind == "int":
            self.advance()
            return Int(int(t.value))
        if t.kind == "punct" and t.value == "[":
            return self.set_literal()
        if t.kind == "word" and t.value not in KEYWORDS:
            self.advance()
            path = []
            while self.at_punct("."):
                self.advance()
                if self.tok.kind != "word":
                    self.error("attribute name")
                path.append(self.advance().value)
            return Attr(t.value, tuple(path))
        self.error("expression")

    def set_literal(self) -> StrSet:
        self.expect_punct("[")
        values = []
        if not self.at_punct("]"):
            while True:
                if self.tok.kind != "string":
                    self.error("string literal")
                values.append(self.advance().value)
                if self.at_punct(","):
                    self.advance()
                    continue
                break
        self.expect_punct("]")
        return StrSet(tuple(values))


@dataclass(frozen=True)
class PolicySet:
    """Ordered, immutable set of policies addressed by a content digest."""

    policies: tuple[Policy, ...]
    version: str

    @classmethod
    def from_policies(cls, policies: Iterable[Policy]) -> "PolicySet":
        policies = tuple(policies)
        seen = set()
        for p in policies:
            if p.id in seen:
                raise DuplicatePolicyId(f"duplicate policy id {p.id!r}", policy_id=p.id)
            seen.add(p.id)
        digest = hashlib.sha256(_canonical_text(policies).encode("utf-8")).hexdigest()
        return cls(policies, digest)

    @property
    def source(self) -> str:
        return _canonical_text(self.policies)

    def __len__(self) -> int:
        return len(self.policies)


def _canonical_text(policies: Iterable[Policy]) -> str:
    return "".join(p.to_source() + "\n" for p in policies)


EMPTY_POLICY_SET = PolicySet.from_policies(())


def parse_policies(source: str) -> list[Policy]:
    return _Parser(source).policies()


def parse_policy_set(source: str) -> PolicySet:
    return PolicySet.from_policies(parse_policies(source))


def load_policy_dir(directory: str | Path) -> PolicySet:
    """Parse every ``*.ipl`` file in ``directory`` (sorted by name) into one set."""
    policies: list[Policy] = []
    for path in sorted(Path(directory).glob("*.ipl")):
        try:
            policies.extend(parse_policies(path.read_text(encoding="utf-8")))
        except ParseError as exc:
            raise ParseError(f"{path.name}: {exc.reason}", exc.line, exc.column) from exc
    return PolicySet.from_policies(policies)
