"""AST node types for IPL and the canonical printer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

ROOTS = ("subject", "action", "resource", "context")
COMPARISON_OPS = ("==", "!=", "<", "<=", ">", ">=", "in", "matches")


@dataclass(frozen=True)
class Attr:
    root: str
    path: tuple[str, ...] = ()

    @property
    def key(self) -> str:
        return ".".join(self.path)


@dataclass(frozen=True)
class Str:
    value: str


@dataclass(frozen=True)
class Int:
    value: int


@dataclass(frozen=True)
class StrSet:
    values: tuple[str, ...]


Operand = Union[Attr, Str, Int, StrSet]


@dataclass(frozen=True)
class Const:
    value: bool


@dataclass(frozen=True)
class Compare:
    op: str
    left: Operand
    right: Operand


@dataclass(frozen=True)
class Not:
    operand: "Expr"


@dataclass(frozen=True)
class And:
    operands: tuple["Expr", ...]


@dataclass(frozen=True)
class Or:
    operands: tuple["Expr", ...]


Expr = Union[Const, Compare, Not, And, Or]


@dataclass(frozen=True)
class Policy:
    id: str
    effect: str  # "permit" | "deny"
    condition: Expr

    def to_source(self) -> str:
        return f"{self.effect} {self.id} when {format_expr(self.condition)};"


def _quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def format_operand(op: Operand) -> str:
    if isinstance(op, Attr):
        return ".".join((op.root,) + op.path)
    if isinstance(op, Str):
        return _quote(op.value)
    if isinstance(op, Int):
        return str(op.value)
    return "[" + ", ".join(_quote(v) for v in op.values) + "]"


def format_expr(e: Expr) -> str:
    """Print with the minimum parentheses that reproduce the same tree on re-parse."""
    if isinstance(e, Const):
        return "true" if e.value else "false"
    if isinstance(e, Compare):
        return f"{format_operand(e.left)} {e.op} {format_operand(e.right)}"
    if isinstance(e, Not):
        inner = format_expr(e.operand)
        return f"not ({inner})" if isinstance(e.operand, (And, Or)) else f"not {inner}"
    if isinstance(e, And):
        return " and ".join(
            f"({format_expr(x)})" if isinstance(x, (And, Or)) else format_expr(x) for x in e.operands
        )
    return " or ".join(f"({format_expr(x)})" if isinstance(x, Or) else format_expr(x) for x in e.operands)


def iter_attrs(e: Expr):
    if isinstance(e, Compare):
        for side in (e.left, e.right):
            if isinstance(side, Attr):
                yield side
    elif isinstance(e, Not):
        yield from iter_attrs(e.operand)
    elif isinstance(e, (And, Or)):
        for x in e.operands:
            yield from iter_attrs(x)
