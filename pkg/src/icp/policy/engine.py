"""Deny-overrides evaluation of a PolicySet against a request."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Mapping

from ..errors import MalformedRequest
from .ast import And, Attr, Compare, Const, Expr, Int, Not, Or, Str, StrSet
from .parser import PolicySet

PERMIT = "permit"
DENY = "deny"

_INT = re.compile(r"^-?[0-9]+$")


def string_map(name: str, value: Any) -> dict[str, str]:
    if value is None:
        return {}
    if not isinstance(value, Mapping):
        raise MalformedRequest(f"{name} must be an object of strings")
    out = {}
    for k, v in value.items():
        if isinstance(v, bool) or not isinstance(v, (str, int)):
            raise MalformedRequest(f"{name}.{k} must be a string")
        out[str(k)] = str(v)
    return out


@dataclass(frozen=True)
class RequestContext:
    subject: Mapping[str, str]
    action: str
    resource: Mapping[str, str]
    context: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.action, str) or not self.action:
            raise MalformedRequest("action must be a non-empty string")
        if not self.resource.get("id"):
            raise MalformedRequest("resource.id is required")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RequestContext":
        if not isinstance(data, Mapping):
            raise MalformedRequest("request must be an object")
        resource = data.get("resource")
        if isinstance(resource, str):
            resource = {"id": resource}
        return cls(
            subject=string_map("subject", data.get("subject")),
            action=data.get("action", ""),
            resource=string_map("resource", resource),
            context=string_map("context", data.get("context")),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "subject": dict(self.subject),
            "action": self.action,
            "resource": dict(self.resource),
            "context": dict(self.context),
        }


@dataclass(frozen=True)
class TraceEntry:
    policy_id: str
    matched: bool
    effect: str

    def to_dict(self) -> dict[str, Any]:
        return {"policy_id": self.policy_id, "matched": self.matched, "effect": self.effect}


@dataclass(frozen=True)
class Decision:
    outcome: str
    trace: tuple[TraceEntry, ...]
    policy_version: str
    reason: str | None = None

    @property
    def permitted(self) -> bool:
        return self.outcome == PERMIT

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "outcome": self.outcome,
            "trace": [t.to_dict() for t in self.trace],
            "policy_version": self.policy_version,
        }
        if self.reason is not None:
            d["reason"] = self.reason
        return d

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Decision":
        return cls(
            data["outcome"],
            tuple(TraceEntry(t["policy_id"], t["matched"], t["effect"]) for t in data.get("trace", ())),
            data["policy_version"],
            data.get("reason"),
        )


def _resolve(operand, req: RequestContext):
    if isinstance(operand, Str):
        return operand.value
    if isinstance(operand, Int):
        return str(operand.value)
    if isinstance(operand, StrSet):
        return operand.values
    if isinstance(operand, Attr):
        if operand.root == "action":
            return None if operand.path else req.action
        if not operand.path:
            return None
        source = {"subject": req.subject, "resource": req.resource, "context": req.context}.get(operand.root)
        return None if source is None else source.get(operand.key)
    return None


def _order(a: str, b: str) -> int:
    if _INT.match(a) and _INT.match(b):
        x, y = int(a), int(b)
    else:
        x, y = a, b
    return (x > y) - (x < y)


@lru_cache(maxsize=1024)
def _glob(pattern: str) -> re.Pattern:
    parts = []
    for ch in pattern:
        if ch == "*":
            parts.append(".*")
        elif ch == "?":
            parts.append(".")
        else:
            parts.append(re.escape(ch))
    return re.compile("".join(parts), re.DOTALL)


def compare(op: str, left, right) -> bool:
    """Apply a comparison to resolved values. A missing side (``None``) never matches."""
    if left is None or right is None or isinstance(left, tuple):
        return False
    if op == "in":
        members = right if isinstance(right, tuple) else [m.strip() for m in right.split(",")]
        return any(_order(left, m) == 0 for m in members)
    if isinstance(right, tuple):
        return False
    if op == "matches":
        return _glob(right).fullmatch(left) is not None
    c = _order(left, right)
    if op == "==":
        return c == 0
    if op == "!=":
        return c != 0
    if op == "<":
        return c < 0
    if op == "<=":
        return c <= 0
    if op == ">":
        return c > 0
    if op == ">=":
        return c >= 0
    raise ValueError(f"unknown operator {op!r}")


def eval_condition(e: Expr, req: RequestContext) -> bool:
    if isinstance(e, Compare):
        return compare(e.op, _resolve(e.left, req), _resolve(e.right, req))
    if isinstance(e, And):
        return all(eval_condition(x, req) for x in e.operands)
    if isinstance(e, Or):
        return any(eval_condition(x, req) for x in e.operands)
    if isinstance(e, Not):
        return not eval_condition(e.operand, req)
    if isinstance(e, Const):
        return e.value
    raise TypeError(f"not an expression: {e!r}")


def evaluate(ps: PolicySet, req: RequestContext) -> Decision:
    """Evaluate every policy; deny if any deny matched or nothing permitted."""
    trace = []
    permit = deny = False
    for p in ps.policies:
        matched = eval_condition(p.condition, req)
        trace.append(TraceEntry(p.id, matched, p.effect))
        if matched:
            if p.effect == DENY:
                deny = True
            else:
                permit = True
    outcome = PERMIT if permit and not deny else DENY
    return Decision(outcome, tuple(trace), ps.version)
