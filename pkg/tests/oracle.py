"""Independent reference evaluator for IPL used as a test oracle.

Policies are generated as plain tuples, rendered to IPL text for the real
parser, and evaluated here directly from the tuples. Nothing in this module
imports the production engine.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass

INT = re.compile(r"-?[0-9]+")

ATTRS = ("subject.kind", "subject.team", "action", "resource.id", "resource.env",
         "context.environment", "context.count", "context.tags")
VALUES = ("a", "b", "ab", "a*", "?b", "10", "9", "-3", "010", "staging", "prod", "a,b", "")
OPS = ("==", "!=", "<", "<=", ">", ">=", "in", "matches")


def glob_match(pattern: str, text: str) -> bool:
    """Brute-force recursive glob with ``*`` and ``?`` only."""
    if not pattern:
        return not text
    head, rest = pattern[0], pattern[1:]
    if head == "*":
        return any(glob_match(rest, text[i:]) for i in range(len(text) + 1))
    if not text:
        return False
    if head == "?" or head == text[0]:
        return glob_match(rest, text[1:])
    return False


def _cmp(a: str, b: str) -> int:
    if INT.fullmatch(a) and INT.fullmatch(b):
        a, b = int(a), int(b)  # type: ignore[assignment]
    return -1 if a < b else (1 if a > b else 0)


def atom_truth(op: str, left, right) -> bool:
    if left is None or right is None:
        return False
    if isinstance(left, list):
        return False
    if op == "in":
        members = right if isinstance(right, list) else [m.strip() for m in right.split(",")]
        return any(_cmp(left, m) == 0 for m in members)
    if isinstance(right, list):
        return False
    if op == "matches":
        return glob_match(right, left)
    c = _cmp(left, right)
    return {"==": c == 0, "!=": c != 0, "<": c < 0, "<=": c <= 0, ">": c > 0, ">=": c >= 0}[op]


def lookup(operand, request: dict):
    kind, value = operand
    if kind in ("lit", "int"):
        return value
    if kind == "set":
        return list(value)
    if value == "action":
        return request["action"]
    root, key = value.split(".", 1)
    return request[root].get(key)


def truth(expr, request: dict) -> bool:
    tag = expr[0]
    if tag == "const":
        return expr[1]
    if tag == "not":
        return not truth(expr[1], request)
    if tag == "and":
        return all(truth(e, request) for e in expr[1])
    if tag == "or":
        return any(truth(e, request) for e in expr[1])
    _, op, left, right = expr
    return atom_truth(op, lookup(left, request), lookup(right, request))


def outcome(policies, request: dict) -> tuple[str, list[bool]]:
    matched = [truth(cond, request) for _, _, cond in policies]
    permits = {pid for (pid, eff, _), m in zip(policies, matched) if m and eff == "permit"}
    denies = {pid for (pid, eff, _), m in zip(policies, matched) if m and eff == "deny"}
    return ("permit" if permits and not denies else "deny"), matched


# rendering


def _quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def render_operand(operand) -> str:
    kind, value = operand
    if kind == "attr":
        return value
    if kind == "set":
        return "[" + ", ".join(_quote(v) for v in value) + "]"
    if kind == "int":
        return str(int(value))
    return _quote(value)


def render(expr) -> str:
    tag = expr[0]
    if tag == "const":
        return "true" if expr[1] else "false"
    if tag == "not":
        return f"not ({render(expr[1])})"
    if tag in ("and", "or"):
        return "(" + f" {tag} ".join(render(e) for e in expr[1]) + ")"
    _, op, left, right = expr
    return f"{render_operand(left)} {op} {render_operand(right)}"


def render_policies(policies) -> str:
    return "".join(f"{eff} {pid} when {render(cond)};\n" for pid, eff, cond in policies)


# generation


@dataclass
class Generator:
    rng: random.Random

    def operand(self):
        r = self.rng.random()
        if r < 0.55:
            return ("attr", self.rng.choice(ATTRS))
        if r < 0.7:
            n = self.rng.randint(-20, 20)
            return ("int", str(n))
        return ("lit", self.rng.choice(VALUES))

    def atom(self):
        op = self.rng.choice(OPS)
        left = ("attr", self.rng.choice(ATTRS)) if self.rng.random() < 0.85 else self.operand()
        if op == "in" and self.rng.random() < 0.6:
            right = ("set", tuple(self.rng.sample(VALUES, self.rng.randint(0, 3))))
        else:
            right = self.operand()
        return ("cmp", op, left, right)

    def expr(self, depth: int = 0):
        r = self.rng.random()
        if depth >= 2 or r < 0.45:
            return ("const", self.rng.random() < 0.5) if self.rng.random() < 0.05 else self.atom()
        if r < 0.6:
            return ("not", self.expr(depth + 1))
        tag = "and" if r < 0.8 else "or"
        return (tag, [self.expr(depth + 1) for _ in range(self.rng.randint(2, 3))])

    def policies(self, max_count: int = 8):
        n = self.rng.randint(0, max_count)
        return [(f"p{i}", self.rng.choice(("permit", "deny")), self.expr()) for i in range(n)]

    def request(self) -> dict:
        def maybe(keys):
            return {k: self.rng.choice(VALUES) for k in keys if self.rng.random() < 0.8}

        return {
            "subject": maybe(["kind", "team"]),
            "action": self.rng.choice(["a", "deploy", "10", "prod"]),
            "resource": {"id": self.rng.choice(VALUES[:-1]), **maybe(["env"])},
            "context": maybe(["environment", "count", "tags"]),
        }
