from __future__ import annotations

from dataclasses import dataclass

from .ast import ROOTS, Const, format_expr, iter_attrs
from .parser import PolicySet


@dataclass(frozen=True)
class LintWarning:
    policy_id: str
    code: str  # unreachable | unknown_root | never_populated | shadowed
    message: str

    def to_dict(self) -> dict:
        return {"policy_id": self.policy_id, "code": self.code, "message": self.message}

    def __str__(self) -> str:
        return f"{self.policy_id}: {self.code}: {self.message}"


def lint(ps: PolicySet) -> list[LintWarning]:
    warnings = []
    seen_conditions: dict[str, tuple[str, str]] = {}
    for p in ps.policies:
        if p.condition == Const(False):
            warnings.append(LintWarning(p.id, "unreachable", "condition is literally false"))
        reported = set()
        for attr in iter_attrs(p.condition):
            if attr.root not in ROOTS:
                if attr.root not in reported:
                    warnings.append(LintWarning(
                        p.id, "unknown_root",
                        f"unknown root {attr.root!r}; expected one of {', '.join(ROOTS)}",
                    ))
                    reported.add(attr.root)
            elif (attr.root == "action") == bool(attr.path):
                name = ".".join((attr.root,) + attr.path)
                if name not in reported:
                    warnings.append(LintWarning(
                        p.id, "never_populated", f"{name!r} is never populated by a request",
                    ))
                    reported.add(name)
        text = format_expr(p.condition)
        if text in seen_conditions:
            other_id, other_effect = seen_conditions[text]
            if other_effect != p.effect:
                warnings.append(LintWarning(
                    p.id, "shadowed",
                    f"same condition as {other_id!r} with the opposite effect",
                ))
        else:
            seen_conditions[text] = (p.id, p.effect)
    return warnings
