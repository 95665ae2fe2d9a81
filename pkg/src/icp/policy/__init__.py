"""IPL: a small deny-overrides ABAC policy language."""

from .ast import Policy, format_expr
from .engine import DENY, PERMIT, Decision, RequestContext, TraceEntry, evaluate
from .lint import LintWarning, lint
from .parser import EMPTY_POLICY_SET, PolicySet, load_policy_dir, parse_policy_set

__all__ = [
    "DENY",
    "EMPTY_POLICY_SET",
    "PERMIT",
    "Decision",
    "LintWarning",
    "Policy",
    "PolicySet",
    "RequestContext",
    "TraceEntry",
    "evaluate",
    "format_expr",
    "lint",
    "load_policy_dir",
    "parse_policy_set",
]
