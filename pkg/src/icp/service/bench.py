"""In-process latency microbenchmark for token issuance and token-form decisions.

Runs against a throwaway control plane (temp keys, audit log and a generated
policy set) so the numbers include signing, validation, evaluation of every
policy and the fsynced audit append.
"""

from __future__ import annotations

import statistics
import tempfile
import time
from pathlib import Path

from .config import ServiceConfig
from .core import ControlPlane

TRUST_DOMAIN = "bench.example.org"


def generate_policies(count: int) -> str:
    """A ``count``-policy set in which a staging deploy is permitted and every policy is evaluated."""
    if count < 3:
        raise ValueError("need at least 3 policies")
    lines = [
        'permit issue-automation when action == "token.issue" and subject.kind == "automation" '
        'and context.environment in ["dev", "staging"];',
        'permit deploy-staging when action == "deploy" and context.environment == "staging" '
        'and context.git.branch matches "release/*";',
        'deny freeze when context.freeze == "true";',
    ]
    for i in range(count - 3):
        if i % 3 == 0:
            lines.append(f'deny block-{i} when resource.id == "svc-{i}" and context.environment == "prod";')
        elif i % 3 == 1:
            lines.append(
                f'permit team-{i} when subject.uri matches "icp:auto:ci:team-{i}:*" '
                f'and action in ["read", "write"];'
            )
        else:
            lines.append(f'permit window-{i} when context.hour >= {i % 24} and context.tier == "t{i}";')
    return "\n".join(lines) + "\n"


def _summary(samples: list[float]) -> dict[str, float]:
    ms = [s * 1000.0 for s in samples]
    q = statistics.quantiles(ms, n=100, method="inclusive")
    return {
        "p50_ms": round(statistics.median(ms), 4),
        "p95_ms": round(q[94], 4),
        "max_ms": round(max(ms), 4),
        "mean_ms": round(statistics.fmean(ms), 4),
    }


def run_bench(iterations: int = 1000, policy_count: int = 100, workdir: str | Path | None = None,
              fsync: bool = True) -> dict:
    if iterations < 2:
        raise ValueError("iterations must be >= 2")
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        tmp = Path(tmp)
        (tmp / "policies").mkdir()
        (tmp / "policies" / "bench.ipl").write_text(generate_policies(policy_count), encoding="utf-8")
        plane = ControlPlane(ServiceConfig(
            trust_domain=TRUST_DOMAIN, key_file=tmp / "keys.json", policy_dir=tmp / "policies",
            audit_log=tmp / "audit.log", audit_fsync=fsync,
        ))
        try:
            subject = {"kind": "automation", "platform": "ci", "pipeline": "deploy-payments", "run_id": "0"}
            scope = {"resource": "deploy/payments", "actions": ["deploy"]}
            context = {"environment": "staging", "git.branch": "release/1.4", "git.sha": "abc123",
                       "git.actor": "alice"}
            issue_t, decide_t = [], []
            token = None
            for i in range(iterations):
                subject["run_id"] = str(i)
                t0 = time.perf_counter()
                token = plane.issue(subject, scope, context, 300)
                issue_t.append(time.perf_counter() - t0)
                body = {"token": token.compact, "action": "deploy", "resource": "deploy/payments"}
                t0 = time.perf_counter()
                decision = plane.decide(body)
                decide_t.append(time.perf_counter() - t0)
                if not decision.permitted:
                    raise RuntimeError(f"bench decision unexpectedly denied: {decision.to_dict()}")
            policy_total = len(plane.policies.current)
        finally:
            plane.audit.close()
    return {
        "iterations": iterations,
        "policy_count": policy_total,
        "audit_fsync": fsync,
        "issuance": _summary(issue_t),
        "decision": _summary(decide_t),
    }
