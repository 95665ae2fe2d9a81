from __future__ import annotations

from pathlib import Path

import pytest

from icp.service.config import ServiceConfig
from icp.service.core import ControlPlane

DEPLOY_POLICIES = """\
permit issue-ci when action == "token.issue" and subject.kind == "automation";
permit issue-human when action == "token.issue" and subject.kind == "human" and context.environment != "prod";
permit deploy-staging when action == "deploy" and context.environment == "staging";
deny prod-freeze when action == "deploy" and context.environment == "prod";
permit read-any when action == "read";
"""


class FakeClock:
    def __init__(self, start: float = 1_700_000_000):
        self.now = float(start)

    def __call__(self) -> float:
        return self.now

    def advance(self, seconds: float) -> None:
        self.now += seconds


@pytest.fixture
def clock() -> FakeClock:
    return FakeClock()


def make_plane(tmp: Path, *, trust_domain: str = "a.example.org", policies: str = DEPLOY_POLICIES,
               clock=None) -> ControlPlane:
    policy_dir = tmp / "policies"
    policy_dir.mkdir(parents=True, exist_ok=True)
    (policy_dir / "main.ipl").write_text(policies, encoding="utf-8")
    config = ServiceConfig(
        trust_domain=trust_domain, key_file=tmp / "keys.json", policy_dir=policy_dir,
        audit_log=tmp / "audit.log", audit_fsync=False,
    )
    return ControlPlane(config, clock=clock) if clock else ControlPlane(config)


@pytest.fixture
def plane(tmp_path, clock) -> ControlPlane:
    p = make_plane(tmp_path, clock=clock)
    yield p
    p.audit.close()


CI_SUBJECT = {"kind": "automation", "platform": "ci", "pipeline": "deploy-payments", "run_id": "4242"}
