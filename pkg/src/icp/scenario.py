"""Executable use-case scenarios.

Each scenario is a directory under ``icp/scenarios/`` holding ``scenario.json``
(daemon topology plus an ordered list of steps with expected outcomes) and one
policy directory per daemon. ``run_scenario`` drives the steps through
``DaemonClient`` instances; when none are supplied it starts one ``icpd`` child
process per daemon in a temporary directory.
"""

from __future__ import annotations

import contextlib
import json
import shutil
import socket
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterator, Mapping

from .broker import validate_token
from .canonical import b64url_decode
from .client import DaemonClient, DaemonError
from .errors import TokenError
from .federation import BundleStore, TrustBundle
from .service.config import ServiceConfig


def scenarios_root() -> Path:
    return Path(str(resources.files("icp") / "scenarios"))


def list_scenarios() -> list[str]:
    return sorted(p.name for p in scenarios_root().iterdir() if (p / "scenario.json").is_file())


def load_scenario(name: str) -> tuple[dict, Path]:
    path = scenarios_root() / name
    if not (path / "scenario.json").is_file():
        raise KeyError(f"unknown scenario {name!r}; available: {', '.join(list_scenarios())}")
    return json.loads((path / "scenario.json").read_text(encoding="utf-8")), path


@dataclass
class StepResult:
    index: int
    op: str
    description: str
    passed: bool
    detail: str = ""

    def to_dict(self) -> dict:
        return {"index": self.index, "op": self.op, "description": self.description,
                "passed": self.passed, "detail": self.detail}


@dataclass
class ScenarioReport:
    name: str
    steps: list[StepResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.steps) and all(s.passed for s in self.steps)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "steps": [s.to_dict() for s in self.steps]}

    def render(self) -> str:
        lines = [f"scenario {self.name}"]
        for s in self.steps:
            mark = "PASS" if s.passed else "FAIL"
            lines.append(f"  [{mark}] {s.index:2d} {s.op:<16} {s.description}")
            if not s.passed and s.detail:
                lines.append(f"         {s.detail}")
        lines.append("result: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@contextlib.contextmanager
def spawn_daemon(trust_domain: str, policy_dir: Path, workdir: Path, *, startup_timeout: float = 20.0
                 ) -> Iterator[DaemonClient]:
    """Run ``icpd`` as a child process on a free loopback port."""
    workdir.mkdir(parents=True, exist_ok=True)
    shutil.copytree(policy_dir, workdir / "policies")
    port = _free_port()
    config = ServiceConfig(
        trust_domain=trust_domain, key_file=workdir / "keys.json", policy_dir=workdir / "policies",
        audit_log=workdir / "audit.log", listen=f"127.0.0.1:{port}",
    )
    (workdir / "icpd.conf").write_text(config.to_text(), encoding="utf-8")
    log = open(workdir / "icpd.out", "wb")
    proc = subprocess.Popen(
        [sys.executable, "-m", "icp.service", "--config", str(workdir / "icpd.conf"), "--log-level", "warning"],
        stdout=log, stderr=subprocess.STDOUT,
    )
    client = DaemonClient(config.url)
    try:
        deadline = time.monotonic() + startup_timeout
        while True:
            if proc.poll() is not None:
                raise RuntimeError(f"icpd exited early: {(workdir / 'icpd.out').read_text(errors='replace')}")
            try:
                client.trust_bundle()
                break
            except DaemonError:
                if time.monotonic() > deadline:
                    raise RuntimeError(f"icpd did not start within {startup_timeout}s") from None
                time.sleep(0.05)
        yield client
    finally:
        client.close()
        proc.terminate()
        try:
            proc.wait(timeout=10)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()
        log.close()


class _Runner:
    def __init__(self, clients: Mapping[str, DaemonClient]):
        self.clients = clients
        self.vars: dict[str, Any] = {}

    def ref(self, value: Any) -> Any:
        if isinstance(value, str) and value.startswith("$"):
            return self.vars[value[1:]]
        return value

    def token(self, step: Mapping) -> str:
        tok = self.ref(step["token"])
        return tok["token"] if isinstance(tok, Mapping) else tok

    def run(self, step: Mapping) -> Any:
        """Execute a step; return its result or raise DaemonError/TokenError."""
        op = step["op"]
        client = self.clients[step.get("daemon", "a")]
        if op == "issue":
            return client.issue_token(step["subject"], step["scope"], step.get("context"), step["ttl_seconds"])
        if op in ("decide", "simulate"):
            body: dict[str, Any] = {"action": step["action"], "resource": step["resource"],
                                    "context": step.get("context", {})}
            if "token" in step:
                body["token"] = self.token(step)
            elif "claims" in step:
                body["claims"] = step["claims"]
            else:
                body["subject"] = step["subject"]
            return client.decide(body) if op == "decide" else client.simulate(body)
        if op == "validate_offline":
            tok = self.ref(step["token"])
            bundles = [TrustBundle.from_dict(client.trust_bundle())]
            bundles += [TrustBundle.from_dict(self.ref(b)) for b in step.get("extra_bundles", [])]
            iat = json.loads(_b64_payload(tok["token"]))["iat"]
            claims = validate_token(tok["token"], BundleStore.from_bundles(bundles), iat + step["now_offset"])
            return claims.claims()
        if op == "revoke":
            tok = self.ref(step["token"])
            return client.revoke_token(tok["txn"], tok.get("exp"))
        if op == "export_bundle":
            return client.trust_bundle()
        if op == "import_bundle":
            return client.import_bundle(self.ref(step["bundle"]))
        if op == "remove_bundle":
            return client.remove_bundle(step["domain"])
        if op == "audit_count":
            records = client.audit_records()
            return {"count": sum(1 for r in records if r["kind"] == step["kind"])}
        if op == "audit_verify":
            return client.audit_verify()
        raise ValueError(f"unknown step op {op!r}")


def _b64_payload(compact: str) -> bytes:
    return b64url_decode(compact.split(".")[1])


def _blocking(decision: Mapping) -> set[str]:
    return {t["policy_id"] for t in decision.get("trace", ()) if t["matched"] and t["effect"] == "deny"}


def check(expect: Mapping, result: Any, error: Exception | None) -> str:
    """Compare an outcome against a step's expectation; return '' on match, else why not."""
    if error is not None:
        code = getattr(error, "code", type(error).__name__)
        if "error" not in expect:
            return f"unexpected error {error}"
        if expect["error"] != code:
            return f"expected error {expect['error']}, got {code}"
        if "code" in expect:
            sub = error.sub_code if isinstance(error, DaemonError) else None
            if sub != expect["code"]:
                return f"expected sub-code {expect['code']}, got {sub}"
        if "blocking_policy" in expect:
            decision = error.detail.get("decision", {}) if isinstance(error, DaemonError) else {}
            if expect["blocking_policy"] not in _blocking(decision):
                return f"{expect['blocking_policy']} not among blocking policies {sorted(_blocking(decision))}"
        return ""
    if "error" in expect:
        return f"expected error {expect['error']}, got success"
    if "outcome" in expect and result.get("outcome") != expect["outcome"]:
        return f"expected {expect['outcome']}, got {result.get('outcome')} (trace {result.get('trace')})"
    if "reason" in expect and result.get("reason") != expect["reason"]:
        return f"expected reason {expect['reason']}, got {result.get('reason')}"
    if "blocking_policy" in expect and expect["blocking_policy"] not in _blocking(result):
        return f"{expect['blocking_policy']} not among blocking policies {sorted(_blocking(result))}"
    if "ok" in expect and "ok" in result and result["ok"] != expect["ok"]:
        return f"expected ok={expect['ok']}, got {result}"
    if "count" in expect and result.get("count") != expect["count"]:
        return f"expected count {expect['count']}, got {result.get('count')}"
    if "context" in expect:
        ctx = result.get("context", {})
        missing = {k: v for k, v in expect["context"].items() if ctx.get(k) != v}
        if missing:
            return f"context lacks {missing}"
    return ""


def execute(scenario: Mapping, clients: Mapping[str, DaemonClient]) -> ScenarioReport:
    report = ScenarioReport(scenario["name"])
    runner = _Runner(clients)
    for i, step in enumerate(scenario["steps"], start=1):
        result, error = None, None
        try:
            result = runner.run(step)
        except (DaemonError, TokenError) as exc:
            error = exc
        if "save" in step and error is None:
            runner.vars[step["save"]] = result
        why = check(step.get("expect", {}), result, error)
        report.steps.append(StepResult(i, step["op"], step.get("describe", ""), not why, why))
    return report


def run_scenario(name: str, clients: Mapping[str, DaemonClient] | None = None,
                 workdir: str | Path | None = None) -> ScenarioReport:
    scenario, path = load_scenario(name)
    if clients is not None:
        return execute(scenario, clients)
    with tempfile.TemporaryDirectory(dir=workdir) as tmp, contextlib.ExitStack() as stack:
        spawned = {
            dname: stack.enter_context(spawn_daemon(spec["trust_domain"], path / spec["policies"], Path(tmp) / dname))
            for dname, spec in scenario["daemons"].items()
        }
        return execute(scenario, spawned)
