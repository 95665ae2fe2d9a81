"""The control plane behind ``icpd``: composes identity, policy, broker,
federation and audit into decide / simulate / issue / replay operations.

Everything here is transport-independent; the HTTP app is a thin wrapper.
"""

from __future__ import annotations

import logging
import threading
import time
from pathlib import Path
from typing import Any, Callable, Mapping

from ..audit import AuditLog, DivergenceReport
from ..broker import Broker, RevocationList, Scope, TransactionToken, load_or_create_keys, validate_token
from ..errors import MalformedRequest, MalformedScope, TokenError, TokenInvalid, UnknownPolicyVersion
from ..federation import BundleStore, TrustBundle, export_bundle, import_bundle, remove_federation
from ..identity import normalize
from ..policy import DENY, Decision, PolicySet, RequestContext, evaluate, load_policy_dir, parse_policy_set
from ..policy.engine import string_map
from ..policy.parser import EMPTY_POLICY_SET
from .config import ServiceConfig

log = logging.getLogger(__name__)

OUT_OF_SCOPE = "out_of_scope"


class PolicyStore:
    """Current policy set plus every version ever loaded, keyed by digest."""

    def __init__(self, initial: PolicySet):
        self._lock = threading.Lock()
        self.current = initial
        self.history: dict[str, PolicySet] = {initial.version: initial}

    def swap(self, ps: PolicySet) -> bool:
        with self._lock:
            if ps.version == self.current.version:
                return False
            self.history.setdefault(ps.version, ps)
            self.current = ps
            return True

    def get(self, version: str) -> PolicySet:
        try:
            return self.history[version]
        except KeyError:
            raise UnknownPolicyVersion(f"unknown policy version {version}", policy_version=version) from None


def _load_dir(directory: Path) -> PolicySet:
    return load_policy_dir(directory) if Path(directory).is_dir() else EMPTY_POLICY_SET


class ControlPlane:
    def __init__(self, config: ServiceConfig, clock: Callable[[], float] = time.time):
        self.config = config
        self.clock = clock
        self.trust_domain = config.trust_domain
        self.skew = config.clock_skew
        keys = load_or_create_keys(config.key_file)
        self.audit = AuditLog(config.audit_log, fsync=config.audit_fsync, clock=clock)
        self.bundles = BundleStore(config.trust_domain, keys, config.bundle_refresh_hint)
        self.revocations = RevocationList()
        self.broker = Broker(
            config.trust_domain, keys, self.audit, max_ttl=config.max_ttl,
            revocations=self.revocations, bundles=self.bundles, clock=clock,
        )
        self.policies = PolicyStore(_load_dir(config.policy_dir))
        self._issued: dict[str, int] = {}
        self.audit.append("policy_reload", policy_version=self.policies.current.version,
                          detail={"policies": len(self.policies.current), "startup": True})

    # tokens

    def issue(self, subject: Mapping, scope: Mapping, context: Mapping | None, ttl_seconds: int) -> TransactionToken:
        identity = normalize(subject, self.trust_domain)
        token = self.broker.issue_token(identity, scope, context, ttl_seconds, self.policies.current)
        self._issued[token.txn] = token.exp
        return token

    def revoke(self, txn: str, exp: int | None = None) -> None:
        if exp is None:
            exp = self._issued.get(txn)
        if exp is None:
            exp = int(self.clock()) + max(self.broker.max_ttl.values())
        self.broker.revoke_token(txn, exp)
        self.revocations.gc(self.clock(), self.skew)

    # decisions

    def decide(self, body: Mapping[str, Any]) -> Decision:
        return self._decide(body, simulate=False)

    def simulate(self, body: Mapping[str, Any]) -> Decision:
        """Same evaluation path as ``decide``; recorded as a simulation, never enforced."""
        return self._decide(body, simulate=True)

    def _decide(self, body: Mapping[str, Any], simulate: bool) -> Decision:
        if not isinstance(body, Mapping):
            raise MalformedRequest("request must be an object")
        kind = "simulation" if simulate else "decision"
        ps = self.policies.current
        scope = txn = None
        unsigned = simulate
        if body.get("token") is not None:
            req = _action_request(body)
            try:
                token = validate_token(body["token"], self.bundles, self.clock(), self.revocations, self.skew)
            except TokenError as exc:
                denied = Decision(DENY, (), ps.version, reason=f"token_invalid:{exc.code}")
                self.audit.append(kind, request=req, decision=denied)
                raise TokenInvalid(exc) from exc
            txn, scope, unsigned = token.txn, token.scope, False
            req = RequestContext(
                subject={"uri": token.sub, "kind": token.kind, "trust_domain": token.td},
                action=req.action, resource=req.resource, context={**req.context, **token.context},
            )
        elif body.get("claims") is not None:
            if not simulate:
                raise MalformedRequest("unsigned claims are accepted by simulate only")
            req, scope = _claims_request(body)
        else:
            req = RequestContext.from_dict(body)
        if scope is not None and not scope.allows(req.action, req.resource["id"]):
            decision = Decision(DENY, (), ps.version, reason=OUT_OF_SCOPE)
        else:
            decision = evaluate(ps, req)
        self.audit.append(kind, request=req, decision=decision, txn=txn,
                          detail={"simulated_subject": True} if unsigned else None)
        return decision

    # federation

    def export_bundle(self) -> TrustBundle:
        return export_bundle(self.bundles)

    def import_bundle(self, bundle: Mapping | TrustBundle) -> None:
        import_bundle(self.bundles, bundle, self.audit)

    def remove_federation(self, trust_domain: str) -> None:
        remove_federation(self.bundles, trust_domain, self.audit)

    # policies

    def reload_policies(self, directory: str | Path | None = None) -> str:
        """Parse every file first; swap atomically only if all of them parse."""
        ps = _load_dir(Path(directory) if directory else self.config.policy_dir)
        if self.policies.swap(ps):
            self.audit.append("policy_reload", policy_version=ps.version, detail={"policies": len(ps)})
            log.info("policy set now %s (%d policies)", ps.version, len(ps))
        return self.policies.current.version

    def replay(self, policy_version: str | None = None, source: str | None = None) -> DivergenceReport:
        if (policy_version is None) == (source is None):
            raise MalformedRequest("give exactly one of policy_version or source")
        ps = self.policies.get(policy_version) if policy_version else parse_policy_set(source)
        return self.audit.replay(ps)

    def verify_audit(self) -> dict[str, Any]:
        bad = self.audit.verify()
        return {"ok": True} if bad is None else {"ok": False, "first_bad_seq": bad}


def _action_request(body: Mapping[str, Any]) -> RequestContext:
    resource = body.get("resource")
    if isinstance(resource, Mapping):
        resource = resource.get("id")
    if not isinstance(resource, str):
        raise MalformedRequest("token requests need resource as a string")
    return RequestContext.from_dict(
        {"subject": {}, "action": body.get("action", ""), "resource": resource, "context": body.get("context")}
    )


def _claims_request(body: Mapping[str, Any]) -> tuple[RequestContext, Scope | None]:
    claims = body["claims"]
    if not isinstance(claims, Mapping) or not claims.get("sub"):
        raise MalformedRequest("claims must be an object with at least 'sub'")
    base = _action_request(body)
    scope = None
    if claims.get("scope") is not None:
        try:
            scope = Scope.from_dict(claims["scope"])
        except MalformedScope as exc:
            raise MalformedRequest(str(exc)) from exc
    subject = {"uri": str(claims["sub"])}
    for src, dst in (("kind", "kind"), ("td", "trust_domain")):
        if claims.get(src):
            subject[dst] = str(claims[src])
    claim_ctx = string_map("claims.context", claims.get("context"))
    req = RequestContext(subject=subject, action=base.action, resource=base.resource,
                         context={**base.context, **claim_ctx})
    return req, scope
