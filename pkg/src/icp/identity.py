"""Normalization of workload, human and automation identities into one canonical form.

Workloads keep their SPIFFE ID. Humans and automation runs get ``icp:`` URIs so
policies can address every actor kind the same way::

    spiffe://prod.example.org/payments/api
    icp:human:sso.example.org:alice
    icp:auto:ci:deploy-payments:4242

Components of the ``icp:`` forms are percent-encoded (``:``, ``%``, whitespace and
other reserved characters) so that distinct assertions never share a URI.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Mapping
from urllib.parse import quote, urlsplit

from .errors import MalformedIdentity

_TRUST_DOMAIN = re.compile(r"^[a-z0-9._-]{1,255}$")
_ATTR_KEY = re.compile(r"^[a-z0-9_.]+$")
_SPIFFE = re.compile(r"^([A-Za-z][A-Za-z0-9+.-]*)://([^/?#]*)(.*)$")
_SPIFFE_PATH = re.compile(r"^[a-zA-Z0-9._\-/]+$")
_SAFE = "/@+=!$&'()*,;"


class IdentityKind(str, Enum):
    HUMAN = "human"
    WORKLOAD = "workload"
    AUTOMATION = "automation"


@dataclass(frozen=True)
class UnifiedIdentity:
    kind: IdentityKind
    trust_domain: str
    canonical_uri: str
    attributes: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "attributes", MappingProxyType(dict(self.attributes)))

    def subject_attributes(self) -> dict[str, str]:
        """Flat attribute map exposed to policies as ``subject.*``."""
        attrs = dict(self.attributes)
        attrs.update(kind=self.kind.value, trust_domain=self.trust_domain, uri=self.canonical_uri)
        return attrs

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "trust_domain": self.trust_domain,
            "canonical_uri": self.canonical_uri,
            "attributes": dict(self.attributes),
        }


@dataclass(frozen=True)
class HumanAssertion:
    issuer: str
    subject: str
    verified_claims: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class AutomationAssertion:
    platform: str
    pipeline: str
    run_id: str
    claims: Mapping[str, str] = field(default_factory=dict)


def validate_trust_domain(trust_domain: str) -> str:
    if not isinstance(trust_domain, str) or not _TRUST_DOMAIN.match(trust_domain):
        raise MalformedIdentity(f"invalid trust domain {trust_domain!r}")
    return trust_domain


def _attr_key(key: str) -> str:
    key = str(key).lower()
    if not _ATTR_KEY.match(key):
        raise MalformedIdentity(f"invalid attribute key {key!r}")
    return key


def merge_attributes(base: Mapping[str, str], extra: Mapping[str, str], prefix: str = "") -> dict[str, str]:
    """Copy ``extra`` into ``base`` under ``prefix``; keys must not collide."""
    out = dict(base)
    for key, value in extra.items():
        k = _attr_key(prefix + str(key))
        if k in out:
            raise MalformedIdentity(f"attribute {k!r} collides with an existing attribute")
        out[k] = str(value)
    return out


def _component(value: str) -> str:
    return quote(value, safe=_SAFE)


def normalize_spiffe(uri: str, metadata: Mapping[str, str] | None = None) -> UnifiedIdentity:
    """Parse a SPIFFE ID. ``metadata`` binds extra attributes (team, environment, ...)."""
    if not isinstance(uri, str):
        raise MalformedIdentity("SPIFFE ID must be a string")
    m = _SPIFFE.match(uri)
    if not m or m.group(1).lower() != "spiffe":
        raise MalformedIdentity(f"not a spiffe:// URI: {uri!r}")
    authority, path = m.group(2).lower(), m.group(3)
    if not _TRUST_DOMAIN.match(authority):
        raise MalformedIdentity(f"invalid trust domain {authority!r}")
    if not path or path == "/":
        raise MalformedIdentity("SPIFFE ID has an empty path")
    if not _SPIFFE_PATH.match(path):
        raise MalformedIdentity(f"SPIFFE path has forbidden characters: {path!r}")
    for segment in path[1:].split("/"):
        if segment in ("", ".", ".."):
            raise MalformedIdentity(f"SPIFFE path has an empty or dot segment: {path!r}")
    attributes = merge_attributes({"path": path}, metadata or {})
    return UnifiedIdentity(IdentityKind.WORKLOAD, authority, f"spiffe://{authority}{path}", attributes)


def normalize_human(a: HumanAssertion, trust_domain: str) -> UnifiedIdentity:
    validate_trust_domain(trust_domain)
    if not a.issuer or not a.subject:
        raise MalformedIdentity("human assertion needs issuer and subject")
    try:
        parts = urlsplit(a.issuer)
        host = parts.hostname
        port = parts.port
    except ValueError as exc:
        raise MalformedIdentity(f"issuer is not a URI: {a.issuer!r}") from exc
    if not parts.scheme or not host:
        raise MalformedIdentity(f"issuer is not a URI: {a.issuer!r}")
    issuer_part = host.lower()
    if port is not None:
        issuer_part += f":{port}"
    issuer_part += parts.path.rstrip("/")
    uri = f"icp:human:{_component(issuer_part)}:{_component(a.subject)}"
    attributes = merge_attributes({"issuer": a.issuer, "subject": a.subject}, a.verified_claims, "claim.")
    return UnifiedIdentity(IdentityKind.HUMAN, trust_domain, uri, attributes)


def normalize_automation(a: AutomationAssertion, trust_domain: str) -> UnifiedIdentity:
    validate_trust_domain(trust_domain)
    if not a.platform or not a.pipeline or not a.run_id:
        raise MalformedIdentity("automation assertion needs platform, pipeline and run_id")
    uri = "icp:auto:" + ":".join(_component(x) for x in (a.platform, a.pipeline, a.run_id))
    base = {"platform": a.platform, "pipeline": a.pipeline, "run_id": a.run_id}
    return UnifiedIdentity(IdentityKind.AUTOMATION, trust_domain, uri, merge_attributes(base, a.claims))


def normalize(assertion: Mapping, trust_domain: str) -> UnifiedIdentity:
    """Normalize a JSON-shaped assertion, tagged by ``kind``.

    ``{"kind": "workload", "spiffe_id": ..., "attributes": {...}}``,
    ``{"kind": "human", "issuer": ..., "subject": ..., "verified_claims": {...}}`` or
    ``{"kind": "automation", "platform": ..., "pipeline": ..., "run_id": ..., "claims": {...}}``.
    Human and automation assertions may also carry ``attributes`` (bound metadata).
    """
    if not isinstance(assertion, Mapping):
        raise MalformedIdentity("assertion must be an object")
    kind = assertion.get("kind")
    extra = assertion.get("attributes") or {}
    if not isinstance(extra, Mapping):
        raise MalformedIdentity("attributes must be an object")
    if kind == IdentityKind.WORKLOAD.value:
        return normalize_spiffe(assertion.get("spiffe_id", ""), extra)
    if kind == IdentityKind.HUMAN.value:
        ident = normalize_human(
            HumanAssertion(
                str(assertion.get("issuer", "")),
                str(assertion.get("subject", "")),
                dict(assertion.get("verified_claims") or {}),
            ),
            trust_domain,
        )
    elif kind == IdentityKind.AUTOMATION.value:
        ident = normalize_automation(
            AutomationAssertion(
                str(assertion.get("platform", "")),
                str(assertion.get("pipeline", "")),
                str(assertion.get("run_id", "")),
                dict(assertion.get("claims") or {}),
            ),
            trust_domain,
        )
    else:
        raise MalformedIdentity(f"unknown identity kind {kind!r}")
    if extra:
        ident = UnifiedIdentity(ident.kind, ident.trust_domain, ident.canonical_uri,
                                merge_attributes(ident.attributes, extra))
    return ident
