"""Credential broker: mints, validates and revokes signed transaction tokens.

Compact form::

    base64url(header) "." base64url(payload) "." base64url(signature)

Header ``{alg, kid, td}`` and payload ``{txn, sub, kind, scope, context, iat, exp}``
are canonical JSON. The signature is Ed25519 over the ASCII of the first two
segments joined by ``.``.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Callable, Iterable, Mapping, Sequence

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey

from .canonical import b64url_decode, b64url_encode, canonical_json
from .errors import (
    Expired,
    MalformedRequest,
    MalformedScope,
    MalformedToken,
    NotYetValid,
    PolicyDenied,
    Revoked,
    SignatureInvalid,
    TtlExceeded,
)
from .federation import BundleStore, key_id
from .identity import IdentityKind, UnifiedIdentity
from .policy import PolicySet, RequestContext, evaluate

if TYPE_CHECKING:
    from .audit import AuditLog

ALG = "EdDSA"
DEFAULT_SKEW = 30
DEFAULT_MAX_TTL = {
    IdentityKind.AUTOMATION.value: 300,
    IdentityKind.WORKLOAD.value: 3600,
    IdentityKind.HUMAN.value: 3600,
}
ISSUE_ACTION = "token.issue"


@dataclass(frozen=True)
class KeyPair:
    """Ed25519 signing key. The private half is never serialized into bundles or logs."""

    kid: str
    public_key: bytes
    private_key: bytes = field(repr=False)
    _signer: Ed25519PrivateKey = field(repr=False, compare=False, default=None)
    algorithm: str = "Ed25519"

    @classmethod
    def from_private_bytes(cls, seed: bytes) -> "KeyPair":
        sk = Ed25519PrivateKey.from_private_bytes(seed)
        pub = sk.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
        return cls(key_id(pub), pub, seed, sk)

    @classmethod
    def generate(cls) -> "KeyPair":
        return cls.from_private_bytes(os.urandom(32))

    def sign(self, data: bytes) -> bytes:
        return self._signer.sign(data)


def load_keys(path: str | Path) -> list[KeyPair]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [KeyPair.from_private_bytes(b64url_decode(k["private_key"])) for k in data["keys"]]


def save_keys(path: str | Path, keys: Iterable[KeyPair]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {"keys": [{"kid": k.kid, "private_key": b64url_encode(k.private_key)} for k in keys]}
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(body, indent=2) + "\n")


def load_or_create_keys(path: str | Path) -> list[KeyPair]:
    if Path(path).exists():
        return load_keys(path)
    keys = [KeyPair.generate()]
    save_keys(path, keys)
    return keys


@dataclass(frozen=True)
class Scope:
    resource: str
    actions: tuple[str, ...]

    @classmethod
    def from_dict(cls, data: Any) -> "Scope":
        if isinstance(data, Scope):
            return data
        if not isinstance(data, Mapping):
            raise MalformedScope("scope must be an object with resource and actions")
        resource, actions = data.get("resource"), data.get("actions")
        if not isinstance(resource, str) or not resource:
            raise MalformedScope("scope.resource must be a non-empty string")
        if (not isinstance(actions, (list, tuple)) or not actions
                or not all(isinstance(a, str) and a for a in actions)):
            raise MalformedScope("scope.actions must be a non-empty list of strings")
        return cls(resource, tuple(actions))

    def to_dict(self) -> dict[str, Any]:
        return {"resource": self.resource, "actions": list(self.actions)}

    def allows(self, action: str, resource: str) -> bool:
        return resource == self.resource and action in self.actions


@dataclass(frozen=True)
class TransactionToken:
    txn: str
    sub: str
    kind: str
    td: str
    scope: Scope
    context: Mapping[str, str]
    iat: int
    exp: int
    kid: str
    alg: str = ALG
    signature: bytes = b""

    def header(self) -> dict[str, str]:
        return {"alg": self.alg, "kid": self.kid, "td": self.td}

    def payload(self) -> dict[str, Any]:
        return {
            "txn": self.txn,
            "sub": self.sub,
            "kind": self.kind,
            "scope": self.scope.to_dict(),
            "context": dict(self.context),
            "iat": self.iat,
            "exp": self.exp,
        }

    def signing_input(self) -> bytes:
        return (b64url_encode(canonical_json(self.header())) + "."
                + b64url_encode(canonical_json(self.payload()))).encode("ascii")

    @property
    def compact(self) -> str:
        return self.signing_input().decode("ascii") + "." + b64url_encode(self.signature)

    def claims(self) -> dict[str, Any]:
        """Header and payload merged; what validation hands back to callers."""
        out = self.payload()
        out.update(td=self.td, kid=self.kid, alg=self.alg)
        return out


class RevocationList:
    """Local denylist of token ids. Single writer; ``revoke`` is visible on return."""

    def __init__(self):
        self._lock = threading.Lock()
        self._entries: dict[str, int] = {}

    def revoke(self, txn: str, exp: int) -> None:
        with self._lock:
            self._entries[txn] = max(exp, self._entries.get(txn, exp))

    def __contains__(self, txn: str) -> bool:
        return txn in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def snapshot(self) -> dict[str, int]:
        return dict(self._entries)

    def gc(self, now: float, skew: int = DEFAULT_SKEW) -> int:
        """Drop entries whose token can no longer validate anyway (exp + skew < now)."""
        with self._lock:
            dead = [t for t, exp in self._entries.items() if exp + skew < now]
            for t in dead:
                del self._entries[t]
        return len(dead)


def _str_map(name: str, value: Any, exc=MalformedRequest) -> dict[str, str]:
    if value is None:
        return {}
    if not isinstance(value, Mapping) or not all(isinstance(k, str) and isinstance(v, str) for k, v in value.items()):
        raise exc(f"{name} must be an object of strings")
    return dict(value)


def _parse_json_segment(segment: str) -> Any:
    try:
        raw = b64url_decode(segment)
        obj = json.loads(raw.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedToken("token segment is not base64url-encoded JSON") from exc
    if canonical_json(obj) != raw:
        raise MalformedToken("token segment is not canonical JSON")
    return obj


def _is_int(x: Any) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def parse_token(compact: str) -> tuple[TransactionToken, bytes]:
    """Decode and structurally check a compact token without verifying it.

    Returns the token and the signing input.
    """
    if not isinstance(compact, str):
        raise MalformedToken("token must be a string")
    parts = compact.split(".")
    if len(parts) != 3:
        raise MalformedToken("token must have three segments")
    header = _parse_json_segment(parts[0])
    payload = _parse_json_segment(parts[1])
    try:
        signature = b64url_decode(parts[2])
    except ValueError as exc:
        raise MalformedToken("signature is not base64url") from exc
    if (not isinstance(header, dict) or set(header) != {"alg", "kid", "td"}
            or not all(isinstance(v, str) for v in header.values())):
        raise MalformedToken("header must be {alg, kid, td}")
    if header["alg"] != ALG:
        raise MalformedToken(f"unsupported alg {header['alg']!r}")
    if (not isinstance(payload, dict)
            or set(payload) != {"txn", "sub", "kind", "scope", "context", "iat", "exp"}
            or not all(isinstance(payload[k], str) for k in ("txn", "sub", "kind"))
            or not _is_int(payload["iat"]) or not _is_int(payload["exp"])):
        raise MalformedToken("payload is missing or mistyping required claims")
    try:
        scope = Scope.from_dict(payload["scope"])
        context = _str_map("context", payload["context"], MalformedToken)
    except MalformedScope as exc:
        raise MalformedToken(str(exc)) from exc
    token = TransactionToken(
        txn=payload["txn"], sub=payload["sub"], kind=payload["kind"], td=header["td"],
        scope=scope, context=context, iat=payload["iat"], exp=payload["exp"],
        kid=header["kid"], alg=header["alg"], signature=signature,
    )
    return token, (parts[0] + "." + parts[1]).encode("ascii")


def validate_token(
    compact: str,
    bundles: BundleStore,
    now: float,
    rl: RevocationList | None = None,
    skew: int = DEFAULT_SKEW,
) -> TransactionToken:
    """Verify signature, validity window (inclusive, widened by ``skew``) and revocation."""
    token, signing_input = parse_token(compact)
    key = bundles.lookup(token.td, token.kid)
    try:
        key.verify(token.signature, signing_input)
    except InvalidSignature as exc:
        raise SignatureInvalid("token signature does not verify") from exc
    if now < token.iat - skew:
        raise NotYetValid(f"token not valid before {token.iat - skew}", iat=token.iat)
    if now > token.exp + skew:
        raise Expired(f"token expired at {token.exp}", exp=token.exp)
    if rl is not None and token.txn in rl:
        raise Revoked(f"token {token.txn} has been revoked", txn=token.txn)
    return token


class Broker:
    """Issues policy-gated tokens for one trust domain and records every issuance."""

    def __init__(
        self,
        trust_domain: str,
        keys: Sequence[KeyPair],
        audit: "AuditLog",
        *,
        max_ttl: Mapping[str, int] | None = None,
        revocations: RevocationList | None = None,
        bundles: BundleStore | None = None,
        clock: Callable[[], float] = time.time,
    ):
        if not keys:
            raise ValueError("broker needs at least one signing key")
        self.trust_domain = trust_domain
        self.keys = list(keys)
        self.audit = audit
        self.max_ttl = dict(DEFAULT_MAX_TTL)
        self.max_ttl.update(max_ttl or {})
        self.revocations = revocations if revocations is not None else RevocationList()
        self.bundles = bundles
        self.clock = clock
        self._key_lock = threading.Lock()

    @property
    def signing_key(self) -> KeyPair:
        return self.keys[-1]

    def add_key(self, key: KeyPair | None = None) -> KeyPair:
        """Rotate: the new key signs from now on; older keys stay verifiable."""
        key = key or KeyPair.generate()
        with self._key_lock:
            self.keys = self.keys + [key]
            if self.bundles is not None:
                self.bundles.set_own_keys(self.keys)
        return key

    def remove_key(self, kid: str) -> None:
        with self._key_lock:
            remaining = [k for k in self.keys if k.kid != kid]
            if not remaining:
                raise ValueError("cannot remove the last signing key")
            self.keys = remaining
            if self.bundles is not None:
                self.bundles.set_own_keys(self.keys)

    def issue_token(
        self,
        subject: UnifiedIdentity,
        scope: Scope | Mapping,
        context: Mapping[str, str] | None,
        ttl_seconds: int,
        ps: PolicySet,
        now: float | None = None,
    ) -> TransactionToken:
        scope = Scope.from_dict(scope)
        context = _str_map("context", context)
        kind = subject.kind.value
        if isinstance(ttl_seconds, bool) or not isinstance(ttl_seconds, int) or ttl_seconds <= 0:
            raise TtlExceeded("ttl_seconds must be a positive integer")
        if ttl_seconds > self.max_ttl[kind]:
            raise TtlExceeded(
                f"ttl {ttl_seconds}s exceeds the {self.max_ttl[kind]}s maximum for {kind} identities",
                max_ttl=self.max_ttl[kind],
            )
        iat = int(self.clock() if now is None else now)
        request = RequestContext(
            subject=subject.subject_attributes(),
            action=ISSUE_ACTION,
            resource={"id": scope.resource},
            context={**context, "requested_actions": ",".join(scope.actions)},
        )
        decision = evaluate(ps, request)
        if not decision.permitted:
            self.audit.append("issuance", request=request, decision=decision, timestamp=iat)
            raise PolicyDenied(decision)
        key = self.signing_key
        unsigned = TransactionToken(
            txn=str(uuid.uuid4()), sub=subject.canonical_uri, kind=kind, td=self.trust_domain,
            scope=scope, context=context, iat=iat, exp=iat + ttl_seconds, kid=key.kid,
        )
        token = TransactionToken(**{**unsigned.__dict__, "signature": key.sign(unsigned.signing_input())})
        self.audit.append("issuance", request=request, decision=decision, txn=token.txn, timestamp=iat,
                          detail={"sub": token.sub, "exp": token.exp, "kid": token.kid})
        return token

    def revoke_token(self, txn: str, exp: int, now: float | None = None) -> RevocationList:
        if not isinstance(txn, str) or not txn:
            raise MalformedRequest("txn must be a non-empty string")
        self.revocations.revoke(txn, int(exp))
        self.audit.append("revocation", txn=txn, detail={"exp": int(exp)},
                          timestamp=self.clock() if now is None else now)
        return self.revocations

    def validate(self, compact: str, bundles: BundleStore, now: float | None = None,
                 skew: int = DEFAULT_SKEW) -> TransactionToken:
        return validate_token(compact, bundles, self.clock() if now is None else now, self.revocations, skew)
