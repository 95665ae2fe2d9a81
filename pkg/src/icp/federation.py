"""Trust bundles (per-domain verification keys) and the store used to resolve token keys.

Federation is default-closed and unidirectional: a domain's tokens verify here
only after its bundle has been imported, and a bundle replaces the stored one
only when its sequence is strictly higher.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Iterable, Mapping

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

from .canonical import b64url_decode, b64url_encode, canonical_json
from .errors import (
    MalformedBundle,
    NotFederated,
    SelfImport,
    StaleBundle,
    UnknownKey,
    UnknownTrustDomain,
)
from .identity import validate_trust_domain

if TYPE_CHECKING:
    from .audit import AuditLog

ALGORITHM = "Ed25519"
DEFAULT_REFRESH_HINT = 300


def key_id(public_key: bytes) -> str:
    return hashlib.sha256(public_key).digest()[:8].hex()


@dataclass(frozen=True)
class BundleKey:
    kid: str
    public_key: bytes
    algorithm: str = ALGORITHM

    def to_dict(self) -> dict[str, str]:
        return {"kid": self.kid, "algorithm": self.algorithm, "public_key": b64url_encode(self.public_key)}


@dataclass(frozen=True)
class TrustBundle:
    trust_domain: str
    sequence: int
    keys: tuple[BundleKey, ...]
    refresh_hint_seconds: int = DEFAULT_REFRESH_HINT

    def to_dict(self) -> dict[str, Any]:
        return {
            "trust_domain": self.trust_domain,
            "sequence": self.sequence,
            "refresh_hint_seconds": self.refresh_hint_seconds,
            "keys": [k.to_dict() for k in self.keys],
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict()).decode("utf-8")

    @classmethod
    def from_json(cls, text: str | bytes) -> "TrustBundle":
        try:
            data = json.loads(text)
        except ValueError as exc:
            raise MalformedBundle(f"bundle is not JSON: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: Any) -> "TrustBundle":
        if not isinstance(data, Mapping):
            raise MalformedBundle("bundle must be an object")
        td = data.get("trust_domain")
        try:
            validate_trust_domain(td)
        except Exception as exc:
            raise MalformedBundle(f"invalid trust_domain {td!r}") from exc
        seq = data.get("sequence")
        hint = data.get("refresh_hint_seconds", DEFAULT_REFRESH_HINT)
        for name, value, low in (("sequence", seq, 1), ("refresh_hint_seconds", hint, 0)):
            if isinstance(value, bool) or not isinstance(value, int) or value < low:
                raise MalformedBundle(f"{name} must be an integer >= {low}")
        raw_keys = data.get("keys")
        if not isinstance(raw_keys, list) or not raw_keys:
            raise MalformedBundle("keys must be a non-empty list")
        keys = []
        for entry in raw_keys:
            if not isinstance(entry, Mapping):
                raise MalformedBundle("key entry must be an object")
            if entry.get("algorithm") != ALGORITHM:
                raise MalformedBundle(f"unsupported key algorithm {entry.get('algorithm')!r}")
            try:
                pub = b64url_decode(str(entry.get("public_key", "")))
            except ValueError as exc:
                raise MalformedBundle("public_key is not base64url") from exc
            if len(pub) != 32:
                raise MalformedBundle("Ed25519 public keys are 32 bytes")
            if entry.get("kid") != key_id(pub):
                raise MalformedBundle(f"kid {entry.get('kid')!r} does not match its public key")
            keys.append(BundleKey(entry["kid"], pub))
        if len({k.kid for k in keys}) != len(keys):
            raise MalformedBundle("duplicate kid in bundle")
        return cls(td, seq, tuple(keys), hint)


class BundleStore:
    """Own-domain bundle plus imported peer bundles.

    Each domain's entry is replaced as a whole by swapping in a new mapping, so
    concurrent readers see either the previous or the next bundle.
    """

    def __init__(self, own_domain: str, own_keys: Iterable, refresh_hint_seconds: int = DEFAULT_REFRESH_HINT):
        self.own_domain = validate_trust_domain(own_domain)
        self.refresh_hint_seconds = refresh_hint_seconds
        self._lock = threading.Lock()
        self._entries: dict[str, tuple[TrustBundle, dict[str, Ed25519PublicKey]]] = {}
        self._install(TrustBundle(own_domain, 1, _bundle_keys(own_keys), refresh_hint_seconds))

    @classmethod
    def from_bundles(cls, bundles: Iterable[TrustBundle]) -> "BundleStore":
        """Verification-only store for offline use; the first bundle stands in as the own domain."""
        bundles = list(bundles)
        if not bundles:
            raise MalformedBundle("need at least one bundle")
        first = bundles[0]
        store = cls(first.trust_domain, first.keys, first.refresh_hint_seconds)
        store._install(first)
        for b in bundles[1:]:
            store.import_bundle(b)
        return store

    def _install(self, bundle: TrustBundle) -> None:
        resolved = {k.kid: Ed25519PublicKey.from_public_bytes(k.public_key) for k in bundle.keys}
        entries = dict(self._entries)
        entries[bundle.trust_domain] = (bundle, resolved)
        self._entries = entries

    def set_own_keys(self, keys: Iterable) -> TrustBundle:
        """Replace own verification keys (rotation); bumps the sequence."""
        with self._lock:
            current = self._entries[self.own_domain][0]
            bundle = TrustBundle(self.own_domain, current.sequence + 1, _bundle_keys(keys),
                                 self.refresh_hint_seconds)
            self._install(bundle)
            return bundle

    def get(self, trust_domain: str) -> TrustBundle | None:
        entry = self._entries.get(trust_domain)
        return entry[0] if entry else None

    def domains(self) -> list[str]:
        return sorted(self._entries)

    def lookup(self, trust_domain: str, kid: str) -> Ed25519PublicKey:
        entry = self._entries.get(trust_domain)
        if entry is None:
            raise UnknownTrustDomain(f"trust domain {trust_domain!r} is not federated", trust_domain=trust_domain)
        key = entry[1].get(kid)
        if key is None:
            raise UnknownKey(f"no key {kid!r} in bundle for {trust_domain!r}", trust_domain=trust_domain, kid=kid)
        return key

    def import_bundle(self, bundle: TrustBundle) -> TrustBundle:
        if bundle.trust_domain == self.own_domain:
            raise SelfImport("refusing to import a bundle for the local trust domain")
        with self._lock:
            current = self.get(bundle.trust_domain)
            if current is not None and bundle.sequence <= current.sequence:
                raise StaleBundle(
                    f"bundle sequence {bundle.sequence} is not newer than {current.sequence}",
                    trust_domain=bundle.trust_domain, sequence=bundle.sequence, current=current.sequence,
                )
            self._install(bundle)
        return bundle

    def remove(self, trust_domain: str) -> TrustBundle:
        if trust_domain == self.own_domain:
            raise SelfImport("refusing to remove the local trust domain")
        with self._lock:
            entry = self._entries.get(trust_domain)
            if entry is None:
                raise NotFederated(f"trust domain {trust_domain!r} is not federated", trust_domain=trust_domain)
            entries = dict(self._entries)
            del entries[trust_domain]
            self._entries = entries
            return entry[0]


def _bundle_keys(keys: Iterable) -> tuple[BundleKey, ...]:
    out = []
    for k in keys:
        if isinstance(k, BundleKey):
            out.append(k)
        else:  # KeyPair-like
            out.append(BundleKey(k.kid, k.public_key))
    if not out:
        raise MalformedBundle("a trust bundle needs at least one key")
    return tuple(out)


def export_bundle(store: BundleStore) -> TrustBundle:
    return store.get(store.own_domain)


def import_bundle(store: BundleStore, bundle: TrustBundle | Mapping | str,
                  audit: "AuditLog | None" = None) -> BundleStore:
    if isinstance(bundle, str):
        bundle = TrustBundle.from_json(bundle)
    elif not isinstance(bundle, TrustBundle):
        bundle = TrustBundle.from_dict(bundle)
    store.import_bundle(bundle)
    if audit is not None:
        audit.append("bundle_sync", detail={
            "op": "import", "trust_domain": bundle.trust_domain, "sequence": bundle.sequence,
            "kids": [k.kid for k in bundle.keys],
        })
    return store


def remove_federation(store: BundleStore, trust_domain: str, audit: "AuditLog | None" = None) -> BundleStore:
    removed = store.remove(trust_domain)
    if audit is not None:
        audit.append("bundle_sync", detail={
            "op": "remove", "trust_domain": trust_domain, "sequence": removed.sequence,
        })
    return store
