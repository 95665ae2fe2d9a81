from __future__ import annotations

import json
import os
import stat

import pytest

from icp.audit import AuditLog, read_records
from icp.broker import (
    Broker,
    KeyPair,
    RevocationList,
    Scope,
    TransactionToken,
    load_keys,
    load_or_create_keys,
    parse_token,
    save_keys,
    validate_token,
)
from icp.canonical import b64url_decode, b64url_encode, canonical_json
from icp.errors import (
    Expired,
    MalformedScope,
    MalformedToken,
    NotYetValid,
    PolicyDenied,
    Revoked,
    SignatureInvalid,
    TokenError,
    TtlExceeded,
    UnknownKey,
    UnknownTrustDomain,
)
from icp.federation import BundleStore, key_id
from icp.identity import normalize
from icp.policy import parse_policy_set

TD = "a.example.org"
T0 = 1_700_000_000
ISSUE_POLICIES = parse_policy_set(
    'permit ci when action == "token.issue" and subject.kind == "automation";\n'
    'permit people when action == "token.issue" and subject.kind == "human";\n'
    'deny no-prod when context.environment == "prod";\n'
)
CI = normalize({"kind": "automation", "platform": "ci", "pipeline": "deploy-payments", "run_id": "4242"}, TD)
SCOPE = {"resource": "deploy/payments", "actions": ["deploy"]}
GIT = {"git.sha": "abc123", "git.branch": "main", "git.actor": "alice", "environment": "staging"}


@pytest.fixture
def broker(tmp_path):
    key = KeyPair.generate()
    audit = AuditLog(tmp_path / "audit.log", fsync=False)
    store = BundleStore(TD, [key])
    b = Broker(TD, [key], audit, bundles=store, clock=lambda: T0)
    yield b
    audit.close()


class TestIssue:
    def test_expiry_arithmetic(self, broker):
        tok = broker.issue_token(CI, SCOPE, GIT, 300, ISSUE_POLICIES)
        assert (tok.iat, tok.exp) == (T0, T0 + 300)
        assert len(tok.kid) == 16 and tok.kid == broker.signing_key.kid

    def test_git_context_carried(self, broker):
        tok = broker.issue_token(CI, SCOPE, GIT, 300, ISSUE_POLICIES)
        claims = validate_token(tok.compact, broker.bundles, T0 + 1).claims()
        assert {k: claims["context"][k] for k in ("git.sha", "git.branch", "git.actor")} == {
            "git.sha": "abc123", "git.branch": "main", "git.actor": "alice"}

    def test_policy_denied_names_policy(self, broker):
        with pytest.raises(PolicyDenied) as exc:
            broker.issue_token(CI, SCOPE, {**GIT, "environment": "prod"}, 300, ISSUE_POLICIES)
        trace = exc.value.decision.trace
        assert [t.policy_id for t in trace if t.matched and t.effect == "deny"] == ["no-prod"]

    def test_issuance_request_shape(self, broker):
        broker.issue_token(CI, {"resource": "r", "actions": ["a", "b"]}, {}, 10, ISSUE_POLICIES)
        rec = broker.audit.records()[-1]
        assert rec.kind == "issuance"
        assert rec.request["action"] == "token.issue"
        assert rec.request["resource"] == {"id": "r"}
        assert rec.request["context"]["requested_actions"] == "a,b"
        assert rec.request["subject"]["uri"] == CI.canonical_uri

    def test_no_permit_denies(self, broker):
        with pytest.raises(PolicyDenied):
            broker.issue_token(CI, SCOPE, {}, 300, parse_policy_set(""))

    @pytest.mark.parametrize("ttl", [0, -1, 301, True, "300"])
    def test_ttl_bounds(self, broker, ttl):
        with pytest.raises(TtlExceeded):
            broker.issue_token(CI, SCOPE, {}, ttl, ISSUE_POLICIES)

    def test_human_ttl_limit(self, broker):
        human = normalize({"kind": "human", "issuer": "https://sso", "subject": "alice"}, TD)
        assert broker.issue_token(human, SCOPE, {}, 3600, ISSUE_POLICIES).exp == T0 + 3600
        with pytest.raises(TtlExceeded):
            broker.issue_token(human, SCOPE, {}, 3601, ISSUE_POLICIES)

    @pytest.mark.parametrize("scope", [
        {}, {"resource": "", "actions": ["a"]}, {"resource": "r", "actions": []},
        {"resource": "r", "actions": [""]}, {"resource": "r", "actions": "deploy"}, "r",
    ])
    def test_malformed_scope(self, broker, scope):
        with pytest.raises(MalformedScope):
            broker.issue_token(CI, scope, {}, 300, ISSUE_POLICIES)

    def test_exactly_one_audit_record_per_issuance(self, broker):
        for i in range(5):
            before = broker.audit.last_seq
            tok = broker.issue_token(CI, SCOPE, {"i": str(i)}, 300, ISSUE_POLICIES)
            assert broker.audit.last_seq == before + 1
            rec = read_records(broker.audit.path)[-1]
            assert rec.kind == "issuance" and rec.txn == tok.txn
        before = broker.audit.last_seq
        with pytest.raises(PolicyDenied):
            broker.issue_token(CI, SCOPE, {"environment": "prod"}, 300, ISSUE_POLICIES)
        assert broker.audit.last_seq == before + 1
        assert broker.audit.records()[-1].txn is None

    def test_txn_unique(self, broker):
        txns = {broker.issue_token(CI, SCOPE, {}, 300, ISSUE_POLICIES).txn for _ in range(50)}
        assert len(txns) == 50


class TestValidate:
    def test_round_trip_byte_identical(self, broker):
        tok = broker.issue_token(CI, SCOPE, GIT, 300, ISSUE_POLICIES)
        back = validate_token(tok.compact, broker.bundles, T0 + 1)
        assert back.claims() == tok.claims()
        assert back.compact == tok.compact
        assert canonical_json(back.payload()) == b64url_decode(tok.compact.split(".")[1])

    def test_compact_layout(self, broker):
        tok = broker.issue_token(CI, SCOPE, GIT, 300, ISSUE_POLICIES)
        h, p, s = tok.compact.split(".")
        assert "=" not in tok.compact
        assert json.loads(b64url_decode(h)) == {"alg": "EdDSA", "kid": tok.kid, "td": TD}
        assert set(json.loads(b64url_decode(p))) == {"txn", "sub", "kind", "scope", "context", "iat", "exp"}
        assert len(b64url_decode(s)) == 64

    def test_skew_boundaries(self, broker):
        tok = broker.issue_token(CI, SCOPE, {}, 60, ISSUE_POLICIES)
        for now in (tok.iat - 30, tok.iat, tok.exp, tok.exp + 30):
            validate_token(tok.compact, broker.bundles, now)
        with pytest.raises(Expired):
            validate_token(tok.compact, broker.bundles, tok.exp + 31)
        with pytest.raises(NotYetValid):
            validate_token(tok.compact, broker.bundles, tok.iat - 31)
        validate_token(tok.compact, broker.bundles, tok.exp + 5, skew=5)
        with pytest.raises(Expired):
            validate_token(tok.compact, broker.bundles, tok.exp + 1, skew=0)

    def test_byte_flips_never_validate(self, broker):
        tok = broker.issue_token(CI, {"resource": "r", "actions": ["a"]}, {}, 10, ISSUE_POLICIES)
        raw = tok.compact.encode("ascii")
        for i in range(len(raw)):
            for delta in (1, 0x20, 0x80):
                mutated = bytearray(raw)
                mutated[i] ^= delta
                with pytest.raises(TokenError):
                    validate_token(mutated.decode("latin-1"), broker.bundles, T0 + 1)

    @pytest.mark.parametrize("compact", ["", "a.b", "a.b.c.d", "!!.??.**", 42])
    def test_garbage(self, broker, compact):
        with pytest.raises(MalformedToken):
            validate_token(compact, broker.bundles, T0)

    def test_non_canonical_segment_rejected(self, broker):
        tok = broker.issue_token(CI, SCOPE, {}, 300, ISSUE_POLICIES)
        h, p, s = tok.compact.split(".")
        spaced = b64url_encode(json.dumps(tok.payload()).encode())
        with pytest.raises(MalformedToken):
            validate_token(f"{h}.{spaced}.{s}", broker.bundles, T0)

    def test_unknown_domain_and_key(self, broker):
        tok = broker.issue_token(CI, SCOPE, {}, 300, ISSUE_POLICIES)
        with pytest.raises(UnknownTrustDomain):
            validate_token(tok.compact, BundleStore("b.example.org", [KeyPair.generate()]), T0)
        with pytest.raises(UnknownKey):
            validate_token(tok.compact, BundleStore(TD, [KeyPair.generate()]), T0)

    def test_unforgeable_under_other_key(self, broker):
        other = KeyPair.generate()
        other_store = BundleStore(TD, [other])
        tok = broker.issue_token(CI, SCOPE, {}, 300, ISSUE_POLICIES)
        # same claims relabelled with the other kid but signed by the original key
        forged = TransactionToken(**{**tok.__dict__, "kid": other.kid, "signature": b""})
        forged = TransactionToken(**{**forged.__dict__, "signature": broker.signing_key.sign(forged.signing_input())})
        with pytest.raises(SignatureInvalid):
            validate_token(forged.compact, other_store, T0)
        with pytest.raises(UnknownKey):
            validate_token(tok.compact, other_store, T0)
        for _ in range(20):
            t = broker.issue_token(CI, SCOPE, {}, 300, ISSUE_POLICIES)
            with pytest.raises(TokenError):
                validate_token(t.compact, other_store, T0)

    def test_parse_does_not_verify(self, broker):
        tok = broker.issue_token(CI, SCOPE, {}, 300, ISSUE_POLICIES)
        parsed, signing_input = parse_token(tok.compact)
        assert parsed == tok and signing_input == tok.signing_input()


class TestRevocation:
    def test_revoke_then_validate(self, broker):
        tok = broker.issue_token(CI, SCOPE, {}, 300, ISSUE_POLICIES)
        broker.revoke_token(tok.txn, tok.exp)
        with pytest.raises(Revoked):
            broker.validate(tok.compact, broker.bundles, T0 + 1)
        assert broker.audit.records()[-1].kind == "revocation"

    def test_idempotent(self):
        rl = RevocationList()
        rl.revoke("t", 100)
        snap = rl.snapshot()
        rl.revoke("t", 100)
        assert rl.snapshot() == snap and len(rl) == 1

    def test_gc_then_expiry_dominates(self, broker):
        tok = broker.issue_token(CI, SCOPE, {}, 300, ISSUE_POLICIES)
        broker.revoke_token(tok.txn, tok.exp)
        rl = broker.revocations
        assert rl.gc(tok.exp + 30) == 0 and tok.txn in rl
        assert rl.gc(tok.exp + 31) == 1 and tok.txn not in rl
        with pytest.raises(Expired):
            validate_token(tok.compact, broker.bundles, tok.exp + 31, rl)

    def test_membership_exact(self):
        rl = RevocationList()
        rl.revoke("abc", 1)
        assert "abc" in rl and "ab" not in rl and "abcd" not in rl


class TestKeys:
    def test_kid_is_sha256_prefix(self):
        import hashlib

        k = KeyPair.generate()
        assert k.kid == hashlib.sha256(k.public_key).hexdigest()[:16] == key_id(k.public_key)

    def test_key_file_round_trip_and_mode(self, tmp_path):
        path = tmp_path / "k" / "keys.json"
        keys = load_or_create_keys(path)
        assert stat.S_IMODE(os.stat(path).st_mode) == 0o600
        assert [k.kid for k in load_or_create_keys(path)] == [k.kid for k in keys]
        extra = KeyPair.generate()
        save_keys(path, keys + [extra])
        assert [k.kid for k in load_keys(path)] == [keys[0].kid, extra.kid]

    def test_private_key_not_in_repr(self):
        k = KeyPair.generate()
        assert b64url_encode(k.private_key) not in repr(k)

    def test_rotation_signs_with_newest(self, broker):
        old = broker.issue_token(CI, SCOPE, {}, 300, ISSUE_POLICIES)
        new_key = broker.add_key()
        new = broker.issue_token(CI, SCOPE, {}, 300, ISSUE_POLICIES)
        assert new.kid == new_key.kid != old.kid
        validate_token(old.compact, broker.bundles, T0)
        validate_token(new.compact, broker.bundles, T0)
        broker.remove_key(old.kid)
        with pytest.raises(UnknownKey):
            validate_token(old.compact, broker.bundles, T0)
        with pytest.raises(ValueError):
            broker.remove_key(new_key.kid)


def test_scope_allows():
    s = Scope.from_dict({"resource": "deploy/payments", "actions": ["deploy", "read"]})
    assert s.allows("deploy", "deploy/payments")
    assert not s.allows("delete", "deploy/payments")
    assert not s.allows("deploy", "deploy/payments/x")
