from __future__ import annotations

import json
import subprocess

import pytest

from icp.audit import (
    GENESIS_HASH,
    AuditLog,
    read_records,
    replay,
    replay_log,
    verify_bytes,
    verify_chain,
)
from icp.errors import ChainInvalid, StorageFailure
from icp.policy import RequestContext, evaluate, parse_policy_set

BASE = parse_policy_set('permit deploys when action == "deploy";')


def external_sha256(data: bytes) -> str:
    out = subprocess.run(["sha256sum"], input=data, capture_output=True, check=True)
    return out.stdout.split()[0].decode()


def oracle_record_bytes(line: bytes) -> bytes:
    """prev_hash bytes followed by the record re-serialized without its hash, built by hand."""
    obj = json.loads(line)
    prev = bytes.fromhex(obj["prev_hash"])
    del obj["hash"]
    return prev + json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode()


def fill(log: AuditLog, n: int, ps=BASE) -> None:
    for i in range(n):
        r = RequestContext({"uri": f"spiffe://a/s{i}"}, "deploy", {"id": "svc"},
                           {"environment": ("prod", "staging", "dev")[i % 3], "i": str(i)})
        kind = "simulation" if i % 5 == 4 else "decision"
        log.append(kind, request=r, decision=evaluate(ps, r), timestamp=1_700_000_000 + i)


@pytest.fixture
def log(tmp_path):
    lg = AuditLog(tmp_path / "audit.log", fsync=False)
    yield lg
    lg.close()


class TestAppend:
    def test_genesis(self, log):
        rec = log.append("revocation", txn="t1", timestamp=5)
        assert rec.seq == 1 and rec.prev_hash == GENESIS_HASH and rec.timestamp == 5

    def test_chain_link(self, log):
        r1 = log.append("revocation", txn="t1")
        r2 = log.append("revocation", txn="t2")
        assert r2.seq == 2 and r2.prev_hash == r1.hash

    def test_durable_before_return(self, log):
        rec = log.append("revocation", txn="t1")
        assert read_records(log.path)[-1].hash == rec.hash

    def test_external_hash_oracle(self, log):
        fill(log, 12)
        for line in log.path.read_bytes().splitlines():
            assert json.loads(line)["hash"] == external_sha256(oracle_record_bytes(line))

    def test_rejects_unknown_kind(self, log):
        with pytest.raises(ValueError):
            log.append("gossip")

    def test_policy_version_from_decision(self, log):
        fill(log, 1)
        assert log.records()[0].policy_version == BASE.version

    def test_reopen_continues_chain(self, tmp_path):
        path = tmp_path / "audit.log"
        with_log = AuditLog(path, fsync=True)
        fill(with_log, 3)
        with_log.close()
        again = AuditLog(path)
        assert again.last_seq == 3 and again.count("decision") == 3
        again.append("revocation", txn="x")
        again.close()
        assert verify_chain(path) is None

    def test_refuses_to_open_broken_log(self, tmp_path, log):
        fill(log, 3)
        data = bytearray(log.path.read_bytes())
        data[10] ^= 1
        broken = tmp_path / "broken.log"
        broken.write_bytes(bytes(data))
        with pytest.raises(ChainInvalid):
            AuditLog(broken)

    def test_storage_failure(self, log):
        log._fh.close()
        log._fh = open(log.path, "rb")
        with pytest.raises(StorageFailure):
            log.append("revocation", txn="x")

    def test_append_only(self, log):
        sizes = []
        for i in range(5):
            prefix = log.path.read_bytes() if log.path.exists() else b""
            log.append("revocation", txn=str(i))
            data = log.path.read_bytes()
            assert data.startswith(prefix)
            sizes.append(len(data))
        assert sizes == sorted(sizes)


class TestVerify:
    def test_empty_and_missing(self, tmp_path):
        assert verify_chain(tmp_path / "none.log") is None
        (tmp_path / "empty.log").write_bytes(b"")
        assert verify_chain(tmp_path / "empty.log") is None

    def test_hundred_records(self, log):
        fill(log, 100)
        assert verify_chain(log.path) is None
        prev = GENESIS_HASH
        for line in log.path.read_bytes().splitlines():
            obj = json.loads(line)
            assert obj["prev_hash"] == prev
            assert obj["hash"] == external_sha256(oracle_record_bytes(line))
            prev = obj["hash"]

    def test_record_seven_request_mutation(self, log):
        fill(log, 10)
        lines = log.path.read_bytes().splitlines(keepends=True)
        obj = json.loads(lines[6])
        assert obj["seq"] == 7
        lines[6] = lines[6].replace(b'"environment":"', b'"environment":"X', 1)
        log.path.write_bytes(b"".join(lines))
        assert verify_chain(log.path) == 7

    def test_every_bit_flip_detected_at_or_before(self, log):
        fill(log, 6)
        data = log.path.read_bytes()
        line_of = []
        for seq, line in enumerate(data.splitlines(keepends=True), start=1):
            line_of += [seq] * len(line)
        for pos in range(len(data)):
            for bit in range(8):
                mutated = bytearray(data)
                mutated[pos] ^= 1 << bit
                bad = verify_bytes(bytes(mutated))
                assert bad is not None and bad <= line_of[pos], (pos, bit)

    def test_truncation_and_deletion(self, log):
        fill(log, 5)
        data = log.path.read_bytes()
        assert verify_bytes(data[:-1]) == 5
        lines = data.splitlines(keepends=True)
        assert verify_bytes(b"".join(lines[:2] + lines[3:])) == 3
        assert verify_bytes(b"".join(lines[:4])) is None  # a clean prefix is a valid shorter log

    def test_read_records_verifies(self, log):
        fill(log, 3)
        log.path.write_bytes(log.path.read_bytes().replace(b"deploy", b"delete", 1))
        with pytest.raises(ChainInvalid):
            read_records(log.path)
        assert log.verify() == 1


class TestReplay:
    def test_self_replay_is_empty(self, log):
        fill(log, 20)
        report = replay_log(log.path, BASE)
        assert report.entries == () and report.replayed == 16

    def test_prod_deny_flips_exactly_prod_decisions(self, log):
        fill(log, 15)
        new = parse_policy_set(BASE.source + 'deny prod when context.environment == "prod";\n')
        report = log.replay(new)
        expected = [r.seq for r in read_records(log.path)
                    if r.kind == "decision" and r.request["context"]["environment"] == "prod"]
        assert [e.seq for e in report.entries] == expected
        assert all(e.old_outcome == "permit" and e.new_outcome == "deny" for e in report.entries)
        assert all(e.differing_policy_ids == ("prod",) for e in report.entries)
        assert report.old_version == BASE.version and report.new_version == new.version

    def test_soundness_against_direct_evaluation(self, log):
        old = parse_policy_set('permit a when context.environment != "dev";\ndeny b when context.i == "3";')
        fill(log, 20, old)
        new = parse_policy_set('permit a when context.environment == "dev";\ndeny c when context.i >= 17;')
        records = read_records(log.path)
        report = replay(records, new)
        by_seq = {r.seq: r for r in records}
        flipped = set()
        for e in report.entries:
            req = RequestContext.from_dict(by_seq[e.seq].request)
            assert evaluate(old, req).outcome == e.old_outcome
            assert evaluate(new, req).outcome == e.new_outcome
            flipped.add(e.seq)
        for r in records:
            if r.kind == "decision" and r.seq not in flipped:
                req = RequestContext.from_dict(r.request)
                assert evaluate(old, req).outcome == evaluate(new, req).outcome
        assert flipped

    def test_ignores_simulations(self, log):
        fill(log, 10)
        deny_all = parse_policy_set("deny all when true;")
        seqs = {e.seq for e in log.replay(deny_all).entries}
        kinds = {r.seq: r.kind for r in log.records()}
        assert seqs and all(kinds[s] == "decision" for s in seqs)
        assert len(seqs) == sum(1 for k in kinds.values() if k == "decision")

    def test_refuses_tampered_log(self, log):
        fill(log, 4)
        log.path.write_bytes(log.path.read_bytes().replace(b"staging", b"stagin9", 1))
        with pytest.raises(ChainInvalid):
            log.replay(BASE)
        with pytest.raises(ChainInvalid):
            replay_log(log.path, BASE)


def test_records_range(log):
    fill(log, 10)
    assert [r.seq for r in log.records(3, 5)] == [3, 4, 5]
    assert [r.seq for r in log.records(from_seq=9)] == [9, 10]
    assert log.count("simulation") == 2 and log.count("decision") == 8
