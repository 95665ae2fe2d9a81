"""Append-only, hash-chained audit log stored as newline-delimited canonical JSON.

Each record's ``hash`` is ``SHA-256(prev_hash_bytes || canonical_json(record - hash))``;
the first record chains from 64 zero hex digits. Verification re-reads the file
byte-for-byte, so any mutation (including one that re-parses to the same value)
is reported at or before the damaged record.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from .canonical import canonical_json
from .errors import ChainInvalid, StorageFailure
from .policy import Decision, PolicySet, RequestContext, evaluate

GENESIS_HASH = "0" * 64
RECORD_KINDS = ("issuance", "decision", "simulation", "revocation", "bundle_sync", "policy_reload")
_OPTIONAL = ("request", "decision", "txn", "policy_version", "detail")


@dataclass(frozen=True)
class AuditRecord:
    seq: int
    timestamp: int
    kind: str
    prev_hash: str
    hash: str
    request: dict | None = None
    decision: dict | None = None
    txn: str | None = None
    policy_version: str | None = None
    detail: dict | None = None

    def body(self) -> dict[str, Any]:
        """The hashed portion: every field except ``hash``; absent optionals omitted."""
        d: dict[str, Any] = {
            "seq": self.seq,
            "timestamp": self.timestamp,
            "kind": self.kind,
            "prev_hash": self.prev_hash,
        }
        for name in _OPTIONAL:
            value = getattr(self, name)
            if value is not None:
                d[name] = value
        return d

    def to_dict(self) -> dict[str, Any]:
        d = self.body()
        d["hash"] = self.hash
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AuditRecord":
        return cls(
            seq=d["seq"], timestamp=d["timestamp"], kind=d["kind"],
            prev_hash=d["prev_hash"], hash=d["hash"],
            **{name: d.get(name) for name in _OPTIONAL},
        )


def record_hash(prev_hash: str, body: Mapping[str, Any]) -> str:
    return hashlib.sha256(bytes.fromhex(prev_hash) + canonical_json(body)).hexdigest()


def _check_line(raw: bytes, seq: int, prev_hash: str) -> dict | None:
    try:
        obj = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, ValueError):
        return None
    if not isinstance(obj, dict) or canonical_json(obj) != raw:
        return None
    if obj.get("seq") != seq or obj.get("prev_hash") != prev_hash or obj.get("kind") not in RECORD_KINDS:
        return None
    stored = obj.pop("hash", None)
    try:
        expected = record_hash(prev_hash, obj)
    except ValueError:
        return None
    if stored != expected:
        return None
    obj["hash"] = stored
    return obj


def _scan(data: bytes) -> tuple[list[dict], int | None]:
    """Return the valid prefix of records and the first bad seq (None if all good)."""
    if not data:
        return [], None
    lines = data.split(b"\n")
    complete = data.endswith(b"\n")
    if complete:
        lines.pop()
    records: list[dict] = []
    prev = GENESIS_HASH
    for i, raw in enumerate(lines, start=1):
        if i == len(lines) and not complete:
            return records, i
        obj = _check_line(raw, i, prev)
        if obj is None:
            return records, i
        records.append(obj)
        prev = obj["hash"]
    return records, None


def verify_bytes(data: bytes) -> int | None:
    """Chain check over raw log contents; the lowest failing seq, or None when intact."""
    return _scan(data)[1]


def verify_chain(path: str | Path) -> int | None:
    """Recompute the chain; return the lowest failing seq, or None when intact.

    A missing file is an empty, valid log.
    """
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        return None
    return verify_bytes(data)


def read_records(path: str | Path, *, verify: bool = True) -> list[AuditRecord]:
    """Load every record. With ``verify``, a broken chain raises ChainInvalid."""
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        return []
    if verify:
        records, bad = _scan(data)
        if bad is not None:
            raise ChainInvalid(f"audit chain broken at seq {bad}", first_bad_seq=bad)
        return [AuditRecord.from_dict(r) for r in records]
    out = []
    for raw in data.splitlines():
        try:
            out.append(AuditRecord.from_dict(json.loads(raw)))
        except (ValueError, KeyError, TypeError):
            continue
    return out


@dataclass(frozen=True)
class Divergence:
    seq: int
    old_outcome: str
    new_outcome: str
    differing_policy_ids: tuple[str, ...]
    old_version: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "old_outcome": self.old_outcome,
            "new_outcome": self.new_outcome,
            "differing_policy_ids": list(self.differing_policy_ids),
            "old_version": self.old_version,
        }


@dataclass(frozen=True)
class DivergenceReport:
    old_version: str | None
    new_version: str
    entries: tuple[Divergence, ...] = ()
    replayed: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "old_version": self.old_version,
            "new_version": self.new_version,
            "replayed": self.replayed,
            "entries": [e.to_dict() for e in self.entries],
        }


def _trace_status(decision: Mapping[str, Any]) -> dict[str, tuple[bool, str]]:
    return {t["policy_id"]: (t["matched"], t["effect"]) for t in decision.get("trace", ())}


def replay(records: Iterable[AuditRecord], ps_new: PolicySet) -> DivergenceReport:
    """Re-evaluate recorded enforcement decisions under ``ps_new``.

    Only ``decision`` records whose outcome came from policy evaluation are
    replayed; simulations and scope/token rejections are skipped.
    """
    entries = []
    old_version = None
    replayed = 0
    for rec in records:
        if rec.kind != "decision" or rec.request is None or rec.decision is None:
            continue
        if rec.decision.get("reason") is not None:
            continue
        replayed += 1
        old_version = rec.decision["policy_version"]
        new = evaluate(ps_new, RequestContext.from_dict(rec.request))
        if new.outcome == rec.decision["outcome"]:
            continue
        old_status = _trace_status(rec.decision)
        new_status = _trace_status(new.to_dict())
        ids = list(old_status) + [pid for pid in new_status if pid not in old_status]
        differing = tuple(pid for pid in ids if old_status.get(pid) != new_status.get(pid))
        entries.append(Divergence(rec.seq, rec.decision["outcome"], new.outcome, differing, old_version))
    return DivergenceReport(old_version, ps_new.version, tuple(entries), replayed)


def replay_log(path: str | Path, ps_new: PolicySet) -> DivergenceReport:
    return replay(read_records(path, verify=True), ps_new)


class AuditLog:
    """File-backed audit log with a single-writer append path.

    ``append`` returns only after the record is written, flushed and (by
    default) fsynced. Opening an existing file verifies it first and refuses a
    broken chain.
    """

    def __init__(self, path: str | Path, *, fsync: bool = True, clock: Callable[[], float] = time.time):
        self.path = Path(path)
        self.fsync = fsync
        self.clock = clock
        self._lock = threading.Lock()
        records, bad = _scan(self.path.read_bytes()) if self.path.exists() else ([], None)
        if bad is not None:
            raise ChainInvalid(f"audit log {self.path} is broken at seq {bad}", first_bad_seq=bad)
        self._seq = len(records)
        self._last_hash = records[-1]["hash"] if records else GENESIS_HASH
        self._counts: dict[str, int] = {}
        for r in records:
            self._counts[r["kind"]] = self._counts.get(r["kind"], 0) + 1
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "ab")
        except OSError as exc:
            raise StorageFailure(f"cannot open audit log: {exc}") from exc

    @property
    def last_seq(self) -> int:
        return self._seq

    def count(self, kind: str) -> int:
        return self._counts.get(kind, 0)

    def append(
        self,
        kind: str,
        *,
        request: RequestContext | Mapping | None = None,
        decision: Decision | Mapping | None = None,
        txn: str | None = None,
        policy_version: str | None = None,
        detail: Mapping | None = None,
        timestamp: float | None = None,
    ) -> AuditRecord:
        if kind not in RECORD_KINDS:
            raise ValueError(f"unknown audit record kind {kind!r}")
        if isinstance(request, RequestContext):
            request = request.to_dict()
        if isinstance(decision, Decision):
            decision = decision.to_dict()
        if policy_version is None and decision is not None:
            policy_version = decision["policy_version"]
        ts = int(self.clock() if timestamp is None else timestamp)
        with self._lock:
            body = AuditRecord(
                self._seq + 1, ts, kind, self._last_hash, "",
                dict(request) if request is not None else None,
                dict(decision) if decision is not None else None,
                txn, policy_version,
                dict(detail) if detail is not None else None,
            ).body()
            digest = record_hash(self._last_hash, body)
            body["hash"] = digest
            line = canonical_json(body) + b"\n"
            try:
                self._fh.write(line)
                self._fh.flush()
                if self.fsync:
                    os.fsync(self._fh.fileno())
            except OSError as exc:
                raise StorageFailure(f"audit append failed: {exc}") from exc
            self._seq += 1
            self._last_hash = digest
            self._counts[kind] = self._counts.get(kind, 0) + 1
        return AuditRecord.from_dict(body)

    def records(self, from_seq: int | None = None, to_seq: int | None = None) -> list[AuditRecord]:
        with self._lock:
            records = read_records(self.path, verify=False)
        out = []
        for rec in records:
            if from_seq is not None and rec.seq < from_seq:
                continue
            if to_seq is not None and rec.seq > to_seq:
                break
            out.append(rec)
        return out

    def verify(self) -> int | None:
        with self._lock:
            return verify_chain(self.path)

    def replay(self, ps_new: PolicySet) -> DivergenceReport:
        with self._lock:
            data = self.path.read_bytes()
        records, bad = _scan(data)
        if bad is not None:
            raise ChainInvalid(f"audit chain broken at seq {bad}", first_bad_seq=bad)
        return replay((AuditRecord.from_dict(r) for r in records), ps_new)

    def close(self) -> None:
        with self._lock:
            self._fh.close()
