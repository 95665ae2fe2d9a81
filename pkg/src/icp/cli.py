"""``icpctl``: operator/developer front-end for ``icpd``.

Daemon-backed commands talk to ``--daemon`` (or ``$ICPCTL_DAEMON``, or the
``listen`` address in ``--config``). Offline modes need no daemon:
``identity normalize``, ``policy lint``, ``policy eval --policies``,
``token validate --bundle``, ``audit verify|replay|tail --log`` and ``bench``.

Exit codes: 0 success, 1 operation error (or lint warnings / broken chain), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Any, Callable, Sequence

from .audit import read_records, replay_log, verify_chain
from .broker import DEFAULT_SKEW, RevocationList, validate_token
from .canonical import canonical_str
from .client import DEFAULT_DAEMON, ENV_DAEMON, DaemonClient, DaemonError
from .errors import ICPError
from .federation import BundleStore, TrustBundle
from .identity import AutomationAssertion, HumanAssertion, normalize_automation, normalize_human, normalize_spiffe
from .policy import PolicySet, RequestContext, evaluate, lint, load_policy_dir, parse_policy_set


class UsageError(Exception):
    pass


class Output:
    def __init__(self, as_json: bool, stream=None):
        self.as_json = as_json
        self.stream = stream or sys.stdout

    def emit(self, data: Any, text: str | Callable[[], str] | None = None) -> None:
        if self.as_json or text is None:
            print(canonical_str(data), file=self.stream)
        else:
            print(text() if callable(text) else text, file=self.stream)


def _kv_pairs(items: Sequence[str] | None, flag: str) -> dict[str, str]:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"{flag} expects KEY=VALUE, got {item!r}")
        out[key] = value
    return out


def _json_arg(value: str, what: str) -> Any:
    """Inline JSON, ``@path`` to a JSON file, or ``-`` for stdin."""
    try:
        if value == "-":
            return json.load(sys.stdin)
        if value.startswith("@"):
            return json.loads(Path(value[1:]).read_text(encoding="utf-8"))
        return json.loads(value)
    except (OSError, ValueError) as exc:
        raise UsageError(f"{what}: not valid JSON ({exc})") from exc


def _load_policies(path: str) -> PolicySet:
    p = Path(path)
    if p.is_dir():
        return load_policy_dir(p)
    return parse_policy_set(p.read_text(encoding="utf-8"))


def _daemon(args) -> DaemonClient:
    url = getattr(args, "daemon", None)
    if not url and getattr(args, "config", None):
        from .service.config import load_config

        url = load_config(args.config).url
    return DaemonClient(url or None)


def _now(args) -> float:
    now = getattr(args, "now", None)
    return time.time() if now is None else now


def _format_decision(d: dict) -> str:
    lines = [f"outcome: {d['outcome']}" + (f" ({d['reason']})" if d.get("reason") else "")]
    lines.append(f"policy_version: {d['policy_version']}")
    for t in d.get("trace", ()):
        mark = "x" if t["matched"] else " "
        lines.append(f"  [{mark}] {t['effect']:<6} {t['policy_id']}")
    return "\n".join(lines)


# identity


def cmd_identity_normalize(args, out: Output) -> int:
    if args.spiffe:
        ident = normalize_spiffe(args.spiffe, _kv_pairs(args.attr, "--attr"))
    elif args.issuer or args.subject:
        ident = normalize_human(HumanAssertion(args.issuer or "", args.subject or "",
                                               _kv_pairs(args.claim, "--claim")), args.trust_domain)
    elif args.platform or args.pipeline or args.run_id:
        ident = normalize_automation(
            AutomationAssertion(args.platform or "", args.pipeline or "", args.run_id or "",
                                _kv_pairs(args.claim, "--claim")),
            args.trust_domain,
        )
    else:
        raise UsageError("give --spiffe, --issuer/--subject or --platform/--pipeline/--run-id")
    d = ident.to_dict()
    out.emit(d, lambda: "\n".join([d["canonical_uri"], f"  kind: {d['kind']}", f"  trust_domain: {d['trust_domain']}"]
                                  + [f"  {k}: {v}" for k, v in sorted(d["attributes"].items())]))
    return 0


# policy


def cmd_policy_lint(args, out: Output) -> int:
    results = []
    for f in args.files:
        ps = _load_policies(f)
        results.extend({"file": f, **w.to_dict()} for w in lint(ps))
    out.emit({"warnings": results},
             lambda: "\n".join(f"{r['file']}: {r['policy_id']}: {r['code']}: {r['message']}" for r in results)
             or "no warnings")
    return 1 if results else 0


def _request_body(args) -> dict:
    if args.request:
        body = _json_arg(args.request, "--request")
        if not isinstance(body, dict):
            raise UsageError("--request must be a JSON object")
        return body
    if not (args.action and args.resource):
        raise UsageError("give --request or --action and --resource")
    body: dict[str, Any] = {"action": args.action, "resource": args.resource,
                            "context": _kv_pairs(args.context, "--context")}
    if args.token:
        body["token"] = args.token
    else:
        body["subject"] = _kv_pairs(args.subject_attr, "--subject-attr")
    return body


def _policy_decision(args, out: Output, simulate: bool) -> int:
    body = _request_body(args)
    if args.policies:
        if "token" in body or "claims" in body:
            raise UsageError("offline evaluation takes a request context, not a token")
        decision = evaluate(_load_policies(args.policies), RequestContext.from_dict(body)).to_dict()
    else:
        with _daemon(args) as client:
            decision = client.simulate(body) if simulate else client.decide(body)
    out.emit(decision, lambda: _format_decision(decision))
    return 0


def cmd_policy_eval(args, out: Output) -> int:
    return _policy_decision(args, out, simulate=False)


def cmd_policy_simulate(args, out: Output) -> int:
    return _policy_decision(args, out, simulate=True)


def cmd_policy_show(args, out: Output) -> int:
    with _daemon(args) as client:
        info = client.policies()
    out.emit(info, lambda: f"# version {info['version']}\n{info['source']}".rstrip())
    return 0


def cmd_policy_reload(args, out: Output) -> int:
    with _daemon(args) as client:
        info = client.reload_policies()
    out.emit(info, info["version"])
    return 0


# token


def _scope_arg(value: str) -> dict:
    if value.lstrip().startswith("{"):
        return _json_arg(value, "--scope")
    resource, sep, actions = value.rpartition("=")
    if not sep or not resource or not actions:
        raise UsageError("--scope expects RESOURCE=ACTION[,ACTION...] or a JSON object")
    return {"resource": resource, "actions": actions.split(",")}


def _subject_arg(value: str) -> dict:
    if value.startswith("spiffe://"):
        return {"kind": "workload", "spiffe_id": value}
    subject = _json_arg(value, "--subject")
    if not isinstance(subject, dict):
        raise UsageError("--subject must be a JSON object or a spiffe:// ID")
    return subject


def cmd_token_issue(args, out: Output) -> int:
    with _daemon(args) as client:
        res = client.issue_token(_subject_arg(args.subject), _scope_arg(args.scope),
                                 _kv_pairs(args.context, "--context"), args.ttl)
    out.emit(res, res["token"])
    return 0


def cmd_token_validate(args, out: Output) -> int:
    if args.bundle:
        bundles = [TrustBundle.from_json(Path(b).read_text(encoding="utf-8")) for b in args.bundle]
    else:
        with _daemon(args) as client:
            bundles = [TrustBundle.from_dict(client.trust_bundle())]
    rl = RevocationList()
    for txn in args.revoked or ():
        rl.revoke(txn, 2**62)
    token = validate_token(args.token, BundleStore.from_bundles(bundles), _now(args), rl, args.skew)
    claims = token.claims()
    out.emit(claims, lambda: "valid\n" + json.dumps(claims, indent=2, sort_keys=True))
    return 0


def cmd_token_revoke(args, out: Output) -> int:
    with _daemon(args) as client:
        res = client.revoke_token(args.txn, args.exp)
    out.emit(res, f"revoked {args.txn}")
    return 0


# bundle


def cmd_bundle_export(args, out: Output) -> int:
    with _daemon(args) as client:
        bundle = TrustBundle.from_dict(client.trust_bundle())
    if args.out:
        Path(args.out).write_text(bundle.to_json() + "\n", encoding="utf-8")
    out.emit(bundle.to_dict(), bundle.to_json())
    return 0


def cmd_bundle_import(args, out: Output) -> int:
    bundle = TrustBundle.from_json(Path(args.file).read_text(encoding="utf-8"))
    with _daemon(args) as client:
        client.import_bundle(bundle.to_dict())
    out.emit({"trust_domain": bundle.trust_domain, "sequence": bundle.sequence},
             f"imported {bundle.trust_domain} at sequence {bundle.sequence}")
    return 0


def cmd_bundle_remove(args, out: Output) -> int:
    with _daemon(args) as client:
        client.remove_bundle(args.domain)
    out.emit({"removed": args.domain}, f"removed {args.domain}")
    return 0


# audit


def cmd_audit_verify(args, out: Output) -> int:
    if args.log:
        bad = verify_chain(args.log)
        res = {"ok": True} if bad is None else {"ok": False, "first_bad_seq": bad}
    else:
        with _daemon(args) as client:
            res = client.audit_verify()
    out.emit(res, "ok" if res["ok"] else f"chain broken at seq {res['first_bad_seq']}")
    return 0 if res["ok"] else 1


def cmd_audit_replay(args, out: Output) -> int:
    if args.log:
        if not args.policies:
            raise UsageError("offline replay needs --policies")
        report = replay_log(args.log, _load_policies(args.policies)).to_dict()
    else:
        source = _load_policies(args.policies).source if args.policies else None
        if (args.policy_version is None) == (source is None):
            raise UsageError("give exactly one of --policy-version or --policies")
        with _daemon(args) as client:
            report = client.audit_replay(args.policy_version, source)

    def text() -> str:
        lines = [f"replayed {report['replayed']} decisions against {report['new_version']}"]
        for e in report["entries"]:
            lines.append(f"  seq {e['seq']}: {e['old_outcome']} -> {e['new_outcome']}"
                         f" ({', '.join(e['differing_policy_ids'])})")
        if not report["entries"]:
            lines.append("  no divergence")
        return "\n".join(lines)

    out.emit(report, text)
    return 0


def cmd_audit_tail(args, out: Output) -> int:
    if args.log:
        records = [r.to_dict() for r in read_records(args.log, verify=False)]
        records = [r for r in records if (args.from_seq is None or r["seq"] >= args.from_seq)
                   and (args.to_seq is None or r["seq"] <= args.to_seq)]
    else:
        with _daemon(args) as client:
            records = client.audit_records(args.from_seq, args.to_seq)
    if args.from_seq is None and args.to_seq is None:
        records = records[-args.n:]
    if out.as_json:
        out.emit(records)
    else:
        for r in records:
            outcome = r.get("decision", {}).get("outcome", "")
            print(f"{r['seq']:>6} {r['timestamp']} {r['kind']:<13} {outcome:<6} {r.get('txn') or ''}",
                  file=out.stream)
    return 0


# scenario / bench


def cmd_scenario_run(args, out: Output) -> int:
    from .scenario import list_scenarios, run_scenario

    if args.name == "list":
        names = list_scenarios()
        out.emit(names, "\n".join(names))
        return 0
    targets = _kv_pairs(args.target, "--target")
    clients = None
    if targets:
        clients = {name: DaemonClient(url) for name, url in targets.items()}
    elif getattr(args, "daemon", None):
        clients = {"a": DaemonClient(args.daemon)}
    try:
        report = run_scenario(args.name, clients)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from exc
    finally:
        for c in (clients or {}).values():
            c.close()
    out.emit(report.to_dict(), report.render)
    return 0 if report.passed else 1


def cmd_bench(args, out: Output) -> int:
    from .service.bench import run_bench

    report = run_bench(args.iterations, args.policies)

    def text() -> str:
        return "\n".join([
            f"iterations: {report['iterations']}  policies: {report['policy_count']}",
            "issuance: p50 {p50_ms:.3f} ms  p95 {p95_ms:.3f} ms".format(**report["issuance"]),
            "decision: p50 {p50_ms:.3f} ms  p95 {p95_ms:.3f} ms".format(**report["decision"]),
        ])

    out.emit(report, text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--daemon", default=argparse.SUPPRESS,
                        help=f"daemon URL (default ${ENV_DAEMON} or {DEFAULT_DAEMON})")
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS, help="canonical JSON output")
    common.add_argument("--now", type=int, default=argparse.SUPPRESS,
                        help="clock override in epoch seconds (offline commands)")
    common.add_argument("--config", default=argparse.SUPPRESS, help="icpd config; its listen address is the daemon")

    parser = argparse.ArgumentParser(prog="icpctl", parents=[common], description="Identity control plane CLI")
    groups = parser.add_subparsers(dest="group", required=True)

    def group(name: str, help: str):
        g = groups.add_parser(name, help=help)
        return g.add_subparsers(dest="command", required=True)

    def leaf(sub, name: str, func, help: str):
        p = sub.add_parser(name, parents=[common], help=help)
        p.set_defaults(func=func)
        return p

    ident = group("identity", "identity normalization")
    p = leaf(ident, "normalize", cmd_identity_normalize, "normalize an identity assertion")
    p.add_argument("--spiffe", help="SPIFFE ID (workload)")
    p.add_argument("--attr", action="append", help="KEY=VALUE metadata bound to a workload")
    p.add_argument("--issuer", help="OIDC/SAML issuer (human)")
    p.add_argument("--subject", help="subject at the issuer (human)")
    p.add_argument("--platform", help="automation platform")
    p.add_argument("--pipeline", help="automation pipeline")
    p.add_argument("--run-id", help="automation run id")
    p.add_argument("--claim", action="append", help="KEY=VALUE verified claim")
    p.add_argument("--trust-domain", default="local", help="trust domain for human/automation identities")

    pol = group("policy", "policy lint, evaluation and simulation")
    p = leaf(pol, "lint", cmd_policy_lint, "lint policy files or directories")
    p.add_argument("files", nargs="+")
    for name, func, help in (("eval", cmd_policy_eval, "evaluate a request (offline with --policies, else decide)"),
                             ("simulate", cmd_policy_simulate, "dry-run a request (offline with --policies)")):
        p = leaf(pol, name, func, help)
        p.add_argument("--policies", help="policy file or directory for offline evaluation")
        p.add_argument("--request", help="request JSON, @file or -")
        p.add_argument("--token", help="compact token (daemon mode)")
        p.add_argument("--action")
        p.add_argument("--resource")
        p.add_argument("--subject-attr", action="append", help="KEY=VALUE subject attribute")
        p.add_argument("--context", action="append", help="KEY=VALUE context attribute")
    leaf(pol, "show", cmd_policy_show, "show the daemon's current policy set")
    leaf(pol, "reload", cmd_policy_reload, "reload the daemon's policy directory")

    tok = group("token", "transaction tokens")
    p = leaf(tok, "issue", cmd_token_issue, "request a token from the daemon")
    p.add_argument("--subject", required=True, help="spiffe:// ID, or assertion JSON / @file")
    p.add_argument("--scope", required=True, help="RESOURCE=ACTION[,ACTION] or JSON")
    p.add_argument("--context", action="append", help="KEY=VALUE context claim")
    p.add_argument("--ttl", type=int, required=True, help="lifetime in seconds")
    p = leaf(tok, "validate", cmd_token_validate, "validate a token offline")
    p.add_argument("token")
    p.add_argument("--bundle", action="append", help="trust bundle JSON file (default: fetch from daemon)")
    p.add_argument("--skew", type=int, default=DEFAULT_SKEW)
    p.add_argument("--revoked", action="append", help="treat this txn as revoked")
    p = leaf(tok, "revoke", cmd_token_revoke, "revoke a token by txn")
    p.add_argument("txn")
    p.add_argument("--exp", type=int, help="token expiry, if known")

    bun = group("bundle", "trust bundle federation")
    p = leaf(bun, "export", cmd_bundle_export, "fetch the daemon's own trust bundle")
    p.add_argument("--out", help="write the bundle to this file")
    p = leaf(bun, "import", cmd_bundle_import, "import a peer bundle into the daemon")
    p.add_argument("file")
    p = leaf(bun, "remove", cmd_bundle_remove, "remove a federated trust domain")
    p.add_argument("domain")

    aud = group("audit", "audit log")
    p = leaf(aud, "verify", cmd_audit_verify, "verify the hash chain")
    p.add_argument("--log", help="audit log file (offline)")
    p = leaf(aud, "replay", cmd_audit_replay, "replay recorded decisions against another policy set")
    p.add_argument("--log", help="audit log file (offline)")
    p.add_argument("--policies", help="policy file or directory to replay against")
    p.add_argument("--policy-version", help="a version the daemon has loaded before")
    p = leaf(aud, "tail", cmd_audit_tail, "show recent records")
    p.add_argument("--log", help="audit log file (offline)")
    p.add_argument("-n", type=int, default=20)
    p.add_argument("--from-seq", type=int)
    p.add_argument("--to-seq", type=int)

    sc = group("scenario", "use-case scenarios")
    p = leaf(sc, "run", cmd_scenario_run, "run a scenario (spawns daemons unless --target/--daemon given)")
    p.add_argument("name", help="scenario name, or 'list'")
    p.add_argument("--target", action="append", help="NAME=URL of an already running daemon")

    p = groups.add_parser("bench", parents=[common], help="issuance/decision latency microbenchmark")
    p.set_defaults(func=cmd_bench)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--policies", type=int, default=100)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    out = Output(getattr(args, "json", False))
    try:
        return args.func(args, out)
    except UsageError as exc:
        print(f"icpctl: {exc}", file=sys.stderr)
        return 2
    except DaemonError as exc:
        sub = f" ({exc.sub_code})" if exc.sub_code else ""
        if out.as_json:
            out.emit({"error": exc.code, "detail": exc.detail})
        print(f"icpctl: {exc}{sub}", file=sys.stderr)
        return 1
    except ICPError as exc:
        if out.as_json:
            out.emit(exc.to_dict())
        print(f"icpctl: {exc.code}: {exc.message}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"icpctl: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
