"""Thin HTTP client for the ``icpd`` API."""

from __future__ import annotations

import os
from typing import Any, Mapping

import httpx

DEFAULT_DAEMON = "http://127.0.0.1:8640"
ENV_DAEMON = "ICPCTL_DAEMON"


class DaemonError(Exception):
    """Error envelope returned by the daemon (or a transport failure)."""

    def __init__(self, status: int, code: str, detail: Any = None):
        self.status = status
        self.code = code
        self.detail = detail or {}
        message = self.detail.get("message", "") if isinstance(self.detail, dict) else str(self.detail)
        super().__init__(f"{code}: {message}" if message else code)

    @property
    def sub_code(self) -> str | None:
        """For TokenInvalid, the underlying validation error (Expired, Revoked, ...)."""
        return self.detail.get("code") if isinstance(self.detail, dict) else None


class DaemonClient:
    def __init__(self, base_url: str | None = None, *, http: httpx.Client | None = None, timeout: float = 10.0):
        self.base_url = (base_url or os.environ.get(ENV_DAEMON) or DEFAULT_DAEMON).rstrip("/")
        self._http = http or httpx.Client(base_url=self.base_url, timeout=timeout)

    def close(self) -> None:
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _call(self, method: str, path: str, body: Any = None, params: Mapping | None = None) -> Any:
        try:
            resp = self._http.request(method, path, json=body, params=params)
        except httpx.HTTPError as exc:
            raise DaemonError(0, "Unreachable", {"message": f"{self.base_url}: {exc}"}) from exc
        try:
            data = resp.json()
        except ValueError:
            data = None
        if resp.status_code >= 400:
            if isinstance(data, dict) and "error" in data:
                raise DaemonError(resp.status_code, data["error"], data.get("detail"))
            raise DaemonError(resp.status_code, f"HTTP{resp.status_code}", {"message": resp.text})
        return data

    def decide(self, body: Mapping) -> dict:
        return self._call("POST", "/v1/decide", dict(body))

    def simulate(self, body: Mapping) -> dict:
        return self._call("POST", "/v1/simulate", dict(body))

    def issue_token(self, subject: Mapping, scope: Mapping, context: Mapping | None, ttl_seconds: int) -> dict:
        return self._call("POST", "/v1/tokens", {
            "subject": dict(subject), "scope": dict(scope), "context": dict(context or {}),
            "ttl_seconds": ttl_seconds,
        })

    def revoke_token(self, txn: str, exp: int | None = None) -> dict:
        body: dict[str, Any] = {"txn": txn}
        if exp is not None:
            body["exp"] = exp
        return self._call("POST", "/v1/tokens/revoke", body)

    def trust_bundle(self) -> dict:
        return self._call("GET", "/v1/trust-bundle")

    def import_bundle(self, bundle: Mapping) -> dict:
        return self._call("PUT", "/v1/federation/bundles", dict(bundle))

    def remove_bundle(self, domain: str) -> dict:
        return self._call("DELETE", f"/v1/federation/bundles/{domain}")

    def policies(self) -> dict:
        return self._call("GET", "/v1/policies")

    def reload_policies(self) -> dict:
        return self._call("POST", "/v1/policies/reload")

    def audit_records(self, from_seq: int | None = None, to_seq: int | None = None) -> list:
        params = {k: v for k, v in (("from_seq", from_seq), ("to_seq", to_seq)) if v is not None}
        return self._call("GET", "/v1/audit/records", params=params)

    def audit_verify(self) -> dict:
        return self._call("POST", "/v1/audit/verify")

    def audit_replay(self, policy_version: str | None = None, source: str | None = None) -> dict:
        body = {k: v for k, v in (("policy_version", policy_version), ("source", source)) if v is not None}
        return self._call("POST", "/v1/audit/replay", body)
