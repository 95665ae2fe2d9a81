"""HTTP/JSON API for the control plane. Bodies are canonical JSON; errors are
``{"error": code, "detail": {...}}``."""

from __future__ import annotations

from typing import Any, Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .. import __version__
from ..canonical import canonical_json
from ..errors import ICPError
from .core import ControlPlane
from .schemas import (
    DecideRequest,
    DecisionModel,
    IssueRequest,
    IssueResponse,
    PoliciesResponse,
    ReplayRequest,
    RevokeRequest,
    TrustBundleModel,
    VerifyResponse,
    VersionResponse,
)


class CanonicalJSONResponse(JSONResponse):
    def render(self, content: Any) -> bytes:
        return canonical_json(content)


def _error(status: int, code: str, detail: Any) -> CanonicalJSONResponse:
    return CanonicalJSONResponse({"error": code, "detail": detail}, status_code=status)


def create_app(plane: ControlPlane) -> FastAPI:
    app = FastAPI(title="icpd", version=__version__, default_response_class=CanonicalJSONResponse)
    app.state.plane = plane

    @app.exception_handler(ICPError)
    async def icp_error(request: Request, exc: ICPError):
        body = exc.to_dict()
        return _error(exc.status, body["error"], body["detail"])

    @app.exception_handler(RequestValidationError)
    async def validation_error(request: Request, exc: RequestValidationError):
        errors = [{"loc": [str(x) for x in e["loc"]], "msg": e["msg"]} for e in exc.errors()]
        return _error(422, "MalformedRequest", {"message": "request body failed validation", "errors": errors})

    @app.post("/v1/decide", response_model=DecisionModel, response_model_exclude_none=True)
    def decide(body: DecideRequest):
        return plane.decide(body.model_dump(exclude_none=True)).to_dict()

    @app.post("/v1/simulate", response_model=DecisionModel, response_model_exclude_none=True)
    def simulate(body: DecideRequest):
        return plane.simulate(body.model_dump(exclude_none=True)).to_dict()

    @app.post("/v1/tokens", response_model=IssueResponse)
    def issue(body: IssueRequest):
        token = plane.issue(
            body.subject.model_dump(exclude_none=True), body.scope.model_dump(), body.context, body.ttl_seconds
        )
        return {"token": token.compact, "txn": token.txn, "exp": token.exp}

    @app.post("/v1/tokens/revoke")
    def revoke(body: RevokeRequest):
        plane.revoke(body.txn, body.exp)
        return {}

    @app.get("/v1/trust-bundle", response_model=TrustBundleModel)
    def trust_bundle():
        return plane.export_bundle().to_dict()

    @app.put("/v1/federation/bundles")
    def put_bundle(body: dict[str, Any]):
        plane.import_bundle(body)
        return {}

    @app.delete("/v1/federation/bundles/{domain}")
    def delete_bundle(domain: str):
        plane.remove_federation(domain)
        return {}

    @app.get("/v1/policies", response_model=PoliciesResponse)
    def policies():
        ps = plane.policies.current
        return {"version": ps.version, "source": ps.source}

    @app.post("/v1/policies/reload", response_model=VersionResponse)
    def reload_policies():
        return {"version": plane.reload_policies()}

    @app.get("/v1/audit/records")
    def audit_records(from_seq: Optional[int] = None, to_seq: Optional[int] = None):
        return [r.to_dict() for r in plane.audit.records(from_seq, to_seq)]

    @app.post("/v1/audit/verify", response_model=VerifyResponse, response_model_exclude_none=True)
    def audit_verify():
        return plane.verify_audit()

    @app.post("/v1/audit/replay")
    def audit_replay(body: ReplayRequest):
        return plane.replay(body.policy_version, body.source).to_dict()

    return app
