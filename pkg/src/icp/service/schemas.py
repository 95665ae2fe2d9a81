from __future__ import annotations

from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ScopeModel(_Strict):
    resource: str
    actions: list[str]


class UnsignedClaims(_Strict):
    sub: str
    kind: Optional[str] = None
    td: Optional[str] = None
    scope: Optional[ScopeModel] = None
    context: dict[str, str] = Field(default_factory=dict)


class DecideRequest(_Strict):
    """Either a full request context (``subject``/``action``/``resource``/``context``),
    a token form (``token``/``action``/``resource``), or, for simulate only,
    unsigned ``claims`` in place of a token."""

    action: str
    resource: Union[str, dict[str, str]]
    subject: Optional[dict[str, str]] = None
    context: dict[str, str] = Field(default_factory=dict)
    token: Optional[str] = None
    claims: Optional[UnsignedClaims] = None


class TraceEntryModel(BaseModel):
    policy_id: str
    matched: bool
    effect: Literal["permit", "deny"]


class DecisionModel(BaseModel):
    outcome: Literal["permit", "deny"]
    trace: list[TraceEntryModel]
    policy_version: str
    reason: Optional[str] = None


class SubjectAssertion(_Strict):
    kind: Literal["human", "workload", "automation"]
    spiffe_id: Optional[str] = None
    issuer: Optional[str] = None
    subject: Optional[str] = None
    verified_claims: dict[str, str] = Field(default_factory=dict)
    platform: Optional[str] = None
    pipeline: Optional[str] = None
    run_id: Optional[str] = None
    claims: dict[str, str] = Field(default_factory=dict)
    attributes: dict[str, str] = Field(default_factory=dict)


class IssueRequest(_Strict):
    subject: SubjectAssertion
    scope: ScopeModel
    context: dict[str, str] = Field(default_factory=dict)
    ttl_seconds: int


class IssueResponse(BaseModel):
    token: str
    txn: str
    exp: int


class RevokeRequest(_Strict):
    txn: str = Field(min_length=1)
    exp: Optional[int] = None


class BundleKeyModel(BaseModel):
    kid: str
    algorithm: str
    public_key: str


class TrustBundleModel(BaseModel):
    trust_domain: str
    sequence: int
    refresh_hint_seconds: int = 300
    keys: list[BundleKeyModel]


class PoliciesResponse(BaseModel):
    version: str
    source: str


class VersionResponse(BaseModel):
    version: str


class ReplayRequest(_Strict):
    policy_version: Optional[str] = None
    source: Optional[str] = None


class VerifyResponse(BaseModel):
    ok: bool
    first_bad_seq: Optional[int] = None
