"""Exception hierarchy. Every error carries a stable ``code`` used on the wire."""

from __future__ import annotations

from typing import Any


class ICPError(Exception):
    code = "ICPError"
    status = 400

    def __init__(self, message: str = "", **detail: Any):
        super().__init__(message or self.code)
        self.message = message or self.code
        self.detail = detail

    def to_dict(self) -> dict[str, Any]:
        detail: dict[str, Any] = {"message": self.message}
        detail.update(self.detail)
        return {"error": self.code, "detail": detail}


class MalformedIdentity(ICPError):
    code = "MalformedIdentity"


class MalformedRequest(ICPError):
    code = "MalformedRequest"


class ParseError(ICPError):
    code = "ParseError"

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{line}:{column}: {message}", line=line, column=column)
        self.reason = message
        self.line = line
        self.column = column


class DuplicatePolicyId(ICPError):
    code = "DuplicatePolicyId"


class UnknownPolicyVersion(ICPError):
    code = "UnknownPolicyVersion"
    status = 404


# broker


class PolicyDenied(ICPError):
    code = "PolicyDenied"
    status = 403

    def __init__(self, decision):
        super().__init__("issuance denied by policy", decision=decision.to_dict())
        self.decision = decision


class TtlExceeded(ICPError):
    code = "TtlExceeded"


class MalformedScope(ICPError):
    code = "MalformedScope"


class TokenError(ICPError):
    """Base for token validation failures."""

    status = 401


class MalformedToken(TokenError):
    code = "MalformedToken"


class UnknownTrustDomain(TokenError):
    code = "UnknownTrustDomain"


class UnknownKey(TokenError):
    code = "UnknownKey"


class SignatureInvalid(TokenError):
    code = "SignatureInvalid"


class Expired(TokenError):
    code = "Expired"


class NotYetValid(TokenError):
    code = "NotYetValid"


class Revoked(TokenError):
    code = "Revoked"


class TokenInvalid(ICPError):
    """Raised by the decision point; wraps the broker's validation error."""

    code = "TokenInvalid"
    status = 401

    def __init__(self, cause: TokenError):
        super().__init__(cause.message, code=cause.code)
        self.cause = cause


# federation


class StaleBundle(ICPError):
    code = "StaleBundle"
    status = 409


class MalformedBundle(ICPError):
    code = "MalformedBundle"


class SelfImport(ICPError):
    code = "SelfImport"
    status = 409


class NotFederated(UnknownTrustDomain):
    """remove_federation on a domain that was never imported."""

    status = 404


# audit


class StorageFailure(ICPError):
    code = "StorageFailure"
    status = 500


class ChainInvalid(ICPError):
    code = "ChainInvalid"
    status = 409
