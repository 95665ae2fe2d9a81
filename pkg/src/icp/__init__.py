"""Identity control plane: normalized identities, scoped transaction tokens,
deny-overrides ABAC decisions, trust-bundle federation and a hash-chained
audit log."""

__version__ = "0.1.0"
