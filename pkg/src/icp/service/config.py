"""Daemon configuration: a ``key = value`` text file.

Example::

    listen = 127.0.0.1:8640
    trust_domain = prod.example.org
    key_file = keys.json
    policy_dir = policies
    audit_log = audit.log
    clock_skew = 30
    max_ttl.automation = 300
    max_ttl.workload = 3600
    max_ttl.human = 3600
    bundle_refresh_hint = 300
    audit_fsync = true

Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

from ..broker import DEFAULT_MAX_TTL, DEFAULT_SKEW
from ..errors import ICPError, MalformedIdentity
from ..federation import DEFAULT_REFRESH_HINT
from ..identity import validate_trust_domain

ENV_VAR = "ICPD_CONFIG"
DEFAULT_LISTEN = "127.0.0.1:8640"


class ConfigError(ICPError):
    code = "ConfigError"


@dataclass
class ServiceConfig:
    trust_domain: str
    key_file: Path
    policy_dir: Path
    audit_log: Path
    listen: str = DEFAULT_LISTEN
    clock_skew: int = DEFAULT_SKEW
    max_ttl: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_MAX_TTL))
    bundle_refresh_hint: int = DEFAULT_REFRESH_HINT
    audit_fsync: bool = True

    def __post_init__(self):
        try:
            validate_trust_domain(self.trust_domain)
        except MalformedIdentity as exc:
            raise ConfigError(exc.message) from exc
        self.key_file = Path(self.key_file)
        self.policy_dir = Path(self.policy_dir)
        self.audit_log = Path(self.audit_log)
        if self.clock_skew < 0:
            raise ConfigError("clock_skew must be >= 0")
        for kind, ttl in self.max_ttl.items():
            if kind not in DEFAULT_MAX_TTL or ttl <= 0:
                raise ConfigError(f"invalid max_ttl.{kind} = {ttl}")
        host, sep, port = self.listen.rpartition(":")
        if not sep or not port.isdigit() or not 0 < int(port) < 65536:
            raise ConfigError(f"listen must be host:port, got {self.listen!r}")

    @property
    def host_port(self) -> tuple[str, int]:
        host, _, port = self.listen.rpartition(":")
        return host or "127.0.0.1", int(port)

    @property
    def url(self) -> str:
        host, port = self.host_port
        return f"http://{host}:{port}"

    def to_text(self) -> str:
        lines = [
            f"listen = {self.listen}",
            f"trust_domain = {self.trust_domain}",
            f"key_file = {self.key_file}",
            f"policy_dir = {self.policy_dir}",
            f"audit_log = {self.audit_log}",
            f"clock_skew = {self.clock_skew}",
        ]
        lines += [f"max_ttl.{k} = {v}" for k, v in sorted(self.max_ttl.items())]
        lines += [f"bundle_refresh_hint = {self.bundle_refresh_hint}",
                  f"audit_fsync = {str(self.audit_fsync).lower()}"]
        return "\n".join(lines) + "\n"


_PATHS = {"key_file", "policy_dir", "audit_log"}
_INTS = {"clock_skew", "bundle_refresh_hint"}


def parse_config(text: str, base_dir: Path | None = None) -> ServiceConfig:
    values: dict = {}
    max_ttl = dict(DEFAULT_MAX_TTL)
    known = {f.name for f in fields(ServiceConfig)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected key = value")
        try:
            if key.startswith("max_ttl."):
                max_ttl[key[len("max_ttl."):]] = int(value)
            elif key in _INTS:
                values[key] = int(value)
            elif key == "audit_fsync":
                values[key] = value.lower() in ("1", "true", "yes", "on")
            elif key in _PATHS:
                p = Path(value).expanduser()
                values[key] = p if p.is_absolute() or base_dir is None else base_dir / p
            elif key in known:
                values[key] = value
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {key} expects an integer") from exc
    missing = {"trust_domain"} - set(values)
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(sorted(missing))}")
    base = base_dir or Path.cwd()
    values.setdefault("key_file", base / "keys.json")
    values.setdefault("policy_dir", base / "policies")
    values.setdefault("audit_log", base / "audit.log")
    return ServiceConfig(max_ttl=max_ttl, **values)


def load_config(path: str | os.PathLike | None = None) -> ServiceConfig:
    """Read ``path``, falling back to ``$ICPD_CONFIG``."""
    path = path or os.environ.get(ENV_VAR)
    if not path:
        raise ConfigError(f"no config file given (use --config or ${ENV_VAR})")
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, path.resolve().parent)
