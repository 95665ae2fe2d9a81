"""The ``icpd`` daemon: control-plane core, HTTP API and latency bench."""

from .config import ServiceConfig, load_config, parse_config
from .core import ControlPlane, PolicyStore

__all__ = ["ControlPlane", "PolicyStore", "ServiceConfig", "load_config", "parse_config"]
