"""``icpd`` entry point: ``icpd --config icpd.conf`` (or ``$ICPD_CONFIG``)."""

from __future__ import annotations

import argparse
import logging
import sys

import uvicorn

from ..errors import ICPError
from .app import create_app
from .config import load_config
from .core import ControlPlane


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="icpd", description="Identity control plane daemon")
    parser.add_argument("--config", help="config file (default: $ICPD_CONFIG)")
    parser.add_argument("--listen", help="override listen address host:port")
    parser.add_argument("--log-level", default="info")
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        config = load_config(args.config)
        if args.listen:
            config.listen = args.listen
        plane = ControlPlane(config)
    except ICPError as exc:
        print(f"icpd: {exc.message}", file=sys.stderr)
        return 1
    host, port = config.host_port
    logging.getLogger("icpd").info("serving trust domain %s on %s", config.trust_domain, config.url)
    uvicorn.run(create_app(plane), host=host, port=port, log_level=args.log_level.lower())
    return 0


if __name__ == "__main__":
    sys.exit(main())
