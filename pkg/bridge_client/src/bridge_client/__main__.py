"""CLI: serve the protocol over stdio or TCP.

    python -m bridge_client --stdio [--model dummy] [--radius-mm 4.0]
    python -m bridge_client --listen 127.0.0.1:7601 [--once] [--quiet]

``--model`` accepts ``dummy`` or ``package.module:callable`` (imported on
demand, so mounting a real checkpoint never burdens the default install).
"""

from __future__ import annotations

import argparse
import socket
import sys

from .model import DEFAULT_RADIUS_MM, DilationModel, load_model
from .server import log_to_stderr, serve_connection


def _capabilities(model) -> tuple[str, ...]:
    return ("dummy-dilation",) if isinstance(model, DilationModel) else ("custom-model",)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bridge-client", description=__doc__)
    mode = parser.add_mutually_exclusive_group(required=True)
    mode.add_argument("--stdio", action="store_true", help="serve over stdin/stdout")
    mode.add_argument("--listen", metavar="HOST:PORT", help="serve over TCP")
    parser.add_argument("--model", default="dummy",
                        help="'dummy' or package.module:callable")
    parser.add_argument("--radius-mm", type=float, default=DEFAULT_RADIUS_MM,
                        help="dummy model dilation radius")
    parser.add_argument("--once", action="store_true",
                        help="TCP mode: exit after the first connection")
    parser.add_argument("--quiet", action="store_true", help="suppress stderr logging")
    args = parser.parse_args(argv)

    model = load_model(args.model, radius_mm=args.radius_mm)
    caps = _capabilities(model)
    log = (lambda msg: None) if args.quiet else log_to_stderr

    if args.stdio:
        serve_connection(sys.stdin.buffer, sys.stdout.buffer, model,
                         capabilities=caps, log=log)
        return 0

    host, _, port = args.listen.rpartition(":")
    server = socket.create_server((host or "127.0.0.1", int(port)))
    log(f"listening on {server.getsockname()[0]}:{server.getsockname()[1]}")
    try:
        while True:
            conn, peer = server.accept()
            log(f"connection from {peer[0]}:{peer[1]}")
            try:
                with conn:
                    serve_connection(conn.makefile("rb"), conn.makefile("wb"), model,
                                     capabilities=caps, log=log)
            except OSError as exc:
                log(f"connection error: {exc}")
            if args.once:
                return 0
    finally:
        server.close()


if __name__ == "__main__":
    sys.exit(main())
