"""Platform command line: serve a platform, deploy code, inspect stats."""

from __future__ import annotations

import argparse
import json
import signal
import sys
import threading
from pathlib import Path

from .bundles import pack_function_dir
from .config import PlatformConfig
from .netutil import http_request, parse_hostport
from .platform import Platform


def cmd_serve(args) -> int:
    config = PlatformConfig.from_file(args.config) if args.config else PlatformConfig()
    if args.listen:
        config.listen_host, config.listen_port = parse_hostport(args.listen)
    platform = Platform(config).start()
    host, port = platform.address
    print(f"listening on http://{host}:{port}", flush=True)

    done = threading.Event()

    def _shutdown(signum, frame):
        done.set()

    signal.signal(signal.SIGTERM, _shutdown)
    signal.signal(signal.SIGINT, _shutdown)
    done.wait()
    platform.stop()
    return 0


def cmd_deploy(args) -> int:
    host, port = parse_hostport(args.platform)
    archive = pack_function_dir(Path(args.dir))
    reply = http_request("PUT", host, port, f"/admin/functions/{args.name}", archive, timeout=60.0)
    print(reply.body.decode("utf-8", "replace"))
    return 0 if reply.status == 200 else 1


def cmd_stats(args) -> int:
    host, port = parse_hostport(args.platform)
    reply = http_request("GET", host, port, "/admin/stats", timeout=10.0)
    print(json.dumps(json.loads(reply.body), indent=2, sort_keys=True))
    return 0 if reply.status == 200 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="faasfuse")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run a platform until terminated")
    serve.add_argument("--config", help="key = value config file")
    serve.add_argument("--listen", help="host:port (overrides config)")
    serve.set_defaults(func=cmd_serve)

    deploy = sub.add_parser("deploy", help="deploy a function directory to a running platform")
    deploy.add_argument("--platform", required=True, help="gateway host:port")
    deploy.add_argument("--name", required=True)
    deploy.add_argument("--dir", required=True, help="directory containing fn.py")
    deploy.set_defaults(func=cmd_deploy)

    stats = sub.add_parser("stats", help="print the platform snapshot")
    stats.add_argument("--platform", required=True, help="gateway host:port")
    stats.set_defaults(func=cmd_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
