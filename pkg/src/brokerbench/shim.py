"""Adapter-protocol entry point for in-tree backends.

The harness runs the ``ipc`` and ``tcp`` roles of in-tree backends through
this module, using the same command line and JSON output as external
adapters::

    python -m brokerbench.shim --backend refbus --role sub \
        --endpoint tcp://127.0.0.1:5555 --transport tcp --count 5000 \
        --size 32768 --interval-us 1000 --delay-ms 1000

Flags beyond the adapter contract (``--backend``, ``--factory``,
``--options``, ``--subscribers``, ``--receive-timeout-ms``) are optional.
"""

from __future__ import annotations

import argparse
import importlib
import json
import sys

from .backend import (
    RECEIVE_TIMEOUT_MS,
    BackendDescriptor,
    BackendKind,
    Endpoint,
    Transport,
    connect_with_retry,
    get_backend,
)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="python -m brokerbench.shim")
    p.add_argument("--role", choices=("pub", "sub"), required=True)
    p.add_argument("--endpoint", required=True)
    p.add_argument("--transport", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--interval-us", type=int, required=True)
    p.add_argument("--delay-ms", type=int, required=True)
    p.add_argument("--backend", default="refbus")
    p.add_argument("--factory", help="module:callable building the backend object")
    p.add_argument("--options", default="{}", help="JSON keyword arguments for the factory")
    p.add_argument("--subscribers", type=int, default=1)
    p.add_argument("--receive-timeout-ms", type=int, default=RECEIVE_TIMEOUT_MS)
    return p


def load_factory(spec: str):
    module, _, attr = spec.partition(":")
    obj = importlib.import_module(module)
    for part in attr.split("."):
        obj = getattr(obj, part)
    return obj


def main(argv=None) -> int:
    from .runner import ExperimentConfig, run_publisher, run_subscriber

    args = build_parser().parse_args(argv)
    endpoint = Endpoint.parse(args.endpoint)
    if Transport.parse(args.transport) is not endpoint.transport:
        print(f"--transport {args.transport} disagrees with {args.endpoint}", file=sys.stderr)
        return 1
    options = tuple(sorted(json.loads(args.options).items()))
    if args.factory:
        desc = BackendDescriptor(args.backend, BackendKind.IN_TREE,
                                 factory=load_factory(args.factory), options=options)
    else:
        base = get_backend(args.backend)
        desc = BackendDescriptor(base.name, base.kind, base.supported_transports,
                                 factory=base.factory, options=options or base.options)
    config = ExperimentConfig(
        desc, endpoint.transport, subscribers=args.subscribers, count=args.count,
        interval_us=args.interval_us, size=args.size, delay_ms=args.delay_ms,
        repetitions=1, receive_timeout_ms=args.receive_timeout_ms,
    )
    backend = desc.create()
    clock = getattr(backend, "clock", None)
    if args.role == "pub":
        handle = backend.bind(endpoint)
        try:
            report = run_publisher(config, handle, *([clock] if clock else []))
        finally:
            handle.close()
    else:
        handle = connect_with_retry(backend, endpoint)
        try:
            report = run_subscriber(config, handle, *([clock] if clock else []))
        finally:
            handle.close()
    json.dump(report, sys.stdout)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
