"""Serve the provider protocol on stdio, backed by the fixture backend.

Intended for client tests and offline pipeline runs:

    python -m subparse.fixture_server --seed 7 --layers 4 --heads 4
"""

from __future__ import annotations

import argparse
import json
import sys

from .fixture import FixtureBackend
from .provider import BackendError, ModelRequest, encode


def handle_line(backend: FixtureBackend, line: str) -> str:
    msg_id = None
    try:
        msg = json.loads(line)
        msg_id = msg.get("id") if isinstance(msg, dict) else None
        req = ModelRequest.from_wire(msg)
        return encode(backend.request(req).to_wire())
    except (BackendError, ValueError, KeyError, TypeError) as exc:
        return encode({"id": msg_id, "error": str(exc)})


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--layers", type=int, default=4)
    parser.add_argument("--heads", type=int, default=4)
    parser.add_argument("--model-name", default="fixture")
    args = parser.parse_args(argv)

    backend = FixtureBackend(seed=args.seed, layers=args.layers, heads=args.heads,
                             model_name=args.model_name)
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        sys.stdout.write(handle_line(backend, line) + "\n")
        sys.stdout.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main())
