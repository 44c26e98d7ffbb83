"""Launch the bridge on stdio: the engine spawns this as a subprocess."""

from __future__ import annotations

import argparse
import sys

from .session import AlfworldBackend, ScriptedBackend, serve


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="alfworld-bridge", description=__doc__)
    parser.add_argument("--split", default="eval_out_of_distribution",
                        help="benchmark split name to serve")
    parser.add_argument("--max-steps", type=int, default=50)
    parser.add_argument("--config", help="benchmark YAML (or set ALFWORLD_CONFIG)")
    parser.add_argument("--backend", choices=["alfworld", "scripted"], default="alfworld",
                        help="scripted runs a canned toy episode for protocol testing")
    args = parser.parse_args(argv)

    if args.backend == "scripted":
        factory = ScriptedBackend
    else:
        def factory():
            return AlfworldBackend(split=args.split, config_path=args.config)

    serve(sys.stdin.buffer, sys.stdout.buffer, factory, max_steps=args.max_steps)
    return 0


if __name__ == "__main__":
    sys.exit(main())
