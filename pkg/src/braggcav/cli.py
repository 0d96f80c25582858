"""Command line entry point: ``braggcav run`` and ``braggcav presets list``."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import load_config, load_preset, preset_names
from .errors import ConfigError, NumericGuardError

EXIT_OK, EXIT_PARSE, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4, 5


def _style(text, code, stream):
    if os.environ.get("NO_COLOR") is not None or not stream.isatty():
        return text
    return f"\033[{code}m{text}\033[0m"


def _fail(msg, code):
    print(_style(f"error: {msg}", "31", sys.stderr), file=sys.stderr)
    return code


def build_parser():
    ap = argparse.ArgumentParser(prog="braggcav", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="path to a JSON run configuration")
    src.add_argument("--preset", help="name of a shipped preset, e.g. fig2b")
    run.add_argument("--workers", type=int, default=1, help="worker processes (results do not depend on it)")
    run.add_argument("--output-dir", help="override the configured output directory")
    pre = sub.add_parser("presets", help="inspect shipped presets")
    pre.add_argument("action", choices=["list"])
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "presets":
        for name in preset_names():
            desc = load_preset(name).description
            print(f"{name:8s} {desc}")
        return EXIT_OK
    if args.workers < 1:
        return _fail("--workers must be >= 1", EXIT_VALIDATION)
    try:
        cfg = load_preset(args.preset) if args.preset else load_config(args.config)
    except ConfigError as exc:
        return _fail(str(exc), exc.exit_code)
    from .runner import run_experiment

    try:
        manifest = run_experiment(cfg, workers=args.workers, output_dir=args.output_dir)
    except ConfigError as exc:
        return _fail(str(exc), exc.exit_code)
    except NumericGuardError as exc:
        return _fail(f"numeric guard: {exc}", EXIT_NUMERIC)
    except OSError as exc:
        return _fail(f"I/O: {exc}", EXIT_IO)
    out = args.output_dir or cfg.output_dir
    print(_style(f"{cfg.experiment} done in {manifest['wall_time_s']:.1f} s -> {out}", "32", sys.stdout))
    print(json.dumps(manifest["summary"], indent=2, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
