"""Command line front-end: ``fhnlab <experiment> --config run.ini --out results/``.

Exit codes: 0 pass, 1 validation error, 2 runtime divergence, 3 acceptance failure.
Every run writes ``manifest.json`` with the fully resolved configuration and
the sha256 of each artifact; passing that manifest back as ``--config``
replays the run.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, ExperimentConfig, load_raw, validate
from .experiments import EXPERIMENTS, RUNNERS, dumps
from .solver import DivergenceError

EXIT_OK, EXIT_VALIDATION, EXIT_DIVERGENCE, EXIT_ACCEPTANCE = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fhnlab",
                                     description="Stochastic FitzHugh-Nagumo lattice lab.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS + ("validate",):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None,
                       help="INI config file, or a manifest.json to replay")
        p.add_argument("--out", type=Path, default=None,
                       help="output directory (default: ./out/<experiment>)")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE", help="override one config value")
        p.add_argument("--workers", type=int, default=None,
                       help="worker processes for per-seed tasks")
    return parser


def _error(kind: str, diagnostics: list[str], code: int, out: Path | None) -> int:
    payload = dumps({"error": kind, "diagnostics": diagnostics, "exit_code": code})
    sys.stdout.write(payload)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "error.json").write_text(payload)
    return code


def _safe_name(name: str) -> str:
    if Path(name).name != name or name in ("", ".", ".."):
        raise ValueError(f"artifact name {name!r} would escape the output directory")
    return name


def write_artifacts(out: Path, experiment: str, raw: dict, artifacts: dict[str, str],
                    passed: bool) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    hashes = {}
    for name in sorted(artifacts):
        data = artifacts[name].encode()
        (out / _safe_name(name)).write_bytes(data)
        hashes[name] = hashlib.sha256(data).hexdigest()
    manifest = {"experiment": experiment, "version": __version__, "config": raw,
                "artifacts": hashes, "passed": passed}
    (out / "manifest.json").write_text(dumps(manifest))
    return manifest


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = args.out
    overrides = list(args.overrides)
    if args.workers is not None:
        overrides.append(f"experiment.workers={args.workers}")
    try:
        raw = load_raw(args.config, overrides)
    except ConfigError as exc:
        return _error("validation", exc.diagnostics, EXIT_VALIDATION, out)
    except (OSError, ValueError) as exc:
        return _error("validation", [f"config: {exc}"], EXIT_VALIDATION, out)

    diags = validate(raw)
    if args.command == "validate":
        sys.stdout.write(dumps({"diagnostics": diags, "valid": not diags}))
        return EXIT_VALIDATION if diags else EXIT_OK
    if diags:
        return _error("validation", diags, EXIT_VALIDATION, out)

    if out is None:
        out = Path("out") / args.command
    workers = ExperimentConfig(raw).workers
    try:
        outcome = RUNNERS[args.command](raw, workers)
    except DivergenceError as exc:
        return _error("divergence", [str(exc)], EXIT_DIVERGENCE, out)
    write_artifacts(out, args.command, raw, outcome.artifacts, outcome.passed)
    status = "PASS" if outcome.passed else "FAIL"
    sys.stdout.write(json.dumps({"experiment": args.command, "status": status,
                                 "out": str(out), "summary": outcome.summary},
                                sort_keys=True, default=str) + "\n")
    return EXIT_OK if outcome.passed else EXIT_ACCEPTANCE


if __name__ == "__main__":
    raise SystemExit(main())
