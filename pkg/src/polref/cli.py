"""Command-line front-end: validate, compile, emit, check, graph."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .backends import TARGETS, emit_files
from .errors import PolicyError, PolicyParseError
from .oracle import BACKENDS, equivalence_check
from .parser import parse_policy_with_diagnostics
from .refinement import compile_policy, multi_target_files
from .topology import extract_topology


def _load(path: str):
    """Parsed policy, or None after printing diagnostics to stderr."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return None
    try:
        policy, diags = parse_policy_with_diagnostics(data)
    except PolicyParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return None
    for d in diags:
        print(str(d), file=sys.stderr)
    return policy


def _compile(policy, placement="upstream"):
    deployment = compile_policy(policy, placement)
    for d in deployment.diagnostics:
        print(str(d), file=sys.stderr)
    return deployment


def _write(out: str, files: dict[str, str]) -> None:
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    for name, text in sorted(files.items()):
        (outdir / name).write_text(text)
        print(outdir / name)


def cmd_validate(args) -> int:
    policy = _load(args.policy)
    if policy is None:
        return 1
    try:
        topo = extract_topology(policy)
    except PolicyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for d in topo.diagnostics:
        print(str(d), file=sys.stderr)
    print(f"{args.policy}: ok ({len(policy.permissions)} permissions, {len(topo.devices)} devices, "
          f"{len(topo.zones)} zones)")
    return 0


def cmd_compile(args) -> int:
    policy = _load(args.policy)
    if policy is None:
        return 1
    deployment = _compile(policy, args.prohibition_placement)
    if deployment.errors:
        return 1
    _write(args.out, multi_target_files(deployment))
    return 0


def cmd_emit(args) -> int:
    policy = _load(args.policy)
    if policy is None:
        return 1
    deployment = _compile(policy, args.prohibition_placement)
    if deployment.errors:
        return 1
    targets = TARGETS if args.target == "all" else (args.target,)
    _write(args.out, emit_files(deployment, targets))
    return 0


def cmd_check(args) -> int:
    policy = _load(args.policy)
    if policy is None:
        return 1
    deployment = _compile(policy, args.prohibition_placement)
    if deployment.errors:
        return 1
    exhaustive = True if args.exhaustive else None
    backends = BACKENDS if args.backend == "both" else (args.backend,)
    reports = [
        equivalence_check(policy, deployment, backend=b, exhaustive=exhaustive, seed=args.seed)
        for b in backends
    ]
    for report in reports:
        sys.stdout.write(report.to_text())
    if args.summary:
        Path(args.summary).write_text("[" + ",\n".join(r.to_json() for r in reports) + "]\n")
    return 0 if all(r.passed for r in reports) else 1


def cmd_graph(args) -> int:
    policy = _load(args.policy)
    if policy is None:
        return 1
    try:
        topo = extract_topology(policy)
    except PolicyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(topo.graph.dump())
    return 0


def build_parser() -> argparse.ArgumentParser:
    default_out = os.environ.get("POLREF_OUT", "build")
    parser = argparse.ArgumentParser(prog="polref", description="OrBAC policy refinement onto security devices")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse and validate a policy")
    p.add_argument("policy")
    p.set_defaults(func=cmd_validate)

    placement = dict(choices=("upstream", "downstream"), default="upstream",
                     help="which firewall on a path receives prohibitions")
    p = sub.add_parser("compile", help="write multi-target rule files, one per device")
    p.add_argument("policy")
    p.add_argument("--out", default=default_out)
    p.add_argument("--prohibition-placement", **placement)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("emit", help="write concrete device configurations")
    p.add_argument("policy")
    p.add_argument("--out", default=default_out)
    p.add_argument("--target", choices=TARGETS + ("all",), default="all")
    p.add_argument("--prohibition-placement", **placement)
    p.set_defaults(func=cmd_emit)

    p = sub.add_parser("check", help="brute-force equivalence of policy and deployment")
    p.add_argument("policy")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--exhaustive", action="store_true", help="enumerate the whole packet grid")
    mode.add_argument("--seed", type=int, default=0, help="seed for sampled universes")
    p.add_argument("--backend", choices=BACKENDS + ("both",), default="both")
    p.add_argument("--summary", help="write a JSON summary to this file")
    p.add_argument("--prohibition-placement", **placement)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("graph", help="dump the zone/device adjacency")
    p.add_argument("policy")
    p.set_defaults(func=cmd_graph)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except PolicyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
