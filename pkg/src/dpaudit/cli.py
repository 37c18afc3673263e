"""Command-line front end: run audits, the corpus detection matrix, and
trace inspection, with machine-readable reports for CI.

Exit codes: 0 = audit passed, 1 = violations found (or matrix mismatch),
2 = usage or internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from typing import Optional

import numpy as np

from . import corpus, rng
from .canonical import canonical_dumps, to_jsonable
from .distaudit import blackbox_audit
from .neighbors import AdjacencyModel, gen_neighbors
from .recorder import PlainContext, load_trace
from .validator import ViolationKind

SCHEMA_VERSION = 1
SEED_ENV_VAR = "DPAUDIT_SEED"

EXIT_PASS = 0
EXIT_VIOLATIONS = 1
EXIT_ERROR = 2


class UsageError(ValueError):
    pass


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpaudit",
        description="Grey-box auditing of differential-privacy pipelines",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    audit = sub.add_parser("audit", help="audit one corpus pipeline")
    audit.add_argument("--pipeline", required=True, help="corpus pipeline name")
    audit.add_argument("--variant", choices=("buggy", "fixed"), default="buggy")
    audit.add_argument("--adjacency", choices=("add-remove", "replace-one"))
    audit.add_argument("--strategy", help="neighbor strategy override")
    audit.add_argument("--seed", type=int, default=None)
    audit.add_argument("--epsilon", type=float, default=None, help="override claimed epsilon")
    audit.add_argument("--delta", type=float, default=1e-6)
    audit.add_argument("--samples", type=int, default=None)
    audit.add_argument(
        "--mode",
        choices=("record-replay", "distributional", "blackbox", "full"),
        default="record-replay",
    )
    audit.add_argument("--format", choices=("json", "text"), default="json")
    audit.add_argument("--out", help="write the report to this path")

    matrix = sub.add_parser("matrix", help="run the corpus detection matrix")
    matrix.add_argument("--seed", type=int, default=None)
    matrix.add_argument("--mode", choices=("rr", "full"), default="full")
    matrix.add_argument("--samples", type=int, default=100_000)
    matrix.add_argument("--delta", type=float, default=1e-6)
    matrix.add_argument("--format", choices=("json", "text"), default="text")
    matrix.add_argument("--out")

    dump = sub.add_parser("trace-dump", help="print a trace file as a table")
    dump.add_argument("path")
    return parser


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise UsageError(f"{SEED_ENV_VAR} must be an integer, got {env!r}") from exc
    raise UsageError(f"--seed is required (or set {SEED_ENV_VAR})")


def _emit(text: str, out_path: Optional[str]) -> None:
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text + ("" if text.endswith("\n") else "\n"))
    else:
        print(text)


def _case_pair(case, seed: int, adjacency: Optional[str], strategy: Optional[str]):
    """Designated pair, optionally rebuilt under an override strategy."""
    pipeline, data, data_prime, claim = case.build(seed)
    if strategy is None and adjacency is None:
        return pipeline, data, data_prime, claim
    model = AdjacencyModel(adjacency) if adjacency else case.adjacency
    if strategy is None:
        raise UsageError("--adjacency override requires --strategy")
    data_prime = gen_neighbors(data, model, strategy, seed, count=1)[0][1]
    return pipeline, data, data_prime, claim


def _cmd_audit(args) -> int:
    seed = _resolve_seed(args)
    try:
        case = corpus.get_case(args.pipeline, args.variant)
    except KeyError as exc:
        raise UsageError(str(exc)) from exc
    if args.mode in ("distributional", "blackbox", "full") and args.samples is None:
        raise UsageError(f"--samples is required for mode {args.mode}")

    if args.mode == "blackbox":
        result_json, violations = _blackbox_case(case, args, seed)
    else:
        with_dist = args.mode in ("distributional", "full") or (
            args.mode != "record-replay" and case.audit != "record_replay"
        )
        if args.strategy or args.adjacency:
            pipeline, data, data_prime, claim = _case_pair(
                case, seed, args.adjacency, args.strategy
            )
            result = corpus.run_case_on_pair(
                case, pipeline, data, data_prime,
                claim if args.epsilon is None else args.epsilon,
                seed,
                n_samples=args.samples or 100_000,
                delta=args.delta,
                with_distributional=with_dist,
            )
        else:
            result = corpus.run_case(
                case,
                seed,
                n_samples=args.samples or 100_000,
                delta=args.delta,
                with_distributional=with_dist,
            )
        violations = result.violations
        result_json = result.to_json()

    report = {
        "schema_version": SCHEMA_VERSION,
        "config": {
            "pipeline": args.pipeline,
            "variant": args.variant,
            "adjacency": args.adjacency or case.adjacency.value,
            "strategy": args.strategy or case.strategy,
            "seed": seed,
            "delta": args.delta,
            "samples": args.samples,
            "mode": args.mode,
        },
        "result": result_json,
    }
    if args.format == "json":
        _emit(canonical_dumps(to_jsonable(report)), args.out)
    else:
        _emit(_report_text(report), args.out)
    return EXIT_VIOLATIONS if violations else EXIT_PASS


def _blackbox_case(case, args, seed: int):
    pipeline, data, data_prime, claim = _case_pair(case, seed, args.adjacency, args.strategy)
    claimed = claim if args.epsilon is None else args.epsilon

    def mech(dataset, gen):
        out = pipeline(dataset, case.epsilon, PlainContext(gen))
        return float(np.ravel(np.asarray(out, dtype=float))[0])

    eps_hat = blackbox_audit(
        mech, data, data_prime, runs=args.samples, delta=args.delta, gamma=0.05, seed=seed
    )
    passed = eps_hat <= claimed
    violations = [] if passed else [ViolationKind.ACCOUNTING_DISCREPANCY]
    return (
        {
            "eps_hat": eps_hat,
            "claimed_epsilon": claimed,
            "pass": passed,
            "flagged": violations,
        },
        violations,
    )


def _report_text(report: dict) -> str:
    cfg = report["config"]
    res = report["result"]
    lines = [
        f"pipeline {cfg['pipeline']} ({cfg['variant']}), mode {cfg['mode']}, seed {cfg['seed']}"
    ]
    if "violations" in res:
        if res["violations"]:
            for v in res["violations"]:
                where = f"call {v['call_index']}" if v.get("call_index") else "pipeline"
                if v.get("measured") is None and v.get("declared") is None:
                    detail = v.get("message", "")
                else:
                    detail = f"measured={v.get('measured')!r} declared={v.get('declared')!r}"
                lines.append(f"  [{v['kind']}] {where}: {detail}")
        else:
            lines.append("  no violations")
    if res.get("eps_hat") is not None:
        lines.append(f"  eps_hat={res['eps_hat']} claimed={res.get('claimed_epsilon')}")
    return "\n".join(lines)


def _cmd_matrix(args) -> int:
    seed = _resolve_seed(args)
    rows = corpus.detection_matrix(
        seed, mode=args.mode, n_samples=args.samples, delta=args.delta
    )
    all_ok = all(r.ok for r in rows)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "config": {"seed": seed, "mode": args.mode},
        "rows": [r.to_json() for r in rows],
        "all_ok": all_ok,
    }
    if args.format == "json":
        _emit(canonical_dumps(to_jsonable(doc)), args.out)
    else:
        lines = [f"detection matrix (seed {seed}, mode {args.mode})"]
        for r in rows:
            mark = "ok " if r.ok else "MISMATCH"
            lines.append(
                f"  {mark} {r.name:<20} {r.variant:<6} expected={r.expected or '-':<24} "
                f"flagged={','.join(r.flagged) or '-'}"
            )
        lines.append(f"matrix {'matches' if all_ok else 'DOES NOT match'} expectations")
        _emit("\n".join(lines), args.out)
    return EXIT_PASS if all_ok else EXIT_VIOLATIONS


def _cmd_trace_dump(args) -> int:
    trace = load_trace(args.path)
    lines = [f"trace: mode={trace.mode.value} seed={trace.seed} calls={len(trace)}"]
    for e in trace.entries:
        input_digest = hashlib.blake2b(
            canonical_dumps(e.input).encode(), digest_size=8
        ).hexdigest()
        lines.append(
            f"  {e.index:>4}  {e.kind:<20} params={canonical_dumps(e.params)} "
            f"input={input_digest} rng={e.rng_digest or '-'}"
        )
    if trace.stop_reason is not None:
        sr = trace.stop_reason
        lines.append(f"  STOP [{sr.kind}] at call {sr.call_index}: {sr.detail}")
    print("\n".join(lines))
    return EXIT_PASS


def main(argv: Optional[list] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code not in (0, None) else EXIT_PASS
    try:
        if args.command == "audit":
            return _cmd_audit(args)
        if args.command == "matrix":
            return _cmd_matrix(args)
        if args.command == "trace-dump":
            return _cmd_trace_dump(args)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
