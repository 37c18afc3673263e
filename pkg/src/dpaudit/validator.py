"""Deterministic verification of a record/replay trace pair.

Checks, in order:

* replay STOP conditions (control-flow or equality mismatches stamped by
  the recorder) and silently-short replays, both reported as call-indexed
  violations;
* per-call parameter invariance (declared privacy parameters must not
  depend on the data);
* per-call sensitivity: the metric distance between the sensitive inputs
  of the two runs must not exceed the declared bound;
* for trusted primitives, calibration of the realized noise scale against
  what the declared (epsilon, delta, sensitivity) implies, including the
  always-wrong zero-scale case.

A NaN anywhere in a compared input makes the distance +inf rather than an
error, so pathological-input leaks surface as sensitivity violations
instead of killing the audit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .accountant import calibrate_gaussian_sigma
from .canonical import canonical_dumps
from .mechanisms import ENSURE_EQUALITY_KIND, AuditSpec, MechanismParams
from .recorder import CONTROL_FLOW_MISMATCH, EQUALITY_MISMATCH, AuditorMode, Trace

__all__ = [
    "ViolationKind",
    "Violation",
    "AuditReport",
    "TraceMismatchError",
    "empirical_distance",
    "validate_records",
    "SENSITIVITY_TOLERANCE",
]

SENSITIVITY_TOLERANCE = 1e-9
_SCALE_RTOL = 1e-9


class ViolationKind:
    CONTROL_FLOW_MISMATCH = "ControlFlowMismatch"
    INVARIANCE_VIOLATION = "InvarianceViolation"
    SENSITIVITY_VIOLATION = "SensitivityViolation"
    NOISE_MISCALIBRATION = "NoiseMiscalibration"
    ACCOUNTING_DISCREPANCY = "AccountingDiscrepancy"
    INPUT_DOMAIN_VIOLATION = "InputDomainViolation"

    ALL = (
        CONTROL_FLOW_MISMATCH,
        INVARIANCE_VIOLATION,
        SENSITIVITY_VIOLATION,
        NOISE_MISCALIBRATION,
        ACCOUNTING_DISCREPANCY,
        INPUT_DOMAIN_VIOLATION,
    )


class TraceMismatchError(ValueError):
    """The two traces do not form a record/replay pair of the same run."""


@dataclass(frozen=True)
class Violation:
    kind: str
    call_index: Optional[int]
    measured: Any = None
    declared: Any = None
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "call_index": self.call_index,
            "measured": self.measured,
            "declared": self.declared,
            "message": self.message,
        }


@dataclass
class AuditReport:
    violations: list = field(default_factory=list)
    trace_summary: list = field(default_factory=list)

    @property
    def verdict(self) -> str:
        return "pass" if not self.violations else "fail"

    def kinds(self) -> set:
        return {v.kind for v in self.violations}

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "violations": [v.to_dict() for v in self.violations],
            "trace_summary": self.trace_summary,
        }

    def to_text(self) -> str:
        lines = [f"verdict: {self.verdict}"]
        for v in self.violations:
            where = f"call {v.call_index}" if v.call_index is not None else "pipeline"
            lines.append(
                f"  [{v.kind}] {where}: measured={v.measured!r} declared={v.declared!r} {v.message}"
            )
        if self.trace_summary:
            lines.append("  call  kind                 metric      measured      declared")
            for row in self.trace_summary:
                lines.append(
                    "  {index:>4}  {kind:<20} {metric:<8} {measured:>12} {declared:>12}".format(
                        index=row["index"],
                        kind=row["kind"],
                        metric=row.get("metric") or "-",
                        measured=_fmt(row.get("measured")),
                        declared=_fmt(row.get("declared")),
                    )
                )
        return "\n".join(lines)


def _fmt(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def empirical_distance(a, b, metric: str) -> float:
    """Metric distance between two query values of the same shape.

    NaN in either operand gives +inf so that pathological values always
    register as a sensitivity violation.
    """
    av = np.atleast_1d(np.asarray(a, dtype=float))
    bv = np.atleast_1d(np.asarray(b, dtype=float))
    if av.shape != bv.shape:
        raise ValueError(f"shape mismatch {av.shape} vs {bv.shape}")
    if np.any(np.isnan(av)) or np.any(np.isnan(bv)):
        return math.inf
    with np.errstate(invalid="ignore"):  # inf - inf is handled below
        if metric == "L1":
            result = float(np.sum(np.abs(av - bv)))
        elif metric == "L2":
            result = float(np.sqrt(np.sum((av - bv) ** 2)))
        elif metric == "Linf":
            result = float(np.max(np.abs(av - bv))) if av.size else 0.0
        elif metric == "Hamming":
            result = float(np.count_nonzero(av != bv))
        else:
            raise ValueError(f"unknown metric {metric!r}")
    # inf - inf inside a norm is NaN; any non-finite operand means the
    # distance cannot be bounded
    return math.inf if math.isnan(result) else result


def _implied_scale(spec: AuditSpec, params: MechanismParams) -> Optional[float]:
    """Noise scale the declared (epsilon, delta, sensitivity) implies for a
    trusted primitive; None when no analytic rule applies."""
    if spec.accountant == "laplace":
        return params.sensitivity / params.epsilon
    if spec.accountant == "gaussian":
        if params.delta <= 0:
            return None
        if params.sensitivity == 0:
            return 0.0
        return calibrate_gaussian_sigma(params.epsilon, params.delta, params.sensitivity)
    if spec.accountant == "exponential":
        return 2.0 * params.sensitivity / params.epsilon
    return None


def _value_is_finite(value) -> bool:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    return bool(np.all(np.isfinite(arr)))


def validate_records(trace: Trace, trace_prime: Trace, specs: dict) -> AuditReport:
    """Compare a record trace against its replay twin and report violations."""
    if trace.mode is not AuditorMode.RECORD or trace_prime.mode is not AuditorMode.REPLAY:
        raise TraceMismatchError("validate_records expects (record, replay) traces in that order")
    if trace.seed != trace_prime.seed:
        raise TraceMismatchError(
            f"traces come from different runs: seeds {trace.seed} != {trace_prime.seed}"
        )

    report = AuditReport()

    if trace_prime.stopped:
        sr = trace_prime.stop_reason
        kind = {
            CONTROL_FLOW_MISMATCH: ViolationKind.CONTROL_FLOW_MISMATCH,
            EQUALITY_MISMATCH: ViolationKind.INVARIANCE_VIOLATION,
        }[sr.kind]
        report.violations.append(
            Violation(kind=kind, call_index=sr.call_index, message=sr.detail)
        )
    elif len(trace_prime) != len(trace):
        # Replay finished cleanly but made fewer calls: missing calls are a
        # control-flow divergence; later record entries have no counterpart.
        report.violations.append(
            Violation(
                kind=ViolationKind.CONTROL_FLOW_MISMATCH,
                call_index=len(trace_prime) + 1,
                measured=len(trace_prime),
                declared=len(trace),
                message="replay run made fewer primitive calls than the record run",
            )
        )

    aligned = min(len(trace), len(trace_prime))
    for i in range(aligned):
        rec = trace.entries[i]
        rep = trace_prime.entries[i]
        if rec.kind != rep.kind:
            # Only reachable on hand-built traces; the recorder stops first.
            report.violations.append(
                Violation(
                    kind=ViolationKind.CONTROL_FLOW_MISMATCH,
                    call_index=rec.index,
                    measured=rep.kind,
                    declared=rec.kind,
                    message="mechanism kind differs across runs",
                )
            )
            break
        if rec.kind == ENSURE_EQUALITY_KIND:
            # Equality was already enforced during replay; nothing to measure.
            report.trace_summary.append(
                {"index": rec.index, "kind": rec.kind, "metric": None,
                 "measured": None, "declared": None}
            )
            continue

        spec: Optional[AuditSpec] = specs.get(rec.kind)
        if canonical_dumps(rec.params) != canonical_dumps(rep.params):
            report.violations.append(
                Violation(
                    kind=ViolationKind.INVARIANCE_VIOLATION,
                    call_index=rec.index,
                    measured=rep.params,
                    declared=rec.params,
                    message=f"{rec.kind}: declared parameters differ across runs",
                )
            )

        params = MechanismParams.from_dict(rec.params)
        metric = spec.metric if spec is not None else "L1"
        measured = empirical_distance(rec.input, rep.input, metric)
        declared = params.sensitivity
        report.trace_summary.append(
            {"index": rec.index, "kind": rec.kind, "metric": metric,
             "measured": measured, "declared": declared}
        )
        if measured > declared + SENSITIVITY_TOLERANCE:
            report.violations.append(
                Violation(
                    kind=ViolationKind.SENSITIVITY_VIOLATION,
                    call_index=rec.index,
                    measured=measured,
                    declared=declared,
                    message=f"{rec.kind}: {metric} input distance exceeds declared sensitivity",
                )
            )
        if not _value_is_finite(rec.input) or not _value_is_finite(rep.input):
            report.violations.append(
                Violation(
                    kind=ViolationKind.INPUT_DOMAIN_VIOLATION,
                    call_index=rec.index,
                    message=f"{rec.kind}: non-finite sensitive input reached the primitive",
                )
            )

        if spec is not None and spec.trusted:
            realized = params.noise_scale
            implied = _implied_scale(spec, params)
            if realized is not None and realized == 0.0:
                report.violations.append(
                    Violation(
                        kind=ViolationKind.NOISE_MISCALIBRATION,
                        call_index=rec.index,
                        measured=0.0,
                        declared=implied,
                        message=f"{rec.kind}: noise scale is zero; the release is deterministic",
                    )
                )
            elif (
                realized is not None
                and implied is not None
                and implied > 0
                and abs(realized - implied) / implied > _SCALE_RTOL
            ):
                report.violations.append(
                    Violation(
                        kind=ViolationKind.NOISE_MISCALIBRATION,
                        call_index=rec.index,
                        measured=realized,
                        declared=implied,
                        message=(
                            f"{rec.kind}: realized noise scale differs from the scale the "
                            "declared privacy parameters imply"
                        ),
                    )
                )
    return report
