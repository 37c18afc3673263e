"""Record/replay trace engine.

An instrumented pipeline is any callable ``pipeline(data, epsilon, ctx)``
that routes every privacy-primitive call through ``ctx.call`` and every
"this value must be data-independent" assertion through
``ctx.ensure_equality``, drawing any auxiliary randomness from ``ctx.gen``.

The auditor runs the pipeline twice with an identically seeded generator:

* RECORD on D: each primitive executes for real; the hook logs mechanism
  kind, realized parameters, sensitive input, post-call generator state and
  exact output.
* REPLAY on D': the hook verifies the call sequence against the recorded
  trace, logs the new inputs, restores the recorded post-call generator
  state and returns the *frozen* recorded output, so the only admissible
  source of divergence between the runs is the primitives' inputs.

A control-flow or equality mismatch stops the replay by raising ReplayStop,
which the replay context catches after stamping ``stop_reason`` on the
replay trace: the pipeline run unwinds cleanly and both partial traces stay
available for validation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from . import rng
from .canonical import canonical_dumps, canonical_loads, to_jsonable
from .mechanisms import (
    ENSURE_EQUALITY_KIND,
    Mechanism,
    MechanismParams,
    default_registry,
)

__all__ = [
    "AuditorMode",
    "StopReason",
    "TraceEntry",
    "Trace",
    "Auditor",
    "AuditContext",
    "ReplayStop",
    "NestedPrimitiveError",
    "TraceFormatError",
    "generate_traces",
    "run_pipeline_pair",
    "on_primitive_call",
    "trace_to_json",
    "trace_from_json",
    "save_trace",
    "load_trace",
]

TRACE_FORMAT_VERSION = 1

CONTROL_FLOW_MISMATCH = "control_flow_mismatch"
EQUALITY_MISMATCH = "equality_mismatch"


class AuditorMode(enum.Enum):
    RECORD = "record"
    REPLAY = "replay"


class ReplayStop(Exception):
    """Raised inside the hook to unwind a replay run after a mismatch."""


class NestedPrimitiveError(RuntimeError):
    """A primitive call re-entered the hook; the trace model is flat."""


class TraceFormatError(ValueError):
    """A trace document does not match the expected schema."""


@dataclass(frozen=True)
class StopReason:
    kind: str  # CONTROL_FLOW_MISMATCH | EQUALITY_MISMATCH
    call_index: int
    detail: str = ""

    def to_dict(self) -> dict:
        return {"kind": self.kind, "call_index": self.call_index, "detail": self.detail}

    @classmethod
    def from_dict(cls, obj: dict) -> "StopReason":
        return cls(kind=obj["kind"], call_index=int(obj["call_index"]), detail=obj.get("detail", ""))


@dataclass
class TraceEntry:
    """One primitive call. Record-mode entries carry all five payloads;
    replay-mode entries carry (index, kind, params, input) only."""

    index: int
    kind: str
    params: dict
    input: Any
    rng_digest: Optional[str] = None
    rng_state: Optional[str] = None
    output: Any = None

    def to_dict(self) -> dict:
        out = {
            "index": self.index,
            "kind": self.kind,
            "params": self.params,
            "input": self.input,
        }
        if self.rng_digest is not None:
            out["rng_digest"] = self.rng_digest
        if self.rng_state is not None:
            out["rng_state"] = self.rng_state
        if self.output is not None:
            out["output"] = self.output
        return out


@dataclass
class Trace:
    mode: AuditorMode
    seed: int
    entries: list = field(default_factory=list)
    stop_reason: Optional[StopReason] = None

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def stopped(self) -> bool:
        return self.stop_reason is not None


def _freeze_decode(output: Any) -> Any:
    """Turn a recorded output back into the shape pipelines work with."""
    if isinstance(output, list):
        try:
            return np.asarray(output, dtype=float)
        except (TypeError, ValueError):
            return output
    return output


class AuditContext:
    """Handle passed to the pipeline under audit."""

    def __init__(self, auditor: "Auditor"):
        self._auditor = auditor

    @property
    def gen(self) -> np.random.Generator:
        return self._auditor.gen

    @property
    def mode(self) -> AuditorMode:
        return self._auditor.mode

    def call(self, kind: str, q: Any, params: MechanismParams) -> Any:
        return self._auditor.on_primitive_call(kind, q, params)

    def ensure_equality(self, value: Any) -> Any:
        return self._auditor.on_primitive_call(ENSURE_EQUALITY_KIND, value, None)

    def __enter__(self) -> "AuditContext":
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        self._auditor._finish_phase()
        if exc_type is not None and issubclass(exc_type, ReplayStop):
            return True  # controlled unwinding; traces remain on the auditor
        return False


class PlainContext:
    """Context that just executes primitives: no tracing, no freezing.

    Used to run an instrumented pipeline outside an audit, e.g. as the
    opaque mechanism inside a black-box audit.
    """

    def __init__(self, gen: np.random.Generator, registry: Optional[dict] = None):
        self.gen = gen
        self.registry = default_registry() if registry is None else registry
        self.mode = None

    def call(self, kind: str, q: Any, params: MechanismParams) -> Any:
        out, _ = self.registry[kind].run(q, params, self.gen)
        return out

    def ensure_equality(self, value: Any) -> Any:
        return value


class Auditor:
    """Owns the generator, the mechanism registry and both traces.

    One auditor audits one pipeline execution pair; record and replay are
    strictly sequential and a context must not be shared across threads.
    """

    def __init__(self, seed: int, registry: Optional[dict] = None):
        self.seed = int(seed)
        self.registry: dict = default_registry() if registry is None else dict(registry)
        self.mode: Optional[AuditorMode] = None
        self.gen: Optional[np.random.Generator] = None
        self.record_trace: Optional[Trace] = None
        self.replay_trace: Optional[Trace] = None
        self._active = False
        self._in_primitive = False

    def specs(self) -> dict:
        """Kind -> AuditSpec map for the validator."""
        return {kind: mech.spec for kind, mech in self.registry.items()}

    # -- phase management -------------------------------------------------

    def record(self) -> AuditContext:
        if self._active:
            raise RuntimeError("previous audit phase still active")
        self.mode = AuditorMode.RECORD
        self.gen = rng.make_generator(self.seed)
        self.record_trace = Trace(mode=AuditorMode.RECORD, seed=self.seed)
        self._active = True
        return AuditContext(self)

    def replay(self) -> AuditContext:
        if self._active:
            raise RuntimeError("previous audit phase still active")
        if self.record_trace is None:
            raise RuntimeError("replay requires a completed record phase")
        self.mode = AuditorMode.REPLAY
        self.gen = rng.make_generator(self.seed)  # reseeded identically
        self.replay_trace = Trace(mode=AuditorMode.REPLAY, seed=self.seed)
        self._active = True
        return AuditContext(self)

    def _finish_phase(self) -> None:
        self._active = False
        self._in_primitive = False
        self.mode = None

    def _stop(self, kind: str, call_index: int, detail: str) -> None:
        self.replay_trace.stop_reason = StopReason(kind=kind, call_index=call_index, detail=detail)
        raise ReplayStop(detail)

    # -- the instrumentation hook -----------------------------------------

    def on_primitive_call(self, kind: str, q: Any, params: Optional[MechanismParams]) -> Any:
        if not self._active or self.mode is None:
            raise RuntimeError("primitive call outside an audit phase")
        if self._in_primitive:
            raise NestedPrimitiveError(
                f"primitive {kind!r} called from inside another primitive; "
                "the trace model is a flat call sequence"
            )
        is_marker = kind == ENSURE_EQUALITY_KIND
        mech: Optional[Mechanism] = None
        if not is_marker:
            if kind not in self.registry:
                raise KeyError(f"unregistered mechanism kind {kind!r}")
            mech = self.registry[kind]
            # Guarded input validation happens in both modes, before any
            # trace entry exists: a rejected call spends no budget.
            mech.validate_input(q)

        if self.mode is AuditorMode.RECORD:
            return self._record_call(kind, mech, q, params)
        return self._replay_call(kind, mech, q, params)

    def _record_call(self, kind, mech, q, params) -> Any:
        trace = self.record_trace
        index = len(trace.entries) + 1
        if mech is None:
            output, params_dict = q, {}
        else:
            self._in_primitive = True
            try:
                output, realized = mech.run(q, params, self.gen)
            finally:
                self._in_primitive = False
            params_dict = realized.to_dict()
        post = rng.snapshot(self.gen)
        trace.entries.append(
            TraceEntry(
                index=index,
                kind=kind,
                params=params_dict,
                input=to_jsonable(q),
                rng_digest=post.digest,
                rng_state=post.hex(),
                output=to_jsonable(output),
            )
        )
        return output

    def _replay_call(self, kind, mech, q, params) -> Any:
        ref = self.record_trace
        trace = self.replay_trace
        k = len(trace.entries) + 1
        if k > len(ref.entries):
            self._stop(
                CONTROL_FLOW_MISMATCH,
                k,
                f"replay issued call {k} ({kind}) but the record run made {len(ref.entries)} calls",
            )
        recorded = ref.entries[k - 1]
        if recorded.kind != kind:
            self._stop(
                CONTROL_FLOW_MISMATCH,
                k,
                f"call {k} is {kind!r} on replay but {recorded.kind!r} on record",
            )
        if mech is None:
            q_json = to_jsonable(q)
            if canonical_dumps(q_json) != canonical_dumps(recorded.input):
                self._stop(
                    EQUALITY_MISMATCH,
                    k,
                    f"ensure_equality at call {k}: replay value {q_json!r} "
                    f"differs from recorded {recorded.input!r}",
                )
            trace.entries.append(TraceEntry(index=k, kind=kind, params={}, input=q_json))
            return q
        realized = mech.resolve_params(params)
        trace.entries.append(
            TraceEntry(index=k, kind=kind, params=realized.to_dict(), input=to_jsonable(q))
        )
        rng.restore(self.gen, _rng_state_from_entry(recorded))
        return _freeze_decode(recorded.output)


def _rng_state_from_entry(entry: TraceEntry) -> rng.RngState:
    if entry.rng_state is None:
        raise TraceFormatError(f"record entry {entry.index} is missing its generator state")
    return rng.RngState.from_hex(entry.rng_state)


def on_primitive_call(auditor: Auditor, kind: str, q: Any, params: Optional[MechanismParams]) -> Any:
    """Module-level alias for the instrumentation hook."""
    return auditor.on_primitive_call(kind, q, params)


def run_pipeline_pair(
    pipeline: Callable,
    data,
    data_prime,
    seed: int,
    epsilon: float = 1.0,
    registry: Optional[dict] = None,
):
    """Record on data, replay on data_prime.

    Returns (record_trace, replay_trace, record_output, replay_output);
    replay_output is None when the replay stopped.
    """
    auditor = Auditor(seed, registry=registry)
    record_output = None
    replay_output = None
    with auditor.record() as ctx:
        record_output = pipeline(data, epsilon, ctx)
    with auditor.replay() as ctx:
        replay_output = pipeline(data_prime, epsilon, ctx)
    return auditor.record_trace, auditor.replay_trace, record_output, replay_output


def generate_traces(
    pipeline: Callable,
    data,
    data_prime,
    seed: int,
    epsilon: float = 1.0,
    registry: Optional[dict] = None,
):
    """Alg.-style entry point: run the instrumented pipeline on both
    datasets and return the (record, replay) trace pair. Replay STOP
    conditions land in the replay trace's stop_reason, not exceptions."""
    trace, trace_prime, _, _ = run_pipeline_pair(
        pipeline, data, data_prime, seed, epsilon=epsilon, registry=registry
    )
    return trace, trace_prime


# -- trace (de)serialization ----------------------------------------------


def trace_to_json(trace: Trace) -> dict:
    doc = {
        "version": TRACE_FORMAT_VERSION,
        "mode": trace.mode.value,
        "seed": trace.seed,
        "entries": [e.to_dict() for e in trace.entries],
    }
    if trace.stop_reason is not None:
        doc["stop_reason"] = trace.stop_reason.to_dict()
    return doc


def trace_from_json(doc: dict) -> Trace:
    if not isinstance(doc, dict):
        raise TraceFormatError("trace document must be a JSON object")
    if doc.get("version") != TRACE_FORMAT_VERSION:
        raise TraceFormatError(f"unsupported trace version {doc.get('version')!r}")
    try:
        mode = AuditorMode(doc["mode"])
        entries = []
        for raw in doc["entries"]:
            entries.append(
                TraceEntry(
                    index=int(raw["index"]),
                    kind=str(raw["kind"]),
                    params=dict(raw["params"]),
                    input=raw["input"],
                    rng_digest=raw.get("rng_digest"),
                    rng_state=raw.get("rng_state"),
                    output=raw.get("output"),
                )
            )
        trace = Trace(mode=mode, seed=int(doc["seed"]), entries=entries)
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceFormatError(f"malformed trace document: {exc}") from exc
    expected = list(range(1, len(entries) + 1))
    if [e.index for e in entries] != expected:
        raise TraceFormatError("trace entry indices must be contiguous from 1")
    if "stop_reason" in doc:
        trace.stop_reason = StopReason.from_dict(doc["stop_reason"])
    return trace


def save_trace(trace: Trace, path) -> None:
    text = canonical_dumps(trace_to_json(trace))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def load_trace(path) -> Trace:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = canonical_loads(text)
    except ValueError as exc:
        raise TraceFormatError(f"trace file is not valid JSON: {exc}") from exc
    return trace_from_json(doc)
