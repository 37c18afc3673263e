"""Paired buggy/fixed DP pipelines serving as detection ground truth.

Each case re-creates one real bug pattern in a minimal analog pipeline: the
buggy variant differs from its fixed twin by one localized change, declares
exactly one primary expected violation, and ships the neighbor strategy
that triggers it (plus benign strategies that demonstrate the audit's
incompleteness boundary).

Audit designation per case:
* record_replay - the deterministic trace checks flag the bug;
* distributional - the bug only shows in the composed privacy loss
  (eps_hat exceeding the claim);
* claim_check - the pipeline's own accountant claim is compared against
  the composed analytic PLD bound; a claim below the bound is a leak, a
  claim more than CLAIM_LOOSE_FACTOR times the bound signals a broken
  accounting formula even though no privacy is lost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .accountant import advanced_composition
from .distaudit import AuditVerdict, distributional_audit
from .mechanisms import InputDomainError, MechanismParams, default_registry
from .neighbors import AdjacencyModel, ColumnSpec, gen_neighbors, gen_synthetic
from .recorder import run_pipeline_pair
from .validator import AuditReport, Violation, ViolationKind, validate_records

__all__ = [
    "PipelineCase",
    "CaseResult",
    "MatrixRow",
    "CASE_NAMES",
    "get_case",
    "cases",
    "manifest",
    "run_case",
    "run_case_on_pair",
    "detection_matrix",
    "CLAIM_LOOSE_FACTOR",
    "buggy_advanced_composition",
]

CLAIM_LOOSE_FACTOR = 25.0


def buggy_advanced_composition(eps: float, k: int, delta_slack: float) -> float:
    """The broken odometer formula: 1/delta' where ln(1/delta') belongs."""
    if eps == 0:
        return 0.0
    return eps * math.sqrt(2.0 * k * (1.0 / delta_slack)) + k * eps * (math.exp(eps) - 1.0)


@dataclass(frozen=True)
class PipelineCase:
    name: str
    variant: str  # "buggy" | "fixed"
    expected_violation: Optional[str]
    adjacency: AdjacencyModel
    strategy: str
    audit: str  # "record_replay" | "distributional" | "claim_check"
    epsilon: float
    claimed_delta: float
    benign_strategies: tuple
    # build(seed) -> (pipeline, data, data_prime, claimed_epsilon)
    build: Callable = field(repr=False, compare=False, default=None)

    @property
    def key(self) -> tuple:
        return (self.name, self.variant)


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------


def run_scaled_count(data, epsilon, ctx, multiplier=2, declared_sensitivity=1.0):
    """Noisy count times a public multiplier; the buggy variant declares the
    pre-scaling sensitivity."""
    scaled_count = float(len(data) * multiplier)
    noisy = ctx.call(
        "laplace",
        [scaled_count],
        MechanismParams(epsilon=epsilon, sensitivity=declared_sensitivity),
    )
    ctx.ensure_equality(multiplier)
    return noisy


def run_covariance_release(data, epsilon, ctx, clip_bound=2.0, use_raw=False):
    """Second-moment release with clipping; the buggy variant computes the
    statistic on the raw data after building the clipped copy."""
    x = data.column("x")
    newdata = np.clip(x, -clip_bound, clip_bound)
    src = x if use_raw else newdata
    stat = [float(np.sum(src**2)), float(np.sum(src))]
    declared = clip_bound**2 + clip_bound
    return ctx.call("laplace", stat, MechanismParams(epsilon=epsilon, sensitivity=declared))


def run_privbayes_lite(data, epsilon, ctx, n_public=50, k_parents=3, mi_thresh=-1.0,
                       private_branch=True, guard_k=False):
    """Structure selection sketch: exponential pick over per-column scores,
    then a noisy release of the picked score. n_public is the advertised
    dataset size the sensitivity formulas are built from.

    Bugs mirrored: the noise scale 2*(d - K)/(n*eps) collapses to zero when
    K == d, and the keep/drop branch reads the un-noised private score."""
    cols = [c.name for c in data.schema]
    d = len(cols)
    mi = [float(np.mean(data.column(c))) / data.schema[i].hi for i, c in enumerate(cols)]
    eps_select = epsilon / 2.0
    eps_release = epsilon / 2.0
    idx = ctx.call(
        "exponential", mi, MechanismParams(epsilon=eps_select, sensitivity=2.0 / n_public)
    )
    k_eff = min(k_parents, d - 1) if guard_k else k_parents
    release_sens = 2.0 * (d - k_eff) / n_public
    noisy_mi = ctx.call(
        "laplace", [mi[idx]], MechanismParams(epsilon=eps_release, sensitivity=release_sens)
    )
    branch_value = mi[idx] if private_branch else float(noisy_mi[0])
    drop_parents = bool(mi_thresh >= branch_value)
    ctx.ensure_equality(drop_parents)
    return int(idx), float(noisy_mi[0]), drop_parents


def run_odometer(data, epsilon, ctx, k=10, delta_slack=1e-6, broken_formula=False):
    """k threshold-count queries plus the odometer's total-budget claim.

    A single query needs no composition theorem, so for k == 1 both
    variants report the basic epsilon."""
    v = data.column("v")
    answers = []
    for t in range(k):
        count = float(np.sum(v >= t))
        noisy = ctx.call("laplace", [count], MechanismParams(epsilon=epsilon, sensitivity=1.0))
        answers.append(float(noisy[0]))
    if k == 1:
        claim = epsilon
    elif broken_formula:
        claim = buggy_advanced_composition(epsilon, k, delta_slack)
    else:
        claim = advanced_composition(epsilon, 0.0, k, delta_slack)
    return answers, claim


def run_noisy_sgd_lite(data, epsilon, ctx, iters=2, clip_norm=1.0, lr=0.1,
                       public_n=30, delta_total=1e-6, batch_from_data=False):
    """Toy DP gradient descent: per-sample clipping, Gaussian noise on the
    gradient sum, mean by expected batch size. Under add/remove adjacency
    the dataset length is private, so deriving the batch size from it leaks."""
    n = len(data)
    expected_batch_size = n if batch_from_data else public_n
    ctx.ensure_equality(int(expected_batch_size))
    x = data.column("x")
    y = data.column("y")
    eps_iter = epsilon / iters
    delta_iter = delta_total / iters
    w = 0.0
    for _ in range(iters):
        grads = 2.0 * (w * x - y) * x
        norms = np.abs(grads)
        factors = np.minimum(1.0, clip_norm / np.where(norms > 0, norms, 1.0))
        grad_sum = float(np.sum(grads * factors))
        noisy = ctx.call(
            "gaussian",
            [grad_sum],
            MechanismParams(epsilon=eps_iter, sensitivity=clip_norm, delta=delta_iter),
        )
        w = w - lr * float(noisy[0]) / expected_batch_size
    return w


def run_domain_inference(data, epsilon, ctx, declared_domain=10, infer_domain=False):
    """Histogram release; the buggy variant infers the support size from the
    private maximum instead of the user-declared domain."""
    v = data.column("v")
    domain = int(np.max(v)) + 1 if infer_domain else int(declared_domain)
    ctx.ensure_equality(domain)
    binned = np.clip(v, 0, domain - 1).astype(int)
    hist = np.bincount(binned, minlength=domain).astype(float)
    noisy = ctx.call(
        "laplace", hist.tolist(), MechanismParams(epsilon=epsilon, sensitivity=1.0)
    )
    return noisy


def run_double_spend(data, epsilon, ctx, split_budget=False, quantiles_enabled=False,
                     clip_bound=2.0):
    """Numeric-encoder sketch: a bounds-style release and a count release on
    the same column. The buggy variant spends the full budget on each call
    while claiming it once, and gates an extra primitive on a raw statistic."""
    x = data.column("x")
    lengths = data.column("len")
    eps_call = epsilon / 2.0 if split_budget else epsilon
    clipped = np.clip(x, 0.0, clip_bound)
    bounds_stat = [float(np.sum(clipped))]
    out_bounds = ctx.call(
        "laplace", bounds_stat, MechanismParams(epsilon=eps_call, sensitivity=clip_bound)
    )
    out_count = ctx.call(
        "laplace", [float(len(data))], MechanismParams(epsilon=eps_call, sensitivity=1.0)
    )
    if split_budget:
        run_quantiles = quantiles_enabled  # public switch
    else:
        run_quantiles = bool(np.any(lengths != 1))  # raw, non-private measurement
    if run_quantiles:
        mid = [float(np.median(clipped))]
        ctx.call("laplace", mid, MechanismParams(epsilon=eps_call, sensitivity=clip_bound))
    return float(out_bounds[0]), float(out_count[0])


def run_linreg_objective(data, epsilon, ctx, bounds=(0.0, 2.0), lower_twice=False):
    """Folded-Laplace release of the quadratic regression coefficient; the
    buggy variant builds the sensitivity from the lower bound twice."""
    lo, hi = bounds
    x = np.clip(data.column("x"), lo, hi)
    coef2 = [float(np.sum(x**2))]
    if lower_twice:
        sens = max(abs(lo), abs(lo)) ** 2
    else:
        sens = max(abs(lo), abs(hi)) ** 2
    noisy = ctx.call("laplace", coef2, MechanismParams(epsilon=epsilon, sensitivity=sens))
    return np.abs(noisy)  # fold at zero


def run_jam_lite(data, epsilon, ctx, model_ref=None, pub_ref=None, declared_sens=4.0):
    """Marginal selection under replace-one adjacency. Each error term moves
    by up to 2 in L1 when a record changes; the terms can move in opposite
    directions, so the true score sensitivity is 4."""
    scores = []
    for c in data.schema:
        hist = np.bincount(data.column(c.name).astype(int), minlength=int(c.hi) + 1).astype(float)
        model_error = float(np.sum(np.abs(hist - np.asarray(model_ref[c.name]))))
        pub_error = float(np.sum(np.abs(hist - np.asarray(pub_ref[c.name]))))
        scores.append(model_error - pub_error)
    idx = ctx.call(
        "exponential", scores, MechanismParams(epsilon=epsilon, sensitivity=declared_sens)
    )
    return int(idx)


def run_unguarded_inputs(data, epsilon, ctx, guarded=True):
    """Sum release through the guarded or unguarded Laplace variant; the
    unguarded one happily propagates NaN and +/-inf."""
    total = [float(np.sum(data.column("x")))]
    kind = "laplace" if guarded else "laplace_unguarded"
    noisy = ctx.call(kind, total, MechanismParams(epsilon=epsilon, sensitivity=2.0))
    return noisy


# ---------------------------------------------------------------------------
# case construction
# ---------------------------------------------------------------------------


def _schema_int(name="v", hi=9):
    return [ColumnSpec(name, "int", 0, hi)]


def _pair_via_strategy(seed, schema, n, model, strategy):
    data = gen_synthetic(seed, n, schema)
    return gen_neighbors(data, model, strategy, seed, count=1)[0]


def _build_scaled_count(variant):
    def build(seed):
        declared = 1.0 if variant == "buggy" else 2.0

        def pipeline(data, epsilon, ctx):
            return run_scaled_count(data, epsilon, ctx, multiplier=2,
                                    declared_sensitivity=declared)

        d, dp = _pair_via_strategy(seed, _schema_int(), 60, AdjacencyModel.ADD_REMOVE,
                                   "remove_random")
        return pipeline, d, dp, 1.0

    return build


def _build_covariance(variant):
    schema = [ColumnSpec("x", "real", 0.0, 2.0)]

    def build(seed):
        use_raw = variant == "buggy"

        def pipeline(data, epsilon, ctx):
            return run_covariance_release(data, epsilon, ctx, clip_bound=2.0, use_raw=use_raw)

        d, dp = _pair_via_strategy(seed, schema, 40, AdjacencyModel.ADD_REMOVE,
                                   "add_out_of_domain")
        return pipeline, d, dp, 1.0

    return build


def _build_privbayes(variant):
    schema = [ColumnSpec("a", "int", 0, 4), ColumnSpec("b", "int", 0, 9),
              ColumnSpec("c", "int", 0, 3)]

    def build(seed):
        buggy = variant == "buggy"

        def pipeline(data, epsilon, ctx):
            return run_privbayes_lite(data, epsilon, ctx, n_public=50, k_parents=3,
                                      mi_thresh=-1.0, private_branch=buggy,
                                      guard_k=not buggy)

        d, dp = _pair_via_strategy(seed, schema, 50, AdjacencyModel.ADD_REMOVE,
                                   "add_duplicate")
        return pipeline, d, dp, 1.0

    return build


def _build_odometer(variant):
    def build(seed):
        broken = variant == "buggy"
        eps_each = 0.1
        k = 10

        def pipeline(data, epsilon, ctx):
            return run_odometer(data, epsilon, ctx, k=k, delta_slack=1e-6,
                                broken_formula=broken)

        d, dp = _pair_via_strategy(seed, _schema_int(), 40, AdjacencyModel.ADD_REMOVE,
                                   "add_uniform")
        if broken:
            claim = buggy_advanced_composition(eps_each, k, 1e-6)
        else:
            claim = advanced_composition(eps_each, 0.0, k, 1e-6)
        return pipeline, d, dp, claim

    return build


def _build_noisy_sgd(variant):
    schema = [ColumnSpec("x", "real", 0.0, 1.0), ColumnSpec("y", "real", 0.0, 1.0)]

    def build(seed):
        from_data = variant == "buggy"

        def pipeline(data, epsilon, ctx):
            return run_noisy_sgd_lite(data, epsilon, ctx, public_n=30,
                                      batch_from_data=from_data)

        d, dp = _pair_via_strategy(seed, schema, 30, AdjacencyModel.ADD_REMOVE,
                                   "remove_random")
        return pipeline, d, dp, 1.0

    return build


def _build_domain_inference(variant):
    def build(seed):
        infer = variant == "buggy"

        def pipeline(data, epsilon, ctx):
            return run_domain_inference(data, epsilon, ctx, declared_domain=10,
                                        infer_domain=infer)

        d, dp = _pair_via_strategy(seed, _schema_int(), 40, AdjacencyModel.ADD_REMOVE,
                                   "add_out_of_domain")
        return pipeline, d, dp, 1.0

    return build


def _double_spend_schema():
    return [ColumnSpec("x", "real", 0.0, 2.0), ColumnSpec("len", "int", 1, 1)]


def _build_double_spend(variant):
    def build(seed):
        split = variant == "fixed"

        def pipeline(data, epsilon, ctx):
            return run_double_spend(data, epsilon, ctx, split_budget=split,
                                    quantiles_enabled=False)

        d = gen_synthetic(seed, 30, _double_spend_schema())
        # worst-case neighbor: the added row saturates the clipping bound,
        # shifting both released statistics by their full sensitivity
        dp = d.with_row_added((22.0, 1))
        return pipeline, d, dp, 1.0

    return build


def _build_linreg(variant):
    schema = [ColumnSpec("x", "real", 0.0, 2.0)]

    def build(seed):
        lower_twice = variant == "buggy"

        def pipeline(data, epsilon, ctx):
            return run_linreg_objective(data, epsilon, ctx, bounds=(0.0, 2.0),
                                        lower_twice=lower_twice)

        d = gen_synthetic(seed, 30, schema)
        old = d.row(0)[0]
        new = 2.0 if old < 1.0 else 0.0  # guarantees a nonzero coefficient gap
        dp = d.with_row_replaced(0, (new,))
        return pipeline, d, dp, 1.0

    return build


def _build_jam(variant):
    schema = [ColumnSpec("a", "int", 0, 2), ColumnSpec("b", "int", 0, 2)]

    def build(seed):
        declared = 2.0 if variant == "buggy" else 4.0
        d = gen_synthetic(seed, 30, schema)
        old = d.row(0)
        new_a = (int(old[0]) + 1) % 3
        dp = d.with_row_replaced(0, (new_a, old[1]))
        # references chosen so the two error terms move in opposite
        # directions between the runs: the worst case for the score
        model_ref = {
            c.name: np.bincount(d.column(c.name).astype(int), minlength=int(c.hi) + 1)
            .astype(float).tolist()
            for c in schema
        }
        pub_ref = {
            c.name: np.bincount(dp.column(c.name).astype(int), minlength=int(c.hi) + 1)
            .astype(float).tolist()
            for c in schema
        }

        def pipeline(data, epsilon, ctx):
            return run_jam_lite(data, epsilon, ctx, model_ref=model_ref, pub_ref=pub_ref,
                                declared_sens=declared)

        return pipeline, d, dp, 1.0

    return build


def _build_unguarded(variant):
    schema = [ColumnSpec("x", "real", 0.0, 2.0)]

    def build(seed):
        guarded = variant == "fixed"

        def pipeline(data, epsilon, ctx):
            return run_unguarded_inputs(data, epsilon, ctx, guarded=guarded)

        d, dp = _pair_via_strategy(seed, schema, 30, AdjacencyModel.ADD_REMOVE, "add_nan")
        return pipeline, d, dp, 1.0

    return build


def _make_cases() -> dict:
    table = [
        # name, expected buggy violation, adjacency, strategy, audit, builder, benign
        ("scaled_count", ViolationKind.SENSITIVITY_VIOLATION, AdjacencyModel.ADD_REMOVE,
         "remove_random", "record_replay", _build_scaled_count,
         ("add_uniform", "add_duplicate", "add_marginal")),
        ("covariance_release", ViolationKind.SENSITIVITY_VIOLATION, AdjacencyModel.ADD_REMOVE,
         "add_out_of_domain", "record_replay", _build_covariance,
         ("add_uniform", "add_duplicate", "add_marginal")),
        ("privbayes_lite", ViolationKind.NOISE_MISCALIBRATION, AdjacencyModel.ADD_REMOVE,
         "add_duplicate", "record_replay", _build_privbayes,
         ("add_uniform", "add_marginal", "remove_random")),
        ("odometer", ViolationKind.ACCOUNTING_DISCREPANCY, AdjacencyModel.ADD_REMOVE,
         "add_uniform", "claim_check", _build_odometer,
         ("add_duplicate", "add_marginal", "remove_random")),
        ("noisy_sgd_lite", ViolationKind.INVARIANCE_VIOLATION, AdjacencyModel.ADD_REMOVE,
         "remove_random", "record_replay", _build_noisy_sgd,
         ("add_uniform", "add_duplicate", "add_marginal")),
        ("domain_inference", ViolationKind.INVARIANCE_VIOLATION, AdjacencyModel.ADD_REMOVE,
         "add_out_of_domain", "record_replay", _build_domain_inference,
         ("add_duplicate", "add_marginal", "remove_random")),
        ("double_spend", ViolationKind.ACCOUNTING_DISCREPANCY, AdjacencyModel.ADD_REMOVE,
         "crafted_saturating_row", "distributional", _build_double_spend,
         ("add_uniform", "add_duplicate", "add_marginal")),
        ("linreg_objective", ViolationKind.SENSITIVITY_VIOLATION, AdjacencyModel.REPLACE_ONE,
         "crafted_bound_swap", "record_replay", _build_linreg,
         ("replace_combined",)),
        ("jam_lite", ViolationKind.SENSITIVITY_VIOLATION, AdjacencyModel.REPLACE_ONE,
         "crafted_opposite_shift", "record_replay", _build_jam,
         ("replace_combined",)),
        ("unguarded_inputs", ViolationKind.SENSITIVITY_VIOLATION, AdjacencyModel.ADD_REMOVE,
         "add_nan", "record_replay", _build_unguarded,
         ("add_uniform", "add_inf", "add_float_limit")),
    ]
    out = {}
    for name, expected, adjacency, strategy, audit, builder, benign in table:
        for variant in ("buggy", "fixed"):
            out[(name, variant)] = PipelineCase(
                name=name,
                variant=variant,
                expected_violation=expected if variant == "buggy" else None,
                adjacency=adjacency,
                strategy=strategy,
                audit=audit,
                epsilon=0.1 if name == "odometer" else 1.0,
                claimed_delta=1e-6,
                benign_strategies=benign,
                build=builder(variant),
            )
    return out


_CASES = _make_cases()
CASE_NAMES = tuple(sorted({name for name, _ in _CASES}))

# the nine buggy/fixed twins of the headline detection matrix; the
# pathological-input case is exercised separately with its NaN/inf pairs
MATRIX_CASE_NAMES = tuple(n for n in CASE_NAMES if n != "unguarded_inputs")


def get_case(name: str, variant: str) -> PipelineCase:
    try:
        return _CASES[(name, variant)]
    except KeyError:
        raise KeyError(f"unknown corpus case {name!r} variant {variant!r}") from None


def cases():
    return [case for _, case in sorted(_CASES.items())]


def manifest() -> list:
    """Machine-readable case registry consumed by the CLI."""
    return [
        {
            "name": c.name,
            "variant": c.variant,
            "expected_violation": c.expected_violation,
            "adjacency": c.adjacency.value,
            "strategy": c.strategy,
            "audit": c.audit,
        }
        for c in cases()
    ]


# ---------------------------------------------------------------------------
# running cases
# ---------------------------------------------------------------------------


@dataclass
class CaseResult:
    name: str
    variant: str
    report: Optional[AuditReport]
    violations: list
    controlled_rejection: bool
    eps_hat: Optional[float]
    claimed_epsilon: float
    expected_violation: Optional[str]

    @property
    def flagged_kinds(self) -> set:
        return {v.kind for v in self.violations}

    @property
    def ok(self) -> bool:
        """Result matches the manifest expectation."""
        if self.expected_violation is None:
            return not self.violations
        return self.expected_violation in self.flagged_kinds

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "variant": self.variant,
            "expected_violation": self.expected_violation,
            "flagged": sorted(self.flagged_kinds),
            "controlled_rejection": self.controlled_rejection,
            "eps_hat": self.eps_hat,
            "claimed_epsilon": self.claimed_epsilon,
            "ok": self.ok,
            "violations": [v.to_dict() for v in self.violations],
        }


def run_case(
    case: PipelineCase,
    seed: int,
    n_samples: int = 100_000,
    delta: float = 1e-6,
    grid_step: float = 1e-3,
    with_distributional: Optional[bool] = None,
) -> CaseResult:
    """Audit one case with its designated neighbor pair.

    with_distributional defaults to the case's designation; pass True to
    additionally run the distributional audit (used by the full matrix,
    where fixed twins must pass both audits).
    """
    pipeline, data, data_prime, claimed_eps = case.build(seed)
    return run_case_on_pair(
        case, pipeline, data, data_prime, claimed_eps, seed,
        n_samples=n_samples, delta=delta, grid_step=grid_step,
        with_distributional=with_distributional,
    )


def run_case_on_pair(
    case: PipelineCase,
    pipeline: Callable,
    data,
    data_prime,
    claimed_eps: float,
    seed: int,
    n_samples: int = 100_000,
    delta: float = 1e-6,
    grid_step: float = 1e-3,
    with_distributional: Optional[bool] = None,
) -> CaseResult:
    """Audit a case pipeline on an explicit neighbor pair."""
    registry = default_registry()
    if with_distributional is None:
        with_distributional = case.audit in ("distributional", "claim_check")

    try:
        trace, trace_prime, _, _ = run_pipeline_pair(
            pipeline, data, data_prime, seed, epsilon=case.epsilon, registry=registry
        )
    except InputDomainError:
        # a guarded primitive rejected a pathological input before spending
        # any budget: controlled rejection, nothing to flag
        return CaseResult(
            name=case.name,
            variant=case.variant,
            report=None,
            violations=[],
            controlled_rejection=True,
            eps_hat=None,
            claimed_epsilon=claimed_eps,
            expected_violation=case.expected_violation,
        )

    specs = {kind: mech.spec for kind, mech in registry.items()}
    report = validate_records(trace, trace_prime, specs)
    violations = list(report.violations)
    eps_hat = None

    traces_complete = not trace_prime.stopped and len(trace) == len(trace_prime)
    if with_distributional and traces_complete:
        verdict = distributional_audit(
            trace, trace_prime, specs, n_samples, delta, claimed_eps, seed,
            grid_step=grid_step, registry=registry,
        )
        eps_hat = verdict.eps_hat
        violations.extend(_claim_violations(case, verdict))

    return CaseResult(
        name=case.name,
        variant=case.variant,
        report=report,
        violations=violations,
        controlled_rejection=False,
        eps_hat=eps_hat,
        claimed_epsilon=claimed_eps,
        expected_violation=case.expected_violation,
    )


def _claim_violations(case: PipelineCase, verdict: AuditVerdict) -> list:
    """Translate a distributional verdict into accounting violations."""
    out = []
    if case.audit == "claim_check":
        # the pipeline's own accountant claim vs the composed PLD bound
        bound = verdict.eps_hat
        claim = verdict.eps_claimed
        if bound > 0 and claim < bound * (1.0 - 1e-9):
            out.append(
                Violation(
                    kind=ViolationKind.ACCOUNTING_DISCREPANCY,
                    call_index=None,
                    measured=bound,
                    declared=claim,
                    message="accountant claims less budget than the measured privacy loss",
                )
            )
        elif bound > 0 and claim > bound * CLAIM_LOOSE_FACTOR:
            out.append(
                Violation(
                    kind=ViolationKind.ACCOUNTING_DISCREPANCY,
                    call_index=None,
                    measured=bound,
                    declared=claim,
                    message=(
                        "accountant claim exceeds the composed PLD bound by more than "
                        f"{CLAIM_LOOSE_FACTOR:g}x; the composition formula is wrong "
                        "(loose, not leaky)"
                    ),
                )
            )
    elif not verdict.passed:
        out.append(
            Violation(
                kind=ViolationKind.ACCOUNTING_DISCREPANCY,
                call_index=None,
                measured=verdict.eps_hat,
                declared=verdict.eps_claimed,
                message="measured privacy loss exceeds the claimed budget",
            )
        )
    return out


@dataclass
class MatrixRow:
    name: str
    variant: str
    expected: Optional[str]
    flagged: list
    ok: bool

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "variant": self.variant,
            "expected": self.expected,
            "flagged": self.flagged,
            "ok": self.ok,
        }


def detection_matrix(
    seed: int,
    mode: str = "full",
    case_names: Optional[tuple] = None,
    n_samples: int = 100_000,
    delta: float = 1e-6,
) -> list:
    """Run every registered case and compare against its expectation.

    mode "rr" restricts all rows to the record/replay audit (deterministic,
    fast); mode "full" also runs the distributional audit wherever the
    traces complete, so fixed twins must pass both audits.
    """
    if mode not in ("rr", "full"):
        raise ValueError(f"matrix mode must be 'rr' or 'full', got {mode!r}")
    rows = []
    names = CASE_NAMES if case_names is None else case_names
    for name in names:
        for variant in ("buggy", "fixed"):
            case = get_case(name, variant)
            if mode == "rr":
                with_dist = False
                expected = (
                    case.expected_violation if case.audit == "record_replay" else None
                )
            else:
                with_dist = True
                expected = case.expected_violation
            result = run_case(
                case, seed, n_samples=n_samples, delta=delta, with_distributional=with_dist
            )
            if expected is None:
                ok = not result.violations
            else:
                ok = expected in result.flagged_kinds
            rows.append(
                MatrixRow(
                    name=name,
                    variant=variant,
                    expected=expected,
                    flagged=sorted(result.flagged_kinds),
                    ok=ok,
                )
            )
    return rows
