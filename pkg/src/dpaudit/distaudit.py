"""Distributional audit: per-primitive sampling and privacy-loss estimation.

For every primitive call in a validated trace pair, the audit obtains a
privacy-loss distribution for the pair of output laws induced by the two
recorded inputs:

* trusted primitives (an analytic accountant is declared) get an exact PLD
  computed from their realized noise scale and the measured input distance;
* untrusted primitives are sampled: N fresh executions per input, a
  trade-off (ROC) curve between the two sample sets, conversion to a
  privacy profile via the convex conjugate
      delta(eps) = 1 - inf_alpha (e^eps * alpha + f(alpha)),
  and a pessimistic grid PLD whose implied delta matches the profile at
  every grid point and dominates it in between.

The per-call PLDs compose by convolution and the composed curve is read out
at the target delta, giving the end-to-end empirical estimate eps_hat.

Finite samples cannot certify likelihood ratios beyond the resolution of
the data, so raw ROC vertices are shrunk with one-sided Clopper-Pearson
bounds (both error rates rounded up at the configured confidence) before
the conjugate is taken. This keeps single lucky tail samples from inflating
eps_hat while leaving well-supported vertices essentially untouched.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import beta as _beta_dist

from . import rng
from .accountant import (
    DEFAULT_GRID_STEP,
    DiscretePld,
    NoFiniteEpsilon,
    PrivacyProfile,
    analytic_pld_gaussian,
    analytic_pld_laplace,
    compose,
    delta_at,
    epsilon_at,
    identity_pld,
)
from .canonical import canonical_dumps
from .mechanisms import ENSURE_EQUALITY_KIND, ExponentialMechanism, MechanismParams, default_registry
from .recorder import Trace, TraceEntry
from .validator import empirical_distance

__all__ = [
    "TradeoffCurve",
    "AuditVerdict",
    "InsufficientSamplesError",
    "NonConvexProfileError",
    "clopper_pearson_upper",
    "sample_outputs",
    "estimate_tradeoff",
    "tradeoff_to_profile",
    "profile_to_pld",
    "distributional_audit",
    "blackbox_audit",
]

MIN_SAMPLES = 100
DEFAULT_CONFIDENCE = 0.99


class InsufficientSamplesError(ValueError):
    """Fewer samples than the estimator can responsibly work with."""


class NonConvexProfileError(ValueError):
    """PLD reconstruction received a profile that is not conjugate-convex."""


def clopper_pearson_upper(successes: int, trials: int, confidence: float) -> float:
    """One-sided Clopper-Pearson upper bound on a binomial proportion."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    if not 0 <= successes <= trials:
        raise ValueError(f"successes {successes} outside [0, {trials}]")
    if successes >= trials:
        return 1.0
    return float(_beta_dist.ppf(confidence, successes + 1, trials - successes))


@dataclass
class TradeoffCurve:
    """Piecewise-linear estimate of the trade-off f(alpha): minimum Type II
    error beta at Type I error alpha."""

    alpha: np.ndarray
    beta: np.ndarray
    convexified: bool = False

    def __post_init__(self) -> None:
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        if self.alpha.shape != self.beta.shape or self.alpha.ndim != 1 or self.alpha.size < 2:
            raise ValueError("curve needs matching 1-D alpha/beta arrays with >= 2 points")
        if np.any(np.diff(self.alpha) < 0):
            raise ValueError("alpha must be nondecreasing")
        if np.any(np.diff(self.beta) > 1e-12):
            raise ValueError("beta must be nonincreasing in alpha")
        inside = ((self.alpha >= -1e-12) & (self.alpha <= 1 + 1e-12)
                  & (self.beta >= -1e-12) & (self.beta <= 1 + 1e-12))
        if not np.all(inside):
            raise ValueError("curve must lie inside the unit square")

    def evaluate(self, alpha: float) -> float:
        """f(alpha) by linear interpolation between vertices."""
        return float(np.interp(alpha, self.alpha, self.beta))


def _lower_convex_hull(points: list) -> list:
    """Lower-left convex hull of (alpha, beta) points, sorted by alpha."""
    deduped: list = []
    for p in sorted(set(points)):
        if deduped and p[0] == deduped[-1][0]:
            continue  # same alpha: the first (smallest beta) wins
        deduped.append(p)
    hull: list = []
    for p in deduped:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) <= (p[0] - x1) * (y2 - y1):
                hull.pop()
            else:
                break
        hull.append(p)
    return hull


def _score_samples(outputs_p: Sequence, outputs_q: Sequence) -> tuple:
    """Reduce raw outputs to scalar ranking scores.

    Scalars (or length-1 vectors) rank by their own value; higher-dimensional
    outputs are scored by a logistic-regression decision function trained to
    separate the two sample sets.
    """
    xp = np.asarray(outputs_p, dtype=float).reshape(len(outputs_p), -1)
    xq = np.asarray(outputs_q, dtype=float).reshape(len(outputs_q), -1)
    if xp.shape[1] == 1:
        return xp[:, 0], xq[:, 0]
    from sklearn.linear_model import LogisticRegression

    x = np.vstack([xp, xq])
    y = np.concatenate([np.zeros(len(xp)), np.ones(len(xq))])
    clf = LogisticRegression(max_iter=1000)
    clf.fit(x, y)
    return clf.decision_function(xp), clf.decision_function(xq)


def _roc_counts(sp: np.ndarray, sq: np.ndarray) -> tuple:
    """Error counts for every threshold (both decision directions).

    Thresholds are the midpoints of the pooled sorted scores. Returns
    integer arrays (false-positive counts out of n, false-negative counts
    out of m) including the trivial always/never-reject points.
    """
    n, m = sp.size, sq.size
    pooled = np.unique(np.concatenate([sp, sq]))
    thr = (pooled[:-1] + pooled[1:]) / 2.0
    sp_s = np.sort(sp)
    sq_s = np.sort(sq)
    # decide "Q" when score > t
    fp_hi = n - np.searchsorted(sp_s, thr, side="right")
    fn_hi = np.searchsorted(sq_s, thr, side="right")
    # decide "Q" when score < t
    fp_lo = np.searchsorted(sp_s, thr, side="left")
    fn_lo = m - np.searchsorted(sq_s, thr, side="left")
    fp = np.concatenate([fp_hi, fp_lo, [0, n]])
    fn = np.concatenate([fn_hi, fn_lo, [m, 0]])
    return fp.astype(np.int64), fn.astype(np.int64)


def estimate_tradeoff(
    outputs_p: Sequence,
    outputs_q: Sequence,
    confidence: Optional[float] = DEFAULT_CONFIDENCE,
) -> TradeoffCurve:
    """Empirical trade-off curve between two output sample sets.

    Sweeps all thresholds in both directions, takes the lower convex
    envelope, and (unless confidence is None) replaces each vertex's error
    rates with their one-sided Clopper-Pearson upper bounds before a final
    convexification.
    """
    if len(outputs_p) < MIN_SAMPLES or len(outputs_q) < MIN_SAMPLES:
        raise InsufficientSamplesError(
            f"need at least {MIN_SAMPLES} samples per side, got "
            f"{len(outputs_p)}/{len(outputs_q)}"
        )
    sp, sq = _score_samples(outputs_p, outputs_q)
    return _tradeoff_from_scores(sp, sq, confidence)


def _tradeoff_from_scores(
    sp: np.ndarray, sq: np.ndarray, confidence: Optional[float]
) -> TradeoffCurve:
    n, m = sp.size, sq.size
    fp, fn = _roc_counts(sp, sq)
    alpha = fp / n
    beta = fn / m

    # prune to the lower-left frontier before the hull: sort by alpha and
    # keep the first point at every strictly new minimum beta
    order = np.lexsort((beta, alpha))
    alpha, beta, fp, fn = alpha[order], beta[order], fp[order], fn[order]
    run_min = np.minimum.accumulate(beta)
    prev_min = np.concatenate([[np.inf], run_min[:-1]])
    keep = beta < prev_min
    alpha, beta, fp, fn = alpha[keep], beta[keep], fp[keep], fn[keep]

    hull = _lower_convex_hull(list(zip(alpha.tolist(), beta.tolist())))
    if confidence is not None:
        count = {(a, b): (f, g) for a, b, f, g in zip(alpha, beta, fp, fn)}
        adjusted = [(0.0, 1.0), (1.0, 0.0)]
        for a, b in hull:
            f, g = count.get((a, b), (int(round(a * n)), int(round(b * m))))
            adjusted.append(
                (clopper_pearson_upper(int(f), n, confidence),
                 clopper_pearson_upper(int(g), m, confidence))
            )
        hull = _lower_convex_hull(adjusted)
    av = np.array([p[0] for p in hull])
    bv = np.array([p[1] for p in hull])
    return TradeoffCurve(alpha=av, beta=bv, convexified=True)


def tradeoff_to_profile(curve: TradeoffCurve, eps_grid: np.ndarray) -> PrivacyProfile:
    """Privacy profile via the convex conjugate of the trade-off curve:

        delta(eps) = 1 - inf_{alpha in [0,1]} (e^eps * alpha + f(alpha)).

    For a convex piecewise-linear f the infimum is attained at a vertex, so
    the evaluation is exact.
    """
    if not curve.convexified:
        raise ValueError("profile conversion requires a convexified curve")
    eps_grid = np.asarray(eps_grid, dtype=float)
    vals = np.exp(eps_grid)[:, None] * curve.alpha[None, :] + curve.beta[None, :]
    delta = np.clip(1.0 - vals.min(axis=1), 0.0, 1.0)
    delta = np.minimum.accumulate(delta)
    return PrivacyProfile(eps=eps_grid, delta=delta)


def profile_to_pld(profile: PrivacyProfile, grid_step: float = DEFAULT_GRID_STEP) -> DiscretePld:
    """Pessimistic PLD whose hockey-stick curve reproduces the profile.

    With losses at the profile's own eps grid, the system
        delta(eps_i) = delta_inf + sum_{k > i} (1 - e^{eps_i - eps_k}) p_k
    is triangular; back-substitution from the largest eps yields the unique
    mass assignment. delta(eps_max) lands in delta_inf (truncation is
    pessimistic) and the leftover mass sits at the smallest grid point,
    where it cannot lower any delta query on the grid.
    """
    eps = profile.eps
    deltas = profile.delta
    h = grid_step
    spacing = np.diff(eps)
    if np.any(np.abs(spacing - h) > 1e-9 * max(h, 1.0)):
        raise ValueError("profile eps grid must be uniform with spacing grid_step")
    k_min = int(round(eps[0] / h))
    if abs(k_min * h - eps[0]) > 1e-9:
        raise ValueError("profile eps grid must be aligned to grid_step")

    n = eps.size - 1
    masses = np.zeros(n + 1)
    delta_inf = float(deltas[-1])
    denom = 1.0 - math.exp(-h)
    weighted_tail = 0.0  # sum over assigned j>i of e^{-eps_j} p_j
    for i in range(n, 0, -1):
        c = (deltas[i - 1] - deltas[i]) / denom
        p = c - math.exp(eps[i]) * weighted_tail
        if p < -1e-9:
            raise NonConvexProfileError(
                f"profile implies negative mass {p:.3e} at eps={eps[i]:.6f}; "
                "convexify the trade-off curve first"
            )
        p = max(p, 0.0)
        masses[i] = p
        weighted_tail += math.exp(-eps[i]) * p
    rest = 1.0 - delta_inf - float(masses[1:].sum())
    if rest < -1e-9:
        raise NonConvexProfileError(f"profile implies total mass above 1 (excess {-rest:.3e})")
    masses[0] = max(rest, 0.0)
    return DiscretePld(grid_step=h, k_min=k_min, masses=masses, delta_inf=delta_inf)


# -- sampling ----------------------------------------------------------------


def sample_outputs(
    mech,
    q,
    params: MechanismParams,
    n_samples: int,
    seed: int,
    call_index: int = 0,
    gen_factory: Optional[Callable] = None,
) -> list:
    """Run the primitive n_samples times on a fixed input.

    Every replicate draws from an independent child generator derived from
    (seed, call_index, replicate), so the list is reproducible and the
    replicates could run in parallel. gen_factory overrides the generator
    source (test hook; e.g. rng.ZeroNoiseGenerator).
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if gen_factory is not None:
        gens = (gen_factory() for _ in range(n_samples))
    else:
        gens = rng.replicate_generators(seed, call_index, n_samples)
    return [mech.run(q, params, gen)[0] for gen in gens]


# -- per-call PLDs ------------------------------------------------------------


def _default_eps_grid(n_samples: int, grid_step: float) -> np.ndarray:
    """Conjugate grid [0, ln n]: samples cannot certify larger losses."""
    eps_max = math.log(max(float(n_samples), math.e))
    return np.arange(int(math.ceil(eps_max / grid_step)) + 1) * grid_step


def _analytic_shift_pld(
    family: str, shift: float, scale: float, grid_step: float
) -> DiscretePld:
    if shift == 0.0:
        return identity_pld(grid_step)
    if not math.isfinite(shift) or scale == 0.0:
        # deterministic release of distinguishable inputs: all mass at +inf
        return DiscretePld(grid_step=grid_step, k_min=0, masses=np.array([0.0]), delta_inf=1.0)
    if family == "laplace":
        return analytic_pld_laplace(shift, scale, grid_step)
    return analytic_pld_gaussian(shift, scale, grid_step)


def _exponential_exact_pld(
    rec: TraceEntry, rep: TraceEntry, grid_step: float
) -> DiscretePld:
    """Exact PLD of the exponential mechanism on the recorded score pair.

    Output laws are softmax distributions over the candidates; both neighbor
    orientations are evaluated and the pointwise-worse profile is
    reconstructed, since the selection law is not symmetric in (D, D')."""
    params = MechanismParams.from_dict(rec.params)
    temperature = params.noise_scale
    p = ExponentialMechanism.probabilities(rec.input, temperature)
    q = ExponentialMechanism.probabilities(rep.input, temperature)
    if np.array_equal(p, q):
        return identity_pld(grid_step)
    if np.any((p > 0) != (q > 0)):
        return DiscretePld(grid_step=grid_step, k_min=0, masses=np.array([0.0]), delta_inf=1.0)

    def one_direction(top: np.ndarray, bot: np.ndarray) -> DiscretePld:
        support = top > 0
        losses = np.log(top[support]) - np.log(bot[support])
        ks = np.ceil(losses / grid_step - 1e-9).astype(int)
        k_min, k_max = int(ks.min()), int(ks.max())
        masses = np.zeros(k_max - k_min + 1)
        np.add.at(masses, ks - k_min, top[support])
        return DiscretePld(grid_step=grid_step, k_min=k_min, masses=masses)

    pld_pq = one_direction(p, q)
    pld_qp = one_direction(q, p)
    top = max(pld_pq.max_loss, pld_qp.max_loss, 0.0)
    grid = np.arange(int(math.ceil(top / grid_step)) + 2) * grid_step
    worse = np.minimum.accumulate(
        np.maximum(
            [delta_at(pld_pq, e) for e in grid],
            [delta_at(pld_qp, e) for e in grid],
        )
    )
    return profile_to_pld(PrivacyProfile(eps=grid, delta=worse), grid_step)


def _trusted_call_pld(
    spec, rec: TraceEntry, rep: TraceEntry, grid_step: float
) -> DiscretePld:
    params = MechanismParams.from_dict(rec.params)
    if spec.accountant == "exponential":
        return _exponential_exact_pld(rec, rep, grid_step)
    shift = empirical_distance(rec.input, rep.input, spec.metric)
    return _analytic_shift_pld(spec.accountant, shift, params.noise_scale, grid_step)


def _empirical_call_pld(
    mech,
    rec: TraceEntry,
    rep: TraceEntry,
    n_samples: int,
    seed: int,
    call_index: int,
    grid_step: float,
    confidence: Optional[float],
) -> DiscretePld:
    if canonical_dumps(rec.input) == canonical_dumps(rep.input):
        return identity_pld(grid_step)
    params = MechanismParams.from_dict(rec.params)
    samples_p = sample_outputs(mech, rec.input, params, n_samples, seed, call_index=2 * call_index)
    samples_q = sample_outputs(mech, rep.input, params, n_samples, seed, call_index=2 * call_index + 1)
    if len(samples_p) < MIN_SAMPLES or len(samples_q) < MIN_SAMPLES:
        raise InsufficientSamplesError(f"need at least {MIN_SAMPLES} samples per side")
    grid = _default_eps_grid(n_samples, grid_step)
    sp, sq = _score_samples(samples_p, samples_q)
    curve_pq = _tradeoff_from_scores(sp, sq, confidence)
    curve_qp = _tradeoff_from_scores(sq, sp, confidence)
    delta = np.maximum(
        tradeoff_to_profile(curve_pq, grid).delta,
        tradeoff_to_profile(curve_qp, grid).delta,
    )
    profile = PrivacyProfile(eps=grid, delta=np.minimum.accumulate(delta))
    return profile_to_pld(profile, grid_step)


# -- the audits ---------------------------------------------------------------


@dataclass
class AuditVerdict:
    eps_hat: float
    eps_claimed: float
    delta: float
    passed: bool
    per_call: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "eps_hat": self.eps_hat,
            "eps_claimed": self.eps_claimed,
            "delta": self.delta,
            "pass": self.passed,
            "per_call": self.per_call,
        }


def distributional_audit(
    trace: Trace,
    trace_prime: Trace,
    specs: dict,
    n_samples: int,
    delta: float,
    eps_claimed: float,
    seed: int,
    grid_step: float = DEFAULT_GRID_STEP,
    force_empirical: bool = False,
    registry: Optional[dict] = None,
    confidence: Optional[float] = DEFAULT_CONFIDENCE,
) -> AuditVerdict:
    """Estimate the end-to-end privacy loss of a recorded execution pair.

    Trusted calls contribute analytic PLDs; untrusted calls (or all calls
    under force_empirical) are sampled and estimated. The composed PLD is
    read out at the target delta and compared against the claim.
    """
    if trace.stopped or trace_prime.stopped:
        raise ValueError("distributional audit requires completed traces (no STOP)")
    if len(trace) != len(trace_prime):
        raise ValueError("traces have different call counts; run validate_records first")
    if registry is None:
        registry = default_registry()

    plds = []
    per_call = []
    for rec, rep in zip(trace.entries, trace_prime.entries):
        if rec.kind == ENSURE_EQUALITY_KIND:
            continue
        spec = specs.get(rec.kind)
        if spec is None:
            raise KeyError(f"no audit spec registered for mechanism kind {rec.kind!r}")
        if spec.trusted and not force_empirical:
            pld = _trusted_call_pld(spec, rec, rep, grid_step)
            source = "analytic"
        else:
            mech = registry[rec.kind]
            pld = _empirical_call_pld(
                mech, rec, rep, n_samples, seed, rec.index, grid_step, confidence
            )
            source = "empirical"
        plds.append(pld)
        try:
            call_eps = epsilon_at(pld, delta)
        except NoFiniteEpsilon:
            call_eps = math.inf
        per_call.append(
            {"index": rec.index, "kind": rec.kind, "source": source, "eps_at_delta": call_eps}
        )

    if not plds:
        composed = identity_pld(grid_step)
    else:
        composed = compose(plds)
    try:
        eps_hat = epsilon_at(composed, delta)
    except NoFiniteEpsilon:
        eps_hat = math.inf
    return AuditVerdict(
        eps_hat=eps_hat,
        eps_claimed=eps_claimed,
        delta=delta,
        passed=eps_hat <= eps_claimed,
        per_call=per_call,
    )


def blackbox_audit(
    mech: Callable,
    data_0,
    data_1,
    runs: int,
    delta: float,
    gamma: float,
    seed: int,
) -> float:
    """End-to-end black-box lower bound on epsilon.

    Runs the full mechanism `runs` times on a fair-coin choice between the
    two datasets, picks a decision threshold on a held-out half, and turns
    Clopper-Pearson upper bounds on the evaluation half's error rates into

        eps_hat = max(ln((1 - a_ub - delta) / b_ub),
                      ln((1 - b_ub - delta) / a_ub), 0).
    """
    if runs < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} runs, got {runs}")
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must be in (0, 1)")
    coin = rng.make_generator(seed)
    bits = np.array([1 if coin.random() < 0.5 else 0 for _ in range(runs)])
    scores = np.empty(runs)
    for i, gen in enumerate(rng.replicate_generators(seed, 0, runs)):
        out = mech(data_1 if bits[i] else data_0, gen)
        scores[i] = float(np.ravel(np.asarray(out, dtype=float))[0])

    if np.all(scores == scores[0]):
        warnings.warn("all rank scores identical; no distinguishing signal", RuntimeWarning)
        return 0.0

    half = runs // 2
    sel_scores, sel_bits = scores[:half], bits[:half]
    ev_scores, ev_bits = scores[half:], bits[half:]

    threshold, direction = _select_threshold(sel_scores, sel_bits)
    predict = (ev_scores > threshold) if direction > 0 else (ev_scores < threshold)
    n1 = int(np.sum(ev_bits == 1))
    n0 = int(np.sum(ev_bits == 0))
    if n0 == 0 or n1 == 0:
        warnings.warn("evaluation half lacks one of the classes", RuntimeWarning)
        return 0.0
    false_pos = int(np.sum(predict & (ev_bits == 0)))
    false_neg = int(np.sum(~predict & (ev_bits == 1)))
    alpha_ub = clopper_pearson_upper(false_pos, n0, 1.0 - gamma)
    beta_ub = clopper_pearson_upper(false_neg, n1, 1.0 - gamma)

    candidates = [0.0]
    if 1.0 - alpha_ub - delta > 0 and beta_ub > 0:
        candidates.append(math.log((1.0 - alpha_ub - delta) / beta_ub))
    if 1.0 - beta_ub - delta > 0 and alpha_ub > 0:
        candidates.append(math.log((1.0 - beta_ub - delta) / alpha_ub))
    return max(candidates)


def _select_threshold(scores: np.ndarray, bits: np.ndarray) -> tuple:
    """Accuracy-maximizing (threshold, direction) on the selection half."""
    pooled = np.unique(scores)
    if pooled.size == 1:
        return float(pooled[0]), 1
    mids = (pooled[:-1] + pooled[1:]) / 2.0
    s1 = np.sort(scores[bits == 1])
    s0 = np.sort(scores[bits == 0])
    # direction >: predict 1 when score > t
    correct_hi = (s1.size - np.searchsorted(s1, mids, side="right")) + np.searchsorted(
        s0, mids, side="right"
    )
    # direction <: predict 1 when score < t
    correct_lo = np.searchsorted(s1, mids, side="left") + (
        s0.size - np.searchsorted(s0, mids, side="left")
    )
    i_hi = int(np.argmax(correct_hi))
    i_lo = int(np.argmax(correct_lo))
    if correct_hi[i_hi] >= correct_lo[i_lo]:
        return float(mids[i_hi]), 1
    return float(mids[i_lo]), -1
