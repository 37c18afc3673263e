"""Privacy-loss-distribution arithmetic.

A privacy loss distribution (PLD) here is a grid-discretized distribution of
the log-likelihood ratio between a mechanism's output laws on a neighboring
input pair, with an extra atom ``delta_inf`` for distinguishing events
(outputs possible under one law only). Everything downstream hangs off two
facts:

* delta(eps) is the hockey-stick sum
    delta_inf + sum_k max(0, 1 - exp(eps - x_k)) * p_k,
  which is nonincreasing and convex in eps.
* PLDs of independently composed mechanisms convolve; distinguishing mass
  composes as 1 - prod(1 - delta_inf_i).

Discretizations are always pessimistic: probability mass is rounded UP to
the next grid point, truncated upper tails are folded into delta_inf and
truncated lower tails into the smallest kept grid point, so the implied
delta(eps) upper-bounds the exact one at every grid eps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.signal import fftconvolve
from scipy.stats import norm

__all__ = [
    "DiscretePld",
    "PrivacyProfile",
    "NoFiniteEpsilon",
    "delta_at",
    "epsilon_at",
    "compose",
    "identity_pld",
    "analytic_pld_laplace",
    "analytic_pld_gaussian",
    "gaussian_delta_exact",
    "calibrate_gaussian_sigma",
    "advanced_composition",
    "pld_to_json",
    "pld_from_json",
]

DEFAULT_GRID_STEP = 1e-3
TAIL_MASS = 1e-12
_MASS_TOL = 1e-9


class NoFiniteEpsilon(ValueError):
    """delta_at(pld, eps) never drops to the requested delta."""


@dataclass
class DiscretePld:
    """Grid-discretized PLD: mass p_k at loss (k_min + k) * grid_step,
    plus an atom at +infinity."""

    grid_step: float
    k_min: int
    masses: np.ndarray
    delta_inf: float = 0.0

    def __post_init__(self) -> None:
        self.masses = np.asarray(self.masses, dtype=float)
        if self.grid_step <= 0:
            raise ValueError("grid_step must be positive")
        if self.masses.ndim != 1 or self.masses.size == 0:
            raise ValueError("masses must be a non-empty 1-D array")
        if np.any(self.masses < -_MASS_TOL):
            raise ValueError("negative probability mass in PLD")
        self.masses = np.clip(self.masses, 0.0, None)
        if not 0.0 <= self.delta_inf <= 1.0 + _MASS_TOL:
            raise ValueError(f"delta_inf {self.delta_inf} outside [0, 1]")
        self.delta_inf = min(max(self.delta_inf, 0.0), 1.0)
        total = float(self.masses.sum()) + self.delta_inf
        if abs(total - 1.0) > _MASS_TOL:
            raise ValueError(f"total PLD mass {total} differs from 1 by more than {_MASS_TOL}")

    def losses(self) -> np.ndarray:
        return (self.k_min + np.arange(self.masses.size)) * self.grid_step

    @property
    def max_loss(self) -> float:
        return (self.k_min + self.masses.size - 1) * self.grid_step


def identity_pld(grid_step: float = DEFAULT_GRID_STEP) -> DiscretePld:
    """PLD of indistinguishable laws: all mass at loss 0."""
    return DiscretePld(grid_step=grid_step, k_min=0, masses=np.array([1.0]))


def delta_at(pld: DiscretePld, eps: float) -> float:
    """Hockey-stick divergence of the PLD at eps."""
    terms = 1.0 - np.exp(eps - pld.losses())
    value = pld.delta_inf + float(np.sum(np.where(terms > 0.0, terms, 0.0) * pld.masses))
    return min(max(value, 0.0), 1.0)


def epsilon_at(pld: DiscretePld, delta: float) -> float:
    """Smallest grid-resolution eps >= 0 with delta_at(pld, eps) <= delta."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if delta <= pld.delta_inf:
        raise NoFiniteEpsilon(
            f"delta={delta} is not above the distinguishing mass {pld.delta_inf}"
        )
    if delta_at(pld, 0.0) <= delta:
        return 0.0
    h = pld.grid_step
    hi = max(int(math.ceil(pld.max_loss / h)), 1) + int(math.ceil(5.0 / h))
    if delta_at(pld, hi * h) > delta:
        raise NoFiniteEpsilon("delta not reached on the search grid")
    lo = 0
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if delta_at(pld, mid * h) <= delta:
            hi = mid
        else:
            lo = mid
    return hi * h


def _truncate(masses: np.ndarray, k_min: int, delta_inf: float, grid_step: float) -> DiscretePld:
    """Fold sub-TAIL_MASS tails: upper into delta_inf, lower into the
    smallest kept grid point (both pessimistic)."""
    total = masses.sum()
    if total > 0:
        upper_keep = masses.size
        acc = 0.0
        for i in range(masses.size - 1, -1, -1):
            if acc + masses[i] > TAIL_MASS:
                break
            acc += masses[i]
            upper_keep = i
        if upper_keep < masses.size:
            delta_inf = delta_inf + float(masses[upper_keep:].sum())
            masses = masses[:upper_keep]
        lower_drop = 0
        acc = 0.0
        for i in range(masses.size):
            if acc + masses[i] > TAIL_MASS:
                break
            acc += masses[i]
            lower_drop = i + 1
        if 0 < lower_drop < masses.size:
            folded = float(masses[:lower_drop].sum())
            masses = masses[lower_drop:].copy()
            masses[0] += folded
            k_min += lower_drop
    if masses.size == 0:
        masses = np.array([0.0])
    return DiscretePld(grid_step=grid_step, k_min=k_min, masses=masses, delta_inf=delta_inf)


def pld_from_loss_cdf(
    cdf: Callable[[np.ndarray], np.ndarray],
    x_lo: float,
    x_hi: float,
    grid_step: float,
    bounded_support: bool = False,
) -> DiscretePld:
    """Pessimistically discretize a privacy-loss CDF supported on [x_lo, x_hi].

    Mass in (x_{k-1}, x_k] is assigned to x_k (losses rounded up). With
    bounded_support the loss genuinely ends at x_hi, so the last grid point
    absorbs all remaining mass even when floating-point jitter leaves x_hi
    marginally above it; otherwise (x_hi is a truncation point of an
    unbounded law) the mass beyond the last grid point goes to delta_inf.
    """
    h = grid_step
    k_lo = int(math.ceil(x_lo / h - 1e-9))
    k_hi = int(math.ceil(x_hi / h - 1e-9))
    ks = np.arange(k_lo, k_hi + 1)
    f_vals = np.asarray(cdf(ks * h), dtype=float)
    f_vals = np.clip(f_vals, 0.0, 1.0)
    f_vals = np.maximum.accumulate(f_vals)
    if bounded_support:
        f_vals[-1] = 1.0
    masses = np.diff(np.concatenate([[0.0], f_vals]))
    delta_inf = max(0.0, 1.0 - float(f_vals[-1]))
    return _truncate(masses, k_lo, delta_inf, h)


def analytic_pld_laplace(
    delta1: float, scale: float, grid_step: float = DEFAULT_GRID_STEP
) -> DiscretePld:
    """PLD of Laplace(q, scale) vs Laplace(q', scale) with |q - q'|_1 = delta1.

    The loss is supported on [-eps0, eps0] with eps0 = delta1 / scale; its
    CDF is 0.5 * exp((x - eps0) / 2) on the interior with an atom of 1/2 at
    +eps0 and 0.5 * exp(-eps0) at -eps0.
    """
    if not (delta1 > 0) or not math.isfinite(delta1):
        raise ValueError(f"sensitivity must be positive and finite, got {delta1}")
    if not (scale > 0) or not math.isfinite(scale):
        raise ValueError(f"scale must be positive and finite, got {scale}")
    eps0 = delta1 / scale

    def cdf(x: np.ndarray) -> np.ndarray:
        out = np.where(x >= eps0, 1.0, 0.5 * np.exp((np.minimum(x, eps0) - eps0) / 2.0))
        return np.where(x < -eps0, 0.0, out)

    return pld_from_loss_cdf(cdf, -eps0, eps0, grid_step, bounded_support=True)


def analytic_pld_gaussian(
    delta2: float, sigma: float, grid_step: float = DEFAULT_GRID_STEP
) -> DiscretePld:
    """PLD of N(q, sigma^2) vs N(q', sigma^2) with |q - q'|_2 = delta2.

    The loss is exactly N(mu, s^2) with mu = delta2^2 / (2 sigma^2) and
    s = delta2 / sigma; support is truncated where the tail mass drops
    below TAIL_MASS.
    """
    if not (delta2 > 0) or not math.isfinite(delta2):
        raise ValueError(f"sensitivity must be positive and finite, got {delta2}")
    if not (sigma > 0) or not math.isfinite(sigma):
        raise ValueError(f"sigma must be positive and finite, got {sigma}")
    s = delta2 / sigma
    mu = s * s / 2.0
    z = -norm.ppf(TAIL_MASS)

    def cdf(x: np.ndarray) -> np.ndarray:
        return norm.cdf((x - mu) / s)

    return pld_from_loss_cdf(cdf, mu - z * s, mu + z * s, grid_step)


def compose(plds: Sequence[DiscretePld], method: str = "auto") -> DiscretePld:
    """Compose independent mechanisms by convolving their loss masses.

    Losses live on a shared grid, so index sums are exact; distinguishing
    mass composes as 1 - prod(1 - delta_inf_i). ``method`` picks the
    convolution backend ("direct", "fft", or "auto"); the two agree within
    1e-12 and "auto" switches to FFT for large supports.
    """
    if len(plds) == 0:
        raise ValueError("compose requires at least one PLD")
    steps = {p.grid_step for p in plds}
    if len(steps) != 1:
        raise ValueError(f"mixed grid steps in composition: {sorted(steps)}")
    if method not in ("auto", "direct", "fft"):
        raise ValueError(f"unknown convolution method {method!r}")
    out = plds[0]
    for other in plds[1:]:
        use_fft = method == "fft" or (
            method == "auto" and out.masses.size * other.masses.size > 4_000_000
        )
        if use_fft:
            conv = fftconvolve(out.masses, other.masses)
            conv = np.clip(conv, 0.0, None)
        else:
            conv = np.convolve(out.masses, other.masses)
        # Normalize the finite part to exactly complement delta_inf so
        # rounding noise never accumulates across long compositions.
        keep_inf = 1.0 - (1.0 - out.delta_inf) * (1.0 - other.delta_inf)
        finite = conv.sum()
        if finite > 0:
            conv = conv * ((1.0 - keep_inf) / finite)
        out = _truncate(conv, out.k_min + other.k_min, keep_inf, out.grid_step)
    return out


def gaussian_delta_exact(eps: float, delta2: float, sigma: float) -> float:
    """Closed-form Gaussian privacy profile
    Phi(d/(2s) - eps*s/d) - e^eps * Phi(-d/(2s) - eps*s/d)."""
    r = delta2 / sigma
    value = norm.cdf(r / 2.0 - eps / r) - math.exp(eps) * norm.cdf(-r / 2.0 - eps / r)
    return min(max(value, 0.0), 1.0)


def calibrate_gaussian_sigma(epsilon: float, delta: float, delta2: float) -> float:
    """Smallest sigma with gaussian_delta_exact(eps, d2, sigma) <= delta,
    found by bisection to 1e-12 relative width."""
    if epsilon <= 0 or not 0 < delta < 1 or delta2 <= 0:
        raise ValueError("calibration requires epsilon > 0, delta in (0,1), sensitivity > 0")
    lo = 1e-12 * delta2
    hi = delta2
    while gaussian_delta_exact(epsilon, delta2, hi) > delta:
        hi *= 2.0
        if hi > 1e12 * delta2:
            raise ValueError("sigma calibration failed to bracket")
    while (hi - lo) > 1e-12 * hi:
        mid = 0.5 * (lo + hi)
        if gaussian_delta_exact(epsilon, delta2, mid) <= delta:
            hi = mid
        else:
            lo = mid
    return hi


def advanced_composition(eps: float, delta_each: float, k: int, delta_slack: float) -> float:
    """Advanced composition bound for k mechanisms each (eps, delta_each)-DP:

        eps_total = eps * sqrt(2 k ln(1/delta_slack)) + k * eps * (e^eps - 1)

    The composed guarantee holds at delta_total = k * delta_each + delta_slack.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if not 0 < delta_slack < 1:
        raise ValueError("delta_slack must be in (0, 1)")
    if not 0 <= delta_each < 1:
        raise ValueError("delta_each must be in [0, 1)")
    if eps == 0:
        return 0.0
    return eps * math.sqrt(2.0 * k * math.log(1.0 / delta_slack)) + k * eps * (
        math.exp(eps) - 1.0
    )


@dataclass
class PrivacyProfile:
    """Sampled privacy curve: delta(eps) at nondecreasing eps values."""

    eps: np.ndarray
    delta: np.ndarray

    def __post_init__(self) -> None:
        self.eps = np.asarray(self.eps, dtype=float)
        self.delta = np.asarray(self.delta, dtype=float)
        if self.eps.shape != self.delta.shape or self.eps.ndim != 1 or self.eps.size < 2:
            raise ValueError("profile needs matching 1-D eps/delta arrays with >= 2 points")
        if np.any(np.diff(self.eps) <= 0):
            raise ValueError("profile eps values must be strictly increasing")
        if np.any(self.delta < -1e-12) or np.any(self.delta > 1.0 + 1e-12):
            raise ValueError("profile delta values must lie in [0, 1]")
        self.delta = np.clip(self.delta, 0.0, 1.0)
        if np.any(np.diff(self.delta) > 1e-12):
            raise ValueError("profile delta values must be nonincreasing in eps")


def pld_to_json(pld: DiscretePld) -> dict:
    return {
        "grid_step": pld.grid_step,
        "k_min": pld.k_min,
        "masses": [float(m) for m in pld.masses],
        "delta_inf": pld.delta_inf,
    }


def pld_from_json(obj: dict) -> DiscretePld:
    return DiscretePld(
        grid_step=float(obj["grid_step"]),
        k_min=int(obj["k_min"]),
        masses=np.asarray(obj["masses"], dtype=float),
        delta_inf=float(obj["delta_inf"]),
    )
