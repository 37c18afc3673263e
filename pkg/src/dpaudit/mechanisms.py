"""Canonical privacy primitives and their audit annotations.

Each mechanism carries an AuditSpec describing how the auditor should treat
its calls: which argument is the sensitive input, which metric measures the
input distance across neighboring runs, and (optionally) an analytic
accountant tag. A present accountant marks the primitive as trusted, so the
validator cross-checks its realized noise scale against the declared
(epsilon, delta, sensitivity); absent means the distributional audit has to
estimate its privacy loss empirically.

All mechanisms consume a fixed, shape-determined number of generator draws
per call (see the rng module), and noise is always derived as
scale * unit_draw so a zero scale still consumes its draws. Guarded
variants reject non-finite inputs up front; the unguarded variants exist to
reproduce how most production code behaves when fed NaN or +/-inf.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import rng
from .accountant import calibrate_gaussian_sigma
from .canonical import all_finite

__all__ = [
    "AuditSpec",
    "MechanismParams",
    "InputDomainError",
    "Mechanism",
    "LaplaceMechanism",
    "GaussianMechanism",
    "ExponentialMechanism",
    "ENSURE_EQUALITY_KIND",
    "METRICS",
    "default_registry",
]

ENSURE_EQUALITY_KIND = "ensure_equality"
METRICS = ("L1", "L2", "Linf", "Hamming")


class InputDomainError(ValueError):
    """A guarded mechanism rejected its input before any budget was spent."""


@dataclass(frozen=True)
class AuditSpec:
    """Per-primitive audit metadata.

    accountant is an analytic-PLD tag ("laplace", "gaussian",
    "exponential") or None; present means trusted. sensitivity, when set,
    is a default declared bound used if the call params omit one.
    """

    kind: str
    input_role: str
    metric: str
    sensitivity: Optional[float] = None
    accountant: Optional[str] = None

    def __post_init__(self) -> None:
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.sensitivity is not None and self.sensitivity < 0:
            raise ValueError("declared sensitivity must be nonnegative")

    @property
    def trusted(self) -> bool:
        return self.accountant is not None


@dataclass(frozen=True)
class MechanismParams:
    """Declared privacy parameters for one primitive call.

    noise_scale, when given, overrides the scale the mechanism would derive
    from (epsilon, delta, sensitivity); the value actually used is always
    recorded back into the trace so the validator can recheck calibration.
    """

    epsilon: float
    sensitivity: float
    delta: float = 0.0
    noise_scale: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 <= self.delta < 1.0:
            raise ValueError(f"delta must be in [0, 1), got {self.delta}")
        if self.sensitivity < 0:
            raise ValueError(f"sensitivity must be nonnegative, got {self.sensitivity}")

    def to_dict(self) -> dict:
        out = {"epsilon": self.epsilon, "sensitivity": self.sensitivity, "delta": self.delta}
        if self.noise_scale is not None:
            out["noise_scale"] = self.noise_scale
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "MechanismParams":
        return cls(
            epsilon=float(obj["epsilon"]),
            sensitivity=float(obj["sensitivity"]),
            delta=float(obj.get("delta", 0.0)),
            noise_scale=(None if obj.get("noise_scale") is None else float(obj["noise_scale"])),
        )


def _as_vector(x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ValueError(f"mechanism input must be a scalar or 1-D vector, got shape {arr.shape}")
    return arr


class Mechanism:
    """Base class: subclasses implement resolve_scale and _sample."""

    def __init__(self, spec: AuditSpec, guarded: bool = True):
        self.spec = spec
        self.guarded = guarded

    @property
    def kind(self) -> str:
        return self.spec.kind

    def validate_input(self, q) -> None:
        if self.guarded and not all_finite(q):
            raise InputDomainError(
                f"{self.kind}: non-finite value in sensitive input; "
                "rejected before spending privacy budget"
            )

    def resolve_scale(self, params: MechanismParams) -> float:
        raise NotImplementedError

    def resolve_params(self, params: MechanismParams) -> MechanismParams:
        """Fill in the realized noise scale without consuming randomness."""
        return replace(params, noise_scale=self.resolve_scale(params))

    def run(self, q, params: MechanismParams, gen):
        """Execute the primitive; returns (output, realized_params)."""
        raise NotImplementedError


class LaplaceMechanism(Mechanism):
    """x + Laplace(scale)^d with scale = sensitivity / epsilon (pure DP)."""

    def __init__(self, kind: str = "laplace", guarded: bool = True):
        super().__init__(
            AuditSpec(kind=kind, input_role="x", metric="L1", accountant="laplace"),
            guarded=guarded,
        )

    def resolve_scale(self, params: MechanismParams) -> float:
        if params.noise_scale is not None:
            return params.noise_scale
        return params.sensitivity / params.epsilon

    def run(self, q, params: MechanismParams, gen):
        self.validate_input(q)
        x = _as_vector(q)
        realized = self.resolve_params(params)
        scale = realized.noise_scale
        noise = np.array([scale * rng.laplace_unit(gen) for _ in range(x.size)])
        return x + noise, realized


class GaussianMechanism(Mechanism):
    """x + N(0, sigma^2)^d; sigma either supplied or calibrated from
    (epsilon, delta, L2 sensitivity) via the analytic profile inverse."""

    def __init__(self, kind: str = "gaussian", guarded: bool = True):
        super().__init__(
            AuditSpec(kind=kind, input_role="x", metric="L2", accountant="gaussian"),
            guarded=guarded,
        )

    def resolve_scale(self, params: MechanismParams) -> float:
        if params.noise_scale is not None:
            return params.noise_scale
        if params.delta <= 0:
            raise ValueError("gaussian mechanism needs delta > 0 or an explicit sigma")
        if params.sensitivity == 0:
            return 0.0
        return calibrate_gaussian_sigma(params.epsilon, params.delta, params.sensitivity)

    def run(self, q, params: MechanismParams, gen):
        self.validate_input(q)
        x = _as_vector(q)
        realized = self.resolve_params(params)
        sigma = realized.noise_scale
        noise = np.array([sigma * rng.gaussian_unit(gen) for _ in range(x.size)])
        return x + noise, realized


class ExponentialMechanism(Mechanism):
    """Select index i with probability prop. to exp(eps * s_i / (2 * d_inf));
    the softmax temperature 2 * d_inf / eps is recorded as the noise scale."""

    def __init__(self, kind: str = "exponential", guarded: bool = True):
        super().__init__(
            AuditSpec(kind=kind, input_role="scores", metric="Linf", accountant="exponential"),
            guarded=guarded,
        )

    def resolve_scale(self, params: MechanismParams) -> float:
        if params.noise_scale is not None:
            return params.noise_scale
        return 2.0 * params.sensitivity / params.epsilon

    @staticmethod
    def probabilities(scores, temperature: float) -> np.ndarray:
        """Softmax with max-subtraction; temperature 0 degenerates to argmax."""
        s = _as_vector(scores)
        if temperature == 0.0:
            probs = np.zeros(s.size)
            probs[int(np.argmax(s))] = 1.0
            return probs
        z = s / temperature
        z = z - z.max()
        w = np.exp(z)
        return w / w.sum()

    def run(self, q, params: MechanismParams, gen):
        self.validate_input(q)
        scores = _as_vector(q)
        if not self.guarded and not all_finite(scores):
            raise InputDomainError(
                f"{self.kind}: selection probabilities undefined for non-finite scores"
            )
        realized = self.resolve_params(params)
        probs = self.probabilities(scores, realized.noise_scale)
        return rng.sample_categorical(gen, probs), realized


def default_registry() -> dict:
    """Kind -> mechanism map with guarded defaults plus the unguarded
    variants the bug corpus exercises."""
    mechs = [
        LaplaceMechanism(),
        GaussianMechanism(),
        ExponentialMechanism(),
        LaplaceMechanism(kind="laplace_unguarded", guarded=False),
        GaussianMechanism(kind="gaussian_unguarded", guarded=False),
    ]
    return {m.kind: m for m in mechs}
