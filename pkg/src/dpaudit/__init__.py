"""Grey-box auditing for differential-privacy pipelines.

The framework records an instrumented pipeline on a dataset, replays it on
a neighboring dataset with frozen primitive outputs and realigned
randomness, and turns any divergence outside the privacy primitives into a
typed, call-indexed violation. Untrusted primitives are audited
statistically through empirical privacy-loss distributions that compose
with the analytic ones.
"""

from .accountant import (
    DiscretePld,
    NoFiniteEpsilon,
    PrivacyProfile,
    advanced_composition,
    analytic_pld_gaussian,
    analytic_pld_laplace,
    calibrate_gaussian_sigma,
    compose,
    delta_at,
    epsilon_at,
)
from .distaudit import (
    AuditVerdict,
    TradeoffCurve,
    blackbox_audit,
    distributional_audit,
    estimate_tradeoff,
    profile_to_pld,
    sample_outputs,
    tradeoff_to_profile,
)
from .mechanisms import (
    AuditSpec,
    ExponentialMechanism,
    GaussianMechanism,
    InputDomainError,
    LaplaceMechanism,
    MechanismParams,
    default_registry,
)
from .neighbors import AdjacencyModel, ColumnSpec, TabularDataset, gen_neighbors, gen_synthetic
from .recorder import (
    Auditor,
    AuditorMode,
    Trace,
    TraceEntry,
    generate_traces,
    load_trace,
    run_pipeline_pair,
    save_trace,
)
from .validator import AuditReport, Violation, ViolationKind, empirical_distance, validate_records

__version__ = "0.1.0"
