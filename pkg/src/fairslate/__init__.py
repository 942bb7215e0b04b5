"""Two-sided fair slate construction.

Ranks per-user slates that trade relevance against provider exposure.
Exposure budgets are planned per interval by splitting each provider's
remaining entitlement over future demand with a bankruptcy rule, and slates
are steered toward those budgets through dual prices on providers.
"""

from .allocation import (
    AllocationPlan,
    FairnessSpec,
    TrafficStats,
    build_demand,
    forecast_traffic,
    plan_interval,
    talmud_allocate,
    update_estate,
    write_plan_csv,
)
from .domain import (
    ArrivalSchedule,
    Dataset,
    ParseError,
    PreferenceStore,
    ProviderCatalog,
    RunConfig,
    Slate,
    ValidationError,
    ValidationReport,
    load_arrivals,
    load_catalog,
    load_scores,
    position_weight,
    position_weights,
    validate_dataset,
    write_arrivals,
    write_catalog,
    write_scores,
)
from .metrics import (
    METRIC_NAMES,
    ExposureLedger,
    QualityReport,
    dcg,
    esp,
    gini,
    ideal_dcg,
    ideal_slate,
    mmr,
    ndcg,
    quality_report,
    record_exposure,
    var_accuracy,
    write_metrics_csv,
)
from .reranker import (
    DualState,
    SlateDecision,
    dual_update,
    solve_user_slate,
    subgradient,
    target_exposure,
)
from .satisfaction import (
    FuzzyParams,
    RegretParams,
    fairness_membership,
    normalized_satisfaction,
    perceived_satisfaction,
    regret_rejoice,
    satisfaction_batch,
    utility,
)
from .seeding import substream
from .session import (
    POLICIES,
    DecisionRecord,
    SessionLog,
    compute_session_metrics,
    read_session_log,
    run_interval,
    run_session,
    write_dual_csv,
    write_session_log,
)
from .synth import (
    SCORE_DISTRIBUTIONS,
    TRAFFIC_PATTERNS,
    SyntheticSpec,
    generate_dataset,
    write_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "AllocationPlan",
    "ArrivalSchedule",
    "Dataset",
    "DecisionRecord",
    "DualState",
    "ExposureLedger",
    "FairnessSpec",
    "FuzzyParams",
    "METRIC_NAMES",
    "POLICIES",
    "ParseError",
    "PreferenceStore",
    "ProviderCatalog",
    "QualityReport",
    "RegretParams",
    "RunConfig",
    "SCORE_DISTRIBUTIONS",
    "SessionLog",
    "Slate",
    "SlateDecision",
    "SyntheticSpec",
    "TRAFFIC_PATTERNS",
    "TrafficStats",
    "ValidationError",
    "ValidationReport",
    "build_demand",
    "compute_session_metrics",
    "dcg",
    "dual_update",
    "esp",
    "fairness_membership",
    "forecast_traffic",
    "generate_dataset",
    "gini",
    "ideal_dcg",
    "ideal_slate",
    "load_arrivals",
    "load_catalog",
    "load_scores",
    "mmr",
    "ndcg",
    "normalized_satisfaction",
    "perceived_satisfaction",
    "plan_interval",
    "position_weight",
    "position_weights",
    "quality_report",
    "read_session_log",
    "record_exposure",
    "regret_rejoice",
    "run_interval",
    "run_session",
    "satisfaction_batch",
    "solve_user_slate",
    "subgradient",
    "substream",
    "talmud_allocate",
    "target_exposure",
    "update_estate",
    "utility",
    "validate_dataset",
    "var_accuracy",
    "write_arrivals",
    "write_catalog",
    "write_dataset",
    "write_dual_csv",
    "write_metrics_csv",
    "write_plan_csv",
    "write_scores",
    "write_session_log",
    "__version__",
]
