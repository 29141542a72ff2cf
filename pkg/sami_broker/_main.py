from .analysis import (
    AnalysisThresholds,
    ContextSnapshot,
    ProfileVerdict,
    Recommendation,
    RescheduleAdvice,
    analyze_computation,
    analyze_performance,
    apply_verdict,
    collect_context,
    profile_service,
    update_user_profile,
)
from .billing import QoSParameters, Tariff, apply_slo_rebate, compute_charge
from .digest import Blob, Digest, TestVector, compute_digest
from .infra import EnergyModel, build_topology, energy_j, is_dealer_open
from .metrics import MetricsReport, write_reports
from .model import (
    PlacementDecision,
    PlacementReason,
    ResourceNode,
    SecurityClass,
    ServiceDescriptor,
    Tier,
    Topology,
    TrustAssessment,
    TrustLevel,
    UserProfile,
    is_admissible,
    projected_response_ms,
    transmit_ms,
)
from .registry import (
    ArbitrationLog,
    CompositePlan,
    FunctionalSpec,
    ServiceRecord,
    ServiceRegistry,
    handle_request,
)
from .scheduler import (
    SchedulerWeights,
    classify_cloud,
    reschedule,
    schedule_service,
    score_cloud,
)
from .simulation import InvocationRecord, Policy, Simulation, run, run_policies
from .standards import TagVocabulary, ValidationResult, enforce_standard
from .trust import (
    ReputationRecord,
    aggregate_trust,
    effective_trust,
    establish_trust,
    indirect_trust,
    reputation_trust,
)
from .workload import (
    Scenario,
    SplitMix64,
    generate_workload,
    load_packaged_scenario,
    load_scenario,
)

__all__ = [
    "AnalysisThresholds",
    "ArbitrationLog",
    "Blob",
    "CompositePlan",
    "ContextSnapshot",
    "Digest",
    "EnergyModel",
    "FunctionalSpec",
    "InvocationRecord",
    "MetricsReport",
    "PlacementDecision",
    "PlacementReason",
    "Policy",
    "ProfileVerdict",
    "QoSParameters",
    "Recommendation",
    "ReputationRecord",
    "RescheduleAdvice",
    "ResourceNode",
    "Scenario",
    "SchedulerWeights",
    "SecurityClass",
    "ServiceDescriptor",
    "ServiceRecord",
    "ServiceRegistry",
    "Simulation",
    "SplitMix64",
    "TagVocabulary",
    "Tariff",
    "TestVector",
    "Tier",
    "Topology",
    "TrustAssessment",
    "TrustLevel",
    "UserProfile",
    "ValidationResult",
    "aggregate_trust",
    "analyze_computation",
    "analyze_performance",
    "apply_slo_rebate",
    "apply_verdict",
    "build_topology",
    "classify_cloud",
    "collect_context",
    "compute_charge",
    "compute_digest",
    "effective_trust",
    "energy_j",
    "enforce_standard",
    "establish_trust",
    "generate_workload",
    "handle_request",
    "indirect_trust",
    "is_admissible",
    "is_dealer_open",
    "load_packaged_scenario",
    "load_scenario",
    "profile_service",
    "projected_response_ms",
    "reputation_trust",
    "reschedule",
    "run",
    "run_policies",
    "schedule_service",
    "score_cloud",
    "transmit_ms",
    "update_user_profile",
    "write_reports",
]
