"""
Runtime monitoring for the arbitrator: the context collector, the performance and
computational analyzers, the service profiler and the user profiler.

Every analyzer is a pure function over an immutable :class:`ContextSnapshot`.
"""

import logging
from collections.abc import Sequence
from enum import Enum
from statistics import fmean
from typing import TYPE_CHECKING, Optional

from pydantic import BaseModel, ConfigDict, Field, computed_field, model_validator
from typing_extensions import Self

from sami_broker._error import InvalidExpectation, NotFound, OutOfOrderEvent
from sami_broker.model import (
    TIER_ORDER,
    Tier,
    Topology,
    UserProfile,
    is_admissible,
    projected_response_ms,
)
from sami_broker.registry import FunctionalSpec, ServiceRecord, ServiceRegistry

if TYPE_CHECKING:
    from sami_broker.simulation import InvocationRecord

logger = logging.getLogger(__name__)


class AnalysisThresholds(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    theta: float = Field(default=5000.0, ge=0)
    """Delay pressure threshold on invocation rate x mean latency, in ms/s."""

    delta: float = Field(default=50.0, ge=0)
    """Minimum projected gain in ms worth a move."""

    k: float = Field(default=1.5, gt=0)
    m: int = Field(default=3, ge=1)
    window: int = Field(default=100, ge=1)
    tol: float = Field(default=0.2, ge=0)
    min_samples: int = Field(default=20, ge=1)
    tick_ms: float = Field(default=1000.0, gt=0)
    rebate_frac: float = Field(default=0.1, ge=0, le=1)

    @model_validator(mode="after")
    def _samples_fit_window(self) -> Self:
        if self.min_samples > self.window:
            raise ValueError("min_samples cannot exceed the window size")

        return self


class Trigger(str, Enum):
    DELAY_PRESSURE = "DelayPressure"
    COMPUTE_SHORTFALL = "ComputeShortfall"


class RescheduleAdvice(BaseModel):
    model_config = ConfigDict(frozen=True)

    service_id: str
    trigger: Trigger
    target_tier_hint: Optional[Tier] = None
    projected_gain_ms: float


class Recommendation(str, Enum):
    KEEP = "Keep"
    REPLACE = "Replace"


class ProfileVerdict(BaseModel):
    model_config = ConfigDict(frozen=True)

    service_id: str
    functional_ok: bool
    latency_ok: bool

    @computed_field  # type: ignore[misc]
    @property
    def recommendation(self) -> Recommendation:
        if self.functional_ok and self.latency_ok:
            return Recommendation.KEEP

        return Recommendation.REPLACE


class NodeContext(BaseModel):
    model_config = ConfigDict(frozen=True)

    in_flight: int = Field(default=0, ge=0)
    utilization: float = Field(default=0.0, ge=0, le=1)


def nearest_rank(values: Sequence[float], percent: int) -> float:
    """Nearest-rank percentile: the ``ceil(percent/100 * n)``-th smallest value."""
    if not values:
        return 0.0

    ordered = sorted(values)
    rank = max(1, (percent * len(ordered) + 99) // 100)
    return ordered[rank - 1]


class ServiceWindow(BaseModel):
    """Sliding window of the latest completed invocations of one service."""

    model_config = ConfigDict(frozen=True)

    invocations: int = 0
    latencies: tuple[float, ...] = ()
    completions: tuple[float, ...] = ()
    exec_ms: tuple[float, ...] = ()
    last_event_ms: Optional[float] = None

    @property
    def mean_latency_ms(self) -> float:
        return fmean(self.latencies) if self.latencies else 0.0

    @property
    def p95_latency_ms(self) -> float:
        return nearest_rank(self.latencies, 95)

    @property
    def invocation_rate(self) -> float:
        """Completions per second across the window."""
        if len(self.completions) < 2:
            return 0.0

        span = self.completions[-1] - self.completions[0]
        return (len(self.completions) - 1) * 1000 / span if span > 0 else 0.0


class ContextSnapshot(BaseModel):
    model_config = ConfigDict(frozen=True)

    window: int = Field(default=100, ge=1)
    nodes: dict[str, NodeContext] = {}
    services: dict[str, ServiceWindow] = {}

    def service(self, service_id: str) -> ServiceWindow:
        return self.services.get(service_id, ServiceWindow())

    def node(self, node_id: str) -> NodeContext:
        return self.nodes.get(node_id, NodeContext())

    def reset(self, service_id: str) -> "ContextSnapshot":
        """Forget the window of ``service_id``, keeping its event clock."""
        fresh = ServiceWindow(last_event_ms=self.service(service_id).last_event_ms)
        return self.model_copy(update={"services": {**self.services, service_id: fresh}})


def collect_context(
    event: "InvocationRecord",
    ctx: ContextSnapshot,
    in_flight: Optional[int] = None,
    cpu_slots: Optional[int] = None,
) -> ContextSnapshot:
    from sami_broker.simulation import Outcome

    window = ctx.service(event.service_id)
    if window.last_event_ms is not None and event.t_done < window.last_event_ms:
        raise OutOfOrderEvent(event.service_id, event.t_done, window.last_event_ms)

    update: dict = {"invocations": window.invocations + 1, "last_event_ms": event.t_done}
    if event.outcome is Outcome.COMPLETED:
        size = ctx.window
        update["latencies"] = (window.latencies + (event.latency_ms,))[-size:]
        update["completions"] = (window.completions + (event.t_done,))[-size:]
        update["exec_ms"] = (window.exec_ms + (event.exec_ms,))[-size:]

    services = {**ctx.services, event.service_id: window.model_copy(update=update)}
    nodes = ctx.nodes
    if in_flight is not None and cpu_slots and event.node_id:
        busy = NodeContext(in_flight=in_flight, utilization=min(1.0, in_flight / cpu_slots))
        nodes = {**nodes, event.node_id: busy}

    return ctx.model_copy(update={"services": services, "nodes": nodes})


def analyze_performance(
    ctx: ContextSnapshot,
    record: ServiceRecord,
    topology: Topology,
    thresholds: Optional[AnalysisThresholds] = None,
    t: float = 0.0,
) -> Optional[RescheduleAdvice]:
    """
    Delay pressure: a latency-sensitive service whose invocation rate times mean
    latency exceeds ``theta`` should move to the nearest tier offering at least
    ``delta`` ms of projected gain over what is observed now.
    """
    thresholds = thresholds or AnalysisThresholds()
    desc = record.descriptor
    window = ctx.service(desc.id)
    if not desc.latency_sensitive or len(window.latencies) < thresholds.min_samples:
        return None

    observed = window.mean_latency_ms
    if window.invocation_rate * observed <= thresholds.theta:
        return None

    for tier in TIER_ORDER[: record.placement.tier.proximity]:
        candidates = [node for node in topology.of_tier(tier) if is_admissible(desc, node, t)]
        if not candidates:
            continue

        gain = observed - min(projected_response_ms(desc, node) for node in candidates)
        if gain > 0 and gain >= thresholds.delta:
            return RescheduleAdvice(
                service_id=desc.id,
                trigger=Trigger.DELAY_PRESSURE,
                target_tier_hint=tier,
                projected_gain_ms=gain,
            )

    return None


def analyze_computation(
    observed_exec_ms: Sequence[float],
    expected_exec_ms: float,
    k: float = 1.5,
    m: int = 3,
    service_id: str = "",
) -> Optional[RescheduleAdvice]:
    if expected_exec_ms <= 0:
        raise InvalidExpectation(f"Expected execution time must be positive: {expected_exec_ms}.")

    recent = observed_exec_ms[-m:]
    if len(recent) < m or any(value <= k * expected_exec_ms for value in recent):
        return None

    gain = fmean(observed_exec_ms) - expected_exec_ms
    if gain <= 0:
        return None

    return RescheduleAdvice(
        service_id=service_id, trigger=Trigger.COMPUTE_SHORTFALL, projected_gain_ms=gain
    )


def profile_service(
    record: ServiceRecord,
    observed_digest: Optional[str],
    observed_p95_ms: float,
    tol: float = 0.2,
) -> ProfileVerdict:
    if not record.is_active:
        raise NotFound(record.service_id)

    vector = record.descriptor.test_vector
    if vector is None:
        functional_ok = True
    else:
        functional_ok = observed_digest is not None and observed_digest.lower() == vector.digest

    latency_ok = observed_p95_ms <= record.descriptor.sla_latency_ms * (1 + tol)
    return ProfileVerdict(
        service_id=record.service_id, functional_ok=functional_ok, latency_ok=latency_ok
    )


def apply_verdict(registry: ServiceRegistry, verdict: ProfileVerdict) -> Optional[ServiceRecord]:
    """
    Replace a service that failed profiling with the best-matching Active service
    covering all of its tags. Returns the retired record, or ``None`` when kept.
    """
    if verdict.recommendation is Recommendation.KEEP:
        return None

    record = registry.get(verdict.service_id)
    required = record.descriptor.capability_tags
    for match in registry.match_services(FunctionalSpec(required_tags=required)):
        candidate = match.record
        if candidate.service_id == record.service_id:
            continue

        if required <= candidate.descriptor.capability_tags:
            return registry.replace_service(record.service_id, candidate.service_id)

    logger.info("No replacement covers '%s'; keeping it.", record.service_id)
    return None


def update_user_profile(profile: UserProfile, invocation: "InvocationRecord") -> UserProfile:
    history = dict(profile.invocation_history)
    history[invocation.service_id] = history.get(invocation.service_id, 0) + 1
    return profile.model_copy(update={"invocation_history": history})
