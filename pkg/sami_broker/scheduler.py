"""
Resource scheduler: the initial placement decision flow, cloud performance
classes, baseline tier pinning, and re-scheduling on analysis advice.
"""

import logging
import math
from collections.abc import Sequence
from typing import TYPE_CHECKING, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing_extensions import Self

from sami_broker._error import InvalidAdvice, NoAdmissibleNode, NonCloudNode
from sami_broker.billing import projected_charge
from sami_broker.model import (
    TIER_ORDER,
    CloudClass,
    PlacementDecision,
    PlacementReason,
    ResourceNode,
    SecurityClass,
    ServiceDescriptor,
    Tier,
    Topology,
    UserProfile,
    is_admissible,
    projected_response_ms,
    transmit_ms,
)

if TYPE_CHECKING:
    from sami_broker.analysis import RescheduleAdvice
    from sami_broker.registry import ServiceRecord

logger = logging.getLogger(__name__)


class SchedulerWeights(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    w_latency: float = Field(default=0.7, ge=0, le=1)
    w_cost: float = Field(default=0.3, ge=0, le=1)

    @model_validator(mode="after")
    def _sum_to_one(self) -> Self:
        if not math.isclose(self.w_latency + self.w_cost, 1.0, abs_tol=1e-9):
            raise ValueError("w_latency + w_cost must equal 1")

        return self

    @classmethod
    def from_profile(cls, profile: UserProfile) -> "SchedulerWeights":
        return cls(w_latency=profile.weight_latency, w_cost=profile.weight_cost)


DEFAULT_WEIGHTS = SchedulerWeights()


def _normalize(values: Sequence[float]) -> list[float]:
    low, high = min(values), max(values)
    span = high - low
    return [(value - low) / span if span > 0 else 0.0 for value in values]


def choose_node(
    desc: ServiceDescriptor, candidates: Sequence[ResourceNode], weights: SchedulerWeights
) -> tuple[ResourceNode, float]:
    """
    Minimize ``w_latency * response + w_cost * charge``, both min-max normalized over
    ``candidates``. Ties fall to lower response, then lower charge, then node id.
    Returns the node and its projected response time.
    """
    if not candidates:
        raise NoAdmissibleNode(desc.id, "empty candidate set")

    responses = [projected_response_ms(desc, node) for node in candidates]
    charges = [projected_charge(desc, node) for node in candidates]
    scored = [
        (weights.w_latency * norm_response + weights.w_cost * norm_charge, r, c, node.id, node)
        for node, r, c, norm_response, norm_charge in zip(
            candidates, responses, charges, _normalize(responses), _normalize(charges)
        )
    ]
    objective, response, _, _, node = min(scored, key=lambda s: s[:4])
    return node, response


def exceeds_mno_storage(desc: ServiceDescriptor, topology: Topology) -> bool:
    mnos = topology.of_tier(Tier.MNO)
    return bool(mnos) and all(
        node.storage_capacity is not None and desc.storage_demand > node.storage_capacity
        for node in mnos
    )


def restricted_set(
    desc: ServiceDescriptor, topology: Topology, admissible: Sequence[ResourceNode]
) -> tuple[list[ResourceNode], PlacementReason]:
    def in_tier(tier: Tier) -> list[ResourceNode]:
        return [node for node in admissible if node.tier is tier]

    if desc.security_class is SecurityClass.CRITICAL:
        preferred, reason = in_tier(Tier.MNO), PlacementReason.SECURITY_PIN
    elif desc.latency_sensitive and in_tier(Tier.DEALER):
        preferred, reason = in_tier(Tier.DEALER), PlacementReason.LATENCY_PREFERENCE
    elif desc.data_intensive or exceeds_mno_storage(desc, topology):
        preferred, reason = in_tier(Tier.CLOUD), PlacementReason.DATA_INTENSIVE
    else:
        return list(admissible), PlacementReason.CAPACITY_FALLBACK

    if preferred:
        return preferred, reason

    for tier in TIER_ORDER:
        if fallback := in_tier(tier):
            return fallback, PlacementReason.CAPACITY_FALLBACK

    return [], PlacementReason.CAPACITY_FALLBACK


def schedule_service(
    desc: ServiceDescriptor,
    topology: Topology,
    weights: Optional[SchedulerWeights] = None,
    t: float = 0.0,
) -> PlacementDecision:
    if not topology.nodes:
        raise NoAdmissibleNode(desc.id, "empty topology")

    admissible = [node for node in topology.nodes if is_admissible(desc, node, t)]
    candidates, reason = restricted_set(desc, topology, admissible)
    if not candidates:
        raise NoAdmissibleNode(desc.id)

    node, response = choose_node(desc, candidates, weights or DEFAULT_WEIGHTS)
    return PlacementDecision(
        service_id=desc.id,
        node_id=node.id,
        tier=node.tier,
        objective_ms=response,
        reason=reason,
        decided_at=t,
        active_from=t,
    )


def pin_to_tier(
    desc: ServiceDescriptor,
    topology: Topology,
    tier: Tier,
    weights: Optional[SchedulerWeights] = None,
    t: float = 0.0,
) -> PlacementDecision:
    """
    Baseline placement that bypasses the decision flow: the best node of one tier.
    Prefers admissible nodes but falls back to the whole tier, so admissibility is
    left for the simulator to enforce request by request.
    """
    tier_nodes = topology.of_tier(tier)
    if not tier_nodes:
        raise NoAdmissibleNode(desc.id, f"no {tier.value} nodes")

    admissible = [node for node in tier_nodes if is_admissible(desc, node, t)]
    node, response = choose_node(desc, admissible or tier_nodes, weights or DEFAULT_WEIGHTS)
    return PlacementDecision(
        service_id=desc.id,
        node_id=node.id,
        tier=node.tier,
        objective_ms=response,
        reason=PlacementReason.CAPACITY_FALLBACK,
        decided_at=t,
        active_from=t,
    )


def reschedule(
    record: "ServiceRecord",
    advice: "RescheduleAdvice",
    topology: Topology,
    weights: Optional[SchedulerWeights] = None,
    t: float = 0.0,
) -> PlacementDecision:
    """
    Re-run placement with the advice's tier hint tried first. The current placement
    is returned unchanged unless the new node is strictly faster (or the current node
    is no longer admissible). A move activates once a stand-alone copy of the service
    (``storage_demand`` MB) has been transferred to the new node.
    """
    if advice.projected_gain_ms <= 0:
        raise InvalidAdvice(f"Advice for '{advice.service_id}' promises no gain.")

    desc = record.descriptor
    current = record.placement
    weights = weights or DEFAULT_WEIGHTS

    hinted: list[ResourceNode] = []
    if advice.target_tier_hint is not None:
        hinted = [
            node
            for node in topology.of_tier(advice.target_tier_hint)
            if is_admissible(desc, node, t)
        ]

    if hinted:
        node, response = choose_node(desc, hinted, weights)
    else:
        decision = schedule_service(desc, topology, weights, t)
        node, response = topology.get(decision.node_id), decision.objective_ms

    if node.id == current.node_id:
        return current

    if topology.has(current.node_id):
        current_node = topology.get(current.node_id)
        still_valid = is_admissible(desc, current_node, t)
        if still_valid and not response < projected_response_ms(desc, current_node):
            return current

    logger.info(
        "Rescheduling '%s' from %s to %s (%s).",
        desc.id,
        current.node_id,
        node.id,
        advice.trigger.value,
    )
    return PlacementDecision(
        service_id=desc.id,
        node_id=node.id,
        tier=node.tier,
        objective_ms=response,
        reason=PlacementReason.RESCHEDULE,
        decided_at=t,
        active_from=t + transmit_ms(desc.storage_demand, node.bandwidth_mbps),
    )


# Cloud performance classes.


def cloud_unit_cost(node: ResourceNode) -> float:
    """Price of one cpu-second plus one MB on ``node``."""
    return node.tariff.charge_for(1000, 1)


class MetricRange(BaseModel):
    model_config = ConfigDict(frozen=True)

    low: float
    high: float

    def scale(self, value: float) -> float:
        # No spread among peers: every cloud sits at the midpoint.
        if self.high <= self.low:
            return 0.5

        return (value - self.low) / (self.high - self.low)

    @classmethod
    def over(cls, values: Sequence[float]) -> "MetricRange":
        return cls(low=min(values), high=max(values))


class CloudNormalizers(BaseModel):
    model_config = ConfigDict(frozen=True)

    rtt_ms: MetricRange
    bandwidth_mbps: MetricRange
    unit_cost: MetricRange
    security_norm: MetricRange

    @classmethod
    def from_nodes(cls, clouds: Sequence[ResourceNode]) -> "CloudNormalizers":
        if not clouds:
            raise ValueError("Normalizers need at least one cloud.")

        return cls(
            rtt_ms=MetricRange.over([n.rtt_ms for n in clouds]),
            bandwidth_mbps=MetricRange.over([n.bandwidth_mbps for n in clouds]),
            unit_cost=MetricRange.over([cloud_unit_cost(n) for n in clouds]),
            security_norm=MetricRange.over([n.security_norm for n in clouds]),
        )


def score_cloud(node: ResourceNode, normalizers: CloudNormalizers) -> float:
    """Equal-weight mean of inverted latency, bandwidth, inverted cost and security."""
    if node.tier is not Tier.CLOUD:
        raise NonCloudNode(node.id)

    terms = (
        1 - normalizers.rtt_ms.scale(node.rtt_ms),
        normalizers.bandwidth_mbps.scale(node.bandwidth_mbps),
        1 - normalizers.unit_cost.scale(cloud_unit_cost(node)),
        normalizers.security_norm.scale(node.security_norm),
    )
    return sum(terms) / len(terms)


def classify_cloud(score: float) -> CloudClass:
    if score >= 2 / 3:
        return CloudClass.HIGH
    elif score >= 1 / 3:
        return CloudClass.MID

    return CloudClass.LOW
