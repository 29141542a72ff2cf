"""
Shared domain types plus the admissibility and response-time primitives every
other module consumes. Everything here is an immutable value or a pure function.
"""

import math
from collections.abc import Iterable
from enum import Enum, IntEnum
from functools import cached_property
from typing import TYPE_CHECKING, Any, Optional

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    field_serializer,
    field_validator,
    model_validator,
)
from pydantic_core.core_schema import (
    no_info_plain_validator_function,
    plain_serializer_function_ser_schema,
)
from typing_extensions import Self

from sami_broker._error import TierFieldError, TrustLevelError
from sami_broker.billing import QoSParameters, Tariff
from sami_broker.digest import TestVector

if TYPE_CHECKING:
    from pydantic_core import CoreSchema

MINUTES_PER_DAY = 1440
MS_PER_MINUTE = 60_000


class Tier(str, Enum):
    DEALER = "Dealer"
    MNO = "MNO"
    CLOUD = "Cloud"

    @property
    def proximity(self) -> int:
        """0 is nearest to the consumer population."""
        return TIER_ORDER.index(self)


TIER_ORDER = (Tier.DEALER, Tier.MNO, Tier.CLOUD)


class SecurityClass(str, Enum):
    PUBLIC = "Public"
    SENSITIVE = "Sensitive"
    CRITICAL = "Critical"


class TrustLevel(IntEnum):
    """Totally ordered: Untrusted < Low < Medium < High. Serializes by label."""

    UNTRUSTED = 0
    LOW = 1
    MEDIUM = 2
    HIGH = 3

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def parse(cls, value: Any) -> "TrustLevel":
        if isinstance(value, cls):
            return value
        elif isinstance(value, str) and value.upper() in cls.__members__:
            return cls[value.upper()]
        elif isinstance(value, int) and not isinstance(value, bool) and 0 <= value <= 3:
            return cls(value)

        raise TrustLevelError(value)

    @classmethod
    def __get_pydantic_core_schema__(cls, value, handler=None) -> "CoreSchema":
        schema = no_info_plain_validator_function(cls.parse)
        schema["serialization"] = plain_serializer_function_ser_schema(lambda v: v.label)
        return schema

    @classmethod
    def __get_pydantic_json_schema__(cls, core_schema, handler):
        return {"type": "string", "enum": [level.label for level in cls]}


class TrustBasis(str, Enum):
    ESTABLISHED = "Established"
    AGGREGATED = "Aggregated"
    INDIRECT = "Indirect"
    REPUTATION = "Reputation"


class PlacementReason(str, Enum):
    SECURITY_PIN = "SecurityPin"
    LATENCY_PREFERENCE = "LatencyPreference"
    DATA_INTENSIVE = "DataIntensive"
    CAPACITY_FALLBACK = "CapacityFallback"
    RESCHEDULE = "Reschedule"


class CloudClass(str, Enum):
    HIGH = "High"
    MID = "Mid"
    LOW = "Low"


class _Value(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class TrustAssessment(_Value):
    level: TrustLevel
    basis: TrustBasis = TrustBasis.ESTABLISHED
    corroborated: bool = False

    @property
    def security_level(self) -> TrustLevel:
        """
        The level the Sensitive security gate sees: uncorroborated reputation
        evidence is capped at Medium.
        """
        if self.basis is TrustBasis.REPUTATION and not self.corroborated:
            return min(self.level, TrustLevel.MEDIUM)

        return self.level


class OpenHours(_Value):
    """Half-open ``[open_minute, close_minute)`` window in minutes of the simulated day."""

    open_minute: int = Field(ge=0, lt=MINUTES_PER_DAY)
    close_minute: int = Field(gt=0, le=MINUTES_PER_DAY)

    @field_validator("close_minute")
    @classmethod
    def _after_open(cls, value: int, info) -> int:
        opening = info.data.get("open_minute")
        if opening is not None and value <= opening:
            raise ValueError("close_minute must be after open_minute")

        return value

    def contains(self, minute_of_day: float) -> bool:
        return self.open_minute <= minute_of_day < self.close_minute


def minute_of_day(t_ms: float) -> float:
    return (t_ms / MS_PER_MINUTE) % MINUTES_PER_DAY


class ServiceDescriptor(_Value):
    """
    A registered service's functional contract. Standards (semver, tag vocabulary,
    limits, non-negative demands) are checked by
    :func:`~sami_broker.standards.enforce_standard`, not on construction, so that
    a non-conforming descriptor can still be loaded and reported on.
    """

    id: str
    name: str
    version: str
    capability_tags: frozenset[str] = frozenset()
    description: str = ""
    cpu_demand: float = 0.0
    mem_demand: float = 0.0
    storage_demand: float = 0.0
    payload_in: float = 0.0
    payload_out: float = 0.0
    latency_sensitive: bool = False
    data_intensive: bool = False
    security_class: SecurityClass = SecurityClass.PUBLIC
    sla_latency_ms: float = Field(gt=0)
    test_vector: Optional[TestVector] = None

    @field_serializer("capability_tags")
    def _sorted_tags(self, tags: frozenset[str]) -> list[str]:
        return sorted(tags)

    @property
    def payload_mb(self) -> float:
        return self.payload_in + self.payload_out


class ResourceNode(_Value):
    id: str
    tier: Tier
    cpu_speed: float = Field(gt=0)
    cpu_slots: int = Field(default=1, ge=1)
    mem_capacity: float = Field(ge=0)
    # None means unbounded (clouds only).
    storage_capacity: Optional[float] = Field(default=None, ge=0, validate_default=True)
    rtt_ms: float = Field(gt=0)
    bandwidth_mbps: float = Field(gt=0)
    internet_path: Optional[bool] = Field(default=None, validate_default=True)
    trust: TrustAssessment
    tariff: Tariff
    open_hours: Optional[OpenHours] = Field(default=None, validate_default=True)
    security_norm: float = Field(default=0.5, ge=0, le=1)
    qos: QoSParameters = QoSParameters()
    contention: float = Field(default=0.0, ge=0)
    queue_limit: Optional[int] = Field(default=None, ge=0)
    cloud_score: Optional[float] = None
    cloud_class: Optional[CloudClass] = None

    @field_validator("storage_capacity")
    @classmethod
    def _bounded_storage(cls, value, info):
        tier = info.data.get("tier")
        if value is None and tier is not None and tier is not Tier.CLOUD:
            raise TierFieldError("storage_capacity", tier.value, "only clouds may be unbounded")

        return value

    @field_validator("internet_path")
    @classmethod
    def _path_matches_tier(cls, value, info):
        tier = info.data.get("tier")
        if tier is None:
            return value
        elif value is None:
            return tier is Tier.CLOUD
        elif tier is Tier.MNO and value:
            raise TierFieldError("internet_path", tier.value, "MNO traffic stays off the Internet")
        elif tier is Tier.CLOUD and not value:
            raise TierFieldError("internet_path", tier.value, "clouds are reached over Internet")

        return value

    @field_validator("open_hours")
    @classmethod
    def _dealer_hours(cls, value, info):
        tier = info.data.get("tier")
        if tier is Tier.DEALER and value is None:
            raise TierFieldError("open_hours", tier.value, "dealers declare operating hours")
        elif tier is not None and tier is not Tier.DEALER and value is not None:
            raise TierFieldError("open_hours", tier.value, "only dealers have operating hours")

        return value

    @property
    def cpu_capacity(self) -> float:
        """Mega-instructions one invocation may demand: a second of aggregate compute."""
        return self.cpu_speed * self.cpu_slots


class PlacementDecision(_Value):
    service_id: str
    node_id: str
    tier: Tier
    objective_ms: float = Field(ge=0)
    reason: PlacementReason
    decided_at: float = 0.0
    # Migrations activate after the service copy has been transferred.
    active_from: float = 0.0


class UserProfile(_Value):
    consumer_id: str
    weight_latency: float = Field(default=0.7, ge=0, le=1)
    weight_cost: float = Field(default=0.3, ge=0, le=1)
    invocation_history: dict[str, int] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _weights_sum_to_one(self) -> Self:
        if not math.isclose(self.weight_latency + self.weight_cost, 1.0, abs_tol=1e-9):
            raise ValueError("weight_latency + weight_cost must equal 1")

        return self

    @field_serializer("invocation_history")
    def _sorted_history(self, history: dict[str, int]) -> dict[str, int]:
        return dict(sorted(history.items()))


class Topology(BaseModel):
    """Infrastructure nodes ordered by id."""

    model_config = ConfigDict(frozen=True)

    nodes: tuple[ResourceNode, ...]

    @field_validator("nodes")
    @classmethod
    def _sorted_by_id(cls, nodes: tuple[ResourceNode, ...]) -> tuple[ResourceNode, ...]:
        return tuple(sorted(nodes, key=lambda n: n.id))

    @cached_property
    def node_index(self) -> dict[str, ResourceNode]:
        return {node.id: node for node in self.nodes}

    def has(self, node_id: str) -> bool:
        return node_id in self.node_index

    def get(self, node_id: str) -> ResourceNode:
        return self.node_index[node_id]

    def of_tier(self, tier: Tier) -> tuple[ResourceNode, ...]:
        return tuple(node for node in self.nodes if node.tier is tier)

    @classmethod
    def of(cls, nodes: Iterable[ResourceNode]) -> "Topology":
        return cls(nodes=tuple(nodes))


# Admissibility clauses.


def fits_capacity(service: ServiceDescriptor, node: ResourceNode) -> bool:
    if service.cpu_demand > node.cpu_capacity or service.mem_demand > node.mem_capacity:
        return False

    return node.storage_capacity is None or service.storage_demand <= node.storage_capacity


def within_open_hours(node: ResourceNode, t: float) -> bool:
    if node.tier is not Tier.DEALER or node.open_hours is None:
        return True

    return node.open_hours.contains(minute_of_day(t))


def passes_security_gate(service: ServiceDescriptor, node: ResourceNode) -> bool:
    if service.security_class is SecurityClass.CRITICAL:
        return not node.internet_path and node.tier is Tier.MNO
    elif service.security_class is SecurityClass.SENSITIVE:
        return not node.internet_path or node.trust.security_level >= TrustLevel.HIGH

    return True


def is_trusted(node: ResourceNode) -> bool:
    return node.trust.level > TrustLevel.UNTRUSTED


def is_admissible(service: ServiceDescriptor, node: ResourceNode, t: float) -> bool:
    return (
        fits_capacity(service, node)
        and within_open_hours(node, t)
        and passes_security_gate(service, node)
        and is_trusted(node)
    )


def transmit_ms(bytes_mb: float, bandwidth_mbps: float) -> float:
    return bytes_mb * 8 * 1000 / bandwidth_mbps


def expected_exec_ms(service: ServiceDescriptor, node: ResourceNode) -> float:
    return service.cpu_demand / node.cpu_speed * 1000


def projected_response_ms(service: ServiceDescriptor, node: ResourceNode) -> float:
    return (
        node.rtt_ms
        + transmit_ms(service.payload_mb, node.bandwidth_mbps)
        + expected_exec_ms(service, node)
    )
