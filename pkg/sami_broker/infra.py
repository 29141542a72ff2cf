"""
Infrastructure primitives: transmission time, energy, dealer availability and
building a :class:`~sami_broker.model.Topology` from configuration blocks.
"""

from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from typing_extensions import Self

from sami_broker._error import (
    ConfigError,
    NonDealerNode,
    SamiError,
    errors_from_validation,
)
from sami_broker.billing import QoSParameters, Tariff, default_tariffs
from sami_broker.model import (
    OpenHours,
    ResourceNode,
    Tier,
    Topology,
    TrustAssessment,
    minute_of_day,
    transmit_ms,
)
from sami_broker.scheduler import CloudNormalizers, classify_cloud, score_cloud
from sami_broker.trust import (
    ReputationRecord,
    aggregate_trust,
    effective_trust,
    establish_trust,
    indirect_trust,
    reputation_trust,
)

__all__ = [
    "EnergyModel",
    "NodeConfig",
    "ProbeEvidence",
    "TopologyConfig",
    "build_topology",
    "check_topology",
    "energy_j",
    "is_dealer_open",
    "transmit_ms",
]


class EnergyModel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    p_tx_w: float = Field(default=1.0, gt=0)
    """Radio power while transmitting, in watts."""

    p_idle_w: float = Field(default=0.1, gt=0)
    """Power while idling for the response, in watts."""


def energy_j(
    bytes_mb: float, bandwidth_mbps: float, wait_ms: float, model: Optional[EnergyModel] = None
) -> float:
    """Device energy: transmit at ``p_tx_w``, then idle at ``p_idle_w`` while waiting."""
    model = model or EnergyModel()
    return (
        model.p_tx_w * transmit_ms(bytes_mb, bandwidth_mbps) / 1000
        + model.p_idle_w * wait_ms / 1000
    )


def is_dealer_open(node: ResourceNode, t: float) -> bool:
    if node.tier is not Tier.DEALER or node.open_hours is None:
        raise NonDealerNode(node.id)

    return node.open_hours.contains(minute_of_day(t))


class ProbeEvidence(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    passed: bool
    count: int = Field(ge=1)


class NodeConfig(BaseModel):
    """
    A node block as written in a scenario. Trust may be given outright or derived
    from evidence (probes, peer opinions, a transitive chain, reputation); every
    source supplied is combined with :func:`~sami_broker.trust.effective_trust`.
    The tier's default tariff applies when none is given.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    id: str
    tier: Tier
    cpu_speed: float
    cpu_slots: int = 1
    mem_capacity: float
    storage_capacity: Optional[float] = None
    rtt_ms: float
    bandwidth_mbps: float
    internet_path: Optional[bool] = None
    open_hours: Optional[OpenHours] = None
    security_norm: float = 0.5
    qos: QoSParameters = QoSParameters()
    contention: float = 0.0
    queue_limit: Optional[int] = None
    tariff: Optional[Tariff] = None
    trust: Optional[TrustAssessment] = None
    probes: Optional[ProbeEvidence] = None
    opinions: tuple[TrustAssessment, ...] = ()
    chain: tuple[TrustAssessment, ...] = ()
    reputation: Optional[ReputationRecord] = None

    @model_validator(mode="after")
    def _has_trust_evidence(self) -> Self:
        if not (self.trust or self.probes or self.opinions or self.chain or self.reputation):
            raise ValueError("node needs trust or trust evidence")

        return self

    def assess_trust(self) -> TrustAssessment:
        evidence = []
        if self.trust is not None:
            evidence.append(self.trust)
        if self.probes is not None:
            evidence.append(establish_trust(self.probes.passed, self.probes.count))
        if self.opinions:
            evidence.append(aggregate_trust(self.opinions))
        if self.chain:
            evidence.append(indirect_trust(self.chain))
        if self.reputation is not None:
            evidence.append(reputation_trust(self.reputation))

        return effective_trust(evidence)

    def to_resource_node(self, tariffs: dict[Tier, Tariff]) -> ResourceNode:
        fields = self.model_dump(
            exclude={"tariff", "trust", "probes", "opinions", "chain", "reputation"}
        )
        return ResourceNode(
            **fields,
            trust=self.assess_trust(),
            tariff=self.tariff or tariffs[self.tier],
        )


class TopologyConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    nodes: list[NodeConfig] = []
    tariffs: dict[Tier, Tariff] = {}
    """Per-tier overrides of the default tariffs."""

    @property
    def tier_tariffs(self) -> dict[Tier, Tariff]:
        return {**default_tariffs(), **self.tariffs}


def check_topology(config: TopologyConfig) -> list[ConfigError]:
    """Every problem that keeps ``config`` from building, each with its field path."""
    if not config.nodes:
        return [ConfigError("nodes", "at least one node is required")]

    errors = []
    seen: set[str] = set()
    tariffs = config.tier_tariffs
    for index, block in enumerate(config.nodes):
        path = f"nodes[{index}]"
        if block.id in seen:
            errors.append(ConfigError(f"{path}.id", f"duplicate node id '{block.id}'"))
        seen.add(block.id)

        try:
            block.to_resource_node(tariffs)
        except ValidationError as err:
            errors.extend(errors_from_validation(err, prefix=path))
        except SamiError as err:
            errors.append(ConfigError(f"{path}.trust", str(err)))

    return errors


def build_topology(config: TopologyConfig) -> Topology:
    if errors := check_topology(config):
        raise errors[0]

    tariffs = config.tier_tariffs
    nodes = [block.to_resource_node(tariffs) for block in config.nodes]
    if clouds := [node for node in nodes if node.tier is Tier.CLOUD]:
        normalizers = CloudNormalizers.from_nodes(clouds)
        nodes = [_with_cloud_class(node, normalizers) for node in nodes]

    return Topology.of(nodes)


def _with_cloud_class(node: ResourceNode, normalizers: CloudNormalizers) -> ResourceNode:
    if node.tier is not Tier.CLOUD:
        return node

    score = score_cloud(node, normalizers)
    return node.model_copy(update={"cloud_score": score, "cloud_class": classify_cloud(score)})
