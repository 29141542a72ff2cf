import pytest

from sami_broker.billing import default_tariffs
from sami_broker.model import (
    OpenHours,
    ResourceNode,
    ServiceDescriptor,
    Tier,
    Topology,
    TrustAssessment,
    TrustLevel,
)
from sami_broker.standards import TagVocabulary

ALWAYS_OPEN = OpenHours(open_minute=0, close_minute=1440)


@pytest.fixture(scope="session")
def make_node():
    tariffs = default_tariffs()

    def factory(node_id: str, tier: Tier, **fields) -> ResourceNode:
        values = {
            "cpu_speed": 4000,
            "cpu_slots": 4,
            "mem_capacity": 4096,
            "storage_capacity": None if tier is Tier.CLOUD else 10_000,
            "rtt_ms": 50,
            "bandwidth_mbps": 50,
            "trust": TrustAssessment(level=TrustLevel.HIGH),
            "tariff": tariffs[tier],
        }
        if tier is Tier.DEALER:
            values["open_hours"] = ALWAYS_OPEN

        values.update(fields)
        return ResourceNode(id=node_id, tier=tier, **values)

    return factory


@pytest.fixture(scope="session")
def make_service():
    def factory(service_id: str = "svc", **fields) -> ServiceDescriptor:
        values = {
            "name": service_id,
            "version": "1.0.0",
            "capability_tags": {"video"},
            "cpu_demand": 100,
            "mem_demand": 128,
            "storage_demand": 10,
            "payload_in": 0.1,
            "payload_out": 0.1,
            "sla_latency_ms": 1000,
        }
        values.update(fields)
        return ServiceDescriptor(id=service_id, **values)

    return factory


@pytest.fixture(scope="session")
def t0(make_node):
    """One node per tier: a nearby dealer, an MNO and a distant cloud."""
    return Topology.of(
        [
            make_node("D1", Tier.DEALER, cpu_speed=2000, rtt_ms=10, bandwidth_mbps=100),
            make_node("M1", Tier.MNO),
            make_node(
                "C1",
                Tier.CLOUD,
                cpu_speed=8000,
                cpu_slots=64,
                mem_capacity=65536,
                rtt_ms=200,
                bandwidth_mbps=20,
            ),
        ]
    )


@pytest.fixture(scope="session")
def vocabulary():
    return TagVocabulary.default()
