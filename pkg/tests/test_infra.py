import pytest
from pydantic import ValidationError

from sami_broker._error import ConfigError, NonDealerNode
from sami_broker.infra import (
    EnergyModel,
    TopologyConfig,
    build_topology,
    check_topology,
    energy_j,
    is_dealer_open,
)
from sami_broker.model import CloudClass, Tier, TrustBasis, TrustLevel, transmit_ms

HOUR_MS = 60 * 60 * 1000
DAY_MS = 24 * HOUR_MS


def block(node_id, tier, **fields):
    values = {
        "id": node_id,
        "tier": tier,
        "cpu_speed": 1000,
        "mem_capacity": 1024,
        "rtt_ms": 20,
        "bandwidth_mbps": 10,
        "trust": {"level": "High"},
    }
    if tier != "Cloud":
        values["storage_capacity"] = 1000
    if tier == "Dealer":
        values["open_hours"] = {"open_minute": 540, "close_minute": 1020}

    values.update(fields)
    return values


def test_energy_transmit_only():
    # 1 MB at 8 Mbps takes one second at one watt.
    assert energy_j(1, 8, 0) == pytest.approx(1.0)


def test_energy_zero():
    assert energy_j(0, 8, 0) == 0


def test_energy_idle_wait():
    model = EnergyModel(p_tx_w=2, p_idle_w=0.5)
    assert energy_j(1, 8, 2000, model) == pytest.approx(2 + 1)


def test_energy_falls_with_bandwidth():
    grid = [0.5 * step for step in range(1, 101)]
    energies = [energy_j(5, bandwidth, 100) for bandwidth in grid]
    assert all(a > b for a, b in zip(energies, energies[1:]))


@pytest.mark.parametrize("bandwidth", (1, 7.5, 100))
def test_doubling_bandwidth_halves_transmission(bandwidth):
    assert transmit_ms(3, 2 * bandwidth) == pytest.approx(transmit_ms(3, bandwidth) / 2)
    transmit_energy = energy_j(3, bandwidth, 0)
    assert energy_j(3, 2 * bandwidth, 0) == pytest.approx(transmit_energy / 2)


@pytest.mark.parametrize(
    "t,expected",
    [
        (0, False),
        (9 * HOUR_MS - 1, False),
        (9 * HOUR_MS, True),
        (17 * HOUR_MS - 1, True),
        (17 * HOUR_MS, False),
        (DAY_MS + 12 * HOUR_MS, True),
        (3 * DAY_MS + 20 * HOUR_MS, False),
    ],
)
def test_is_dealer_open(make_node, t, expected):
    dealer = make_node("D9", Tier.DEALER, open_hours={"open_minute": 540, "close_minute": 1020})
    assert is_dealer_open(dealer, t) is expected


def test_is_dealer_open_rejects_other_tiers(t0):
    with pytest.raises(NonDealerNode):
        is_dealer_open(t0.get("M1"), 0)


def test_build_many_dealers():
    nodes = [block(f"D{i:04}", "Dealer") for i in range(1372)] + [block("M1", "MNO")]
    topology = build_topology(TopologyConfig(nodes=nodes))
    assert len(topology.of_tier(Tier.DEALER)) == 1372
    assert topology.nodes[0].id == "D0000"


def test_build_without_nodes():
    with pytest.raises(ConfigError) as err:
        build_topology(TopologyConfig())

    assert err.value.path == "nodes"


def test_dealer_without_hours():
    nodes = [block("M1", "MNO"), block("D1", "Dealer", open_hours=None)]
    (error,) = check_topology(TopologyConfig(nodes=nodes))
    assert error.path == "nodes[1].open_hours"
    assert "operating hours" in error.message


def test_check_topology_reports_every_problem():
    nodes = [
        block("M1", "MNO", internet_path=True),
        block("M1", "MNO"),
        block("C1", "Cloud", storage_capacity=None, cpu_speed=0),
    ]
    paths = [error.path for error in check_topology(TopologyConfig(nodes=nodes))]
    assert paths == ["nodes[0].internet_path", "nodes[1].id", "nodes[2].cpu_speed"]


def test_single_cloud_is_mid():
    topology = build_topology(TopologyConfig(nodes=[block("C1", "Cloud")]))
    cloud = topology.get("C1")
    assert cloud.cloud_score == 0.5
    assert cloud.cloud_class is CloudClass.MID


def test_clouds_are_classified():
    nodes = [
        block("C1", "Cloud", rtt_ms=100, bandwidth_mbps=50, security_norm=0.9),
        block("C2", "Cloud", rtt_ms=300, bandwidth_mbps=10, security_norm=0.1),
        block("M1", "MNO"),
    ]
    topology = build_topology(TopologyConfig(nodes=nodes))
    assert topology.get("C1").cloud_score == pytest.approx(0.875)
    assert topology.get("C1").cloud_class is CloudClass.HIGH
    assert topology.get("C2").cloud_class is CloudClass.LOW
    assert topology.get("M1").cloud_class is None


def test_tariff_defaults_and_overrides():
    config = TopologyConfig(
        nodes=[block("M1", "MNO"), block("C1", "Cloud", tariff={"base_fee": 9})],
        tariffs={"MNO": {"base_fee": 4}},
    )
    topology = build_topology(config)
    assert topology.get("M1").tariff.base_fee == 4
    assert topology.get("C1").tariff.base_fee == 9


def test_trust_from_probes():
    node = block("D1", "Dealer", trust=None, probes={"passed": True, "count": 3})
    trust = build_topology(TopologyConfig(nodes=[node])).get("D1").trust
    assert trust.level is TrustLevel.HIGH
    assert trust.basis is TrustBasis.ESTABLISHED


def test_trust_combines_evidence():
    node = block(
        "C1",
        "Cloud",
        trust=None,
        opinions=[{"level": "Medium"}, {"level": "Low"}, {"level": "Medium"}],
        reputation={"legal_registered": True, "years_active": 9, "complaint_rate": 0.01},
    )
    trust = build_topology(TopologyConfig(nodes=[node])).get("C1").trust
    assert trust.level is TrustLevel.HIGH
    assert trust.basis is TrustBasis.REPUTATION
    assert trust.corroborated


def test_lone_reputation_is_not_corroborated():
    reputation = {"legal_registered": True, "years_active": 6}
    node = block("C1", "Cloud", trust=None, reputation=reputation)
    trust = build_topology(TopologyConfig(nodes=[node])).get("C1").trust
    assert not trust.corroborated
    assert trust.security_level is TrustLevel.MEDIUM


def test_short_chain_is_a_config_error():
    node = block("M1", "MNO", trust=None, chain=[{"level": "High"}])
    (error,) = check_topology(TopologyConfig(nodes=[node]))
    assert error.path == "nodes[0].trust"


def test_node_needs_trust_evidence():
    with pytest.raises(ValidationError, match="trust evidence"):
        TopologyConfig(nodes=[block("M1", "MNO", trust=None)])
