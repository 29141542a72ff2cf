import logging
from statistics import fmean

import pytest

from sami_broker.digest import compute_digest
from sami_broker.model import Tier, minute_of_day, projected_response_ms
from sami_broker.registry import ArbitrationKind, RecordState
from sami_broker.simulation import EventKind, Outcome, Policy, Simulation, run, run_policies
from sami_broker.workload import load_packaged_scenario, packaged_scenarios, parse_scenario

HOUR_MS = 60 * 60 * 1000


def node(node_id, tier, **fields):
    values = {
        "id": node_id,
        "tier": tier,
        "cpu_speed": 4000,
        "cpu_slots": 64,
        "mem_capacity": 16384,
        "rtt_ms": 40,
        "bandwidth_mbps": 50,
        "trust": {"level": "High"},
    }
    if tier != "Cloud":
        values["storage_capacity"] = 100_000

    values.update(fields)
    return values


def service(service_id, **fields):
    return {
        "id": service_id,
        "name": service_id,
        "version": "1.0.0",
        "capability_tags": ["video"],
        "cpu_demand": 100,
        "mem_demand": 128,
        "storage_demand": 10,
        "payload_in": 0.1,
        "payload_out": 0.1,
        "sla_latency_ms": 1000,
        **fields,
    }


def scenario(nodes, services, rates, horizon_ms=10_000, **fields):
    return parse_scenario(
        {
            "horizon_ms": horizon_ms,
            "nodes": nodes,
            "services": services,
            "consumers": [{"id": "c1", "rates": rates}] if rates else [],
            **fields,
        }
    )


def completed(records):
    return [r for r in records if r.outcome is Outcome.COMPLETED]


@pytest.fixture(scope="module")
def packaged():
    return {name: load_packaged_scenario(name) for name in packaged_scenarios()}


@pytest.fixture(scope="module")
def hot_cloud(packaged):
    sim = Simulation(packaged["hot_cloud_service"])
    return sim, sim.run()


def test_no_arrivals():
    sim = Simulation(scenario([node("M1", "MNO")], [service("s1")], {}))
    report = sim.run()
    assert sim.records == []
    assert report.run.arrivals == 0
    assert report.run.in_flight == 0
    assert report.service("s1").mean_latency_ms == 0


def test_uncontended_latency_matches_projection():
    sim = Simulation(scenario([node("M1", "MNO")], [service("s1")], {"s1": 1}))
    sim.run()
    expected = projected_response_ms(sim.scenario.service("s1"), sim.topology.get("M1"))
    assert expected == pytest.approx(97)
    records = completed(sim.records)
    assert records
    assert all(r.latency_ms == pytest.approx(expected) for r in records)
    assert all(r.queue_ms == 0 for r in records)


@pytest.mark.parametrize("policy", list(Policy))
def test_requests_are_conserved(packaged, policy):
    for name, config in packaged.items():
        sim = Simulation(config, policy)
        report = sim.run()
        assert report.run.arrivals == len(sim.records) + sim.in_flight, name
        totals = report.run.totals
        assert totals.completed + totals.rejected + totals.dropped == len(sim.records), name


def test_runs_are_deterministic(packaged):
    config = packaged["latency_mix"]
    first, second = Simulation(config), Simulation(config)
    assert first.run() == second.run()
    assert first.records == second.records
    assert first.events == second.events


def test_seed_changes_the_run(packaged):
    config = packaged["latency_mix"]
    assert run(config, seed=1) != run(config, seed=2)


def test_broker_beats_cloud_only_on_latency(packaged):
    sami, cloud_only = run_policies(packaged["latency_mix"], [Policy.SAMI, Policy.CLOUD_ONLY])
    assert sami.run.security_violations == 0
    assert sami.run.totals.mean_latency_ms <= 0.5 * cloud_only.run.totals.mean_latency_ms


def test_hot_cloud_service_migrates(hot_cloud):
    sim, report = hot_cloud
    moves = [e for e in sim.log.entries if e.kind is ArbitrationKind.RESCHEDULE]
    assert moves
    assert moves[0].time_ms <= 5 * sim.thresholds.tick_ms
    assert report.service("hot").tier is Tier.MNO

    placement = sim.registry.get("hot").placement
    records = completed(sim.records)
    on_cloud = [r.latency_ms for r in records if r.node_id == "C1"]
    on_mno = [
        r.latency_ms
        for r in records
        if r.node_id == "M1" and r.t_arrive >= placement.active_from
    ]
    assert fmean(on_cloud) - fmean(on_mno) >= sim.thresholds.delta


def test_migration_emits_completion(hot_cloud):
    sim, _ = hot_cloud
    done = [e for e in sim.events if e.kind is EventKind.MIGRATION_DONE]
    assert done[0].refs == ("hot", "M1")


def test_new_starts_wait_for_migration(hot_cloud):
    sim, _ = hot_cloud
    placement = sim.registry.get("hot").placement
    on_mno = [r for r in completed(sim.records) if r.node_id == "M1"]
    assert min(r.t_start for r in on_mno) >= placement.active_from


def test_arbitration_events_reconcile(hot_cloud):
    sim, report = hot_cloud
    ticks = sum(1 for e in sim.events if e.kind is EventKind.ANALYSIS_TICK)
    registrations = len(sim.scenario.services)
    expected = registrations + ticks * len(sim.registry.active_records())
    assert len(sim.log) == expected + sum(sim.reschedules.values())
    assert report.run.arbitration_events == len(sim.log)
    assert report.run.totals.reschedules == sum(sim.reschedules.values())


def test_dealer_serves_only_during_its_hours():
    config = scenario(
        [
            node(
                "D1",
                "Dealer",
                cpu_speed=2000,
                rtt_ms=5,
                bandwidth_mbps=100,
                open_hours={"open_minute": 540, "close_minute": 1020},
            ),
            node("M1", "MNO"),
            node("C1", "Cloud", rtt_ms=200),
        ],
        [service("s1", latency_sensitive=True)],
        {"s1": 0.05},
        horizon_ms=24 * HOUR_MS,
        thresholds={"tick_ms": 60_000},
    )
    sim = Simulation(config)
    sim.run()
    served = completed(sim.records)
    on_dealer = [r for r in served if r.tier is Tier.DEALER]
    assert on_dealer
    assert any(r.tier is Tier.MNO for r in served)
    assert all(540 <= minute_of_day(r.t_start) < 1020 for r in on_dealer)
    kinds = [e.kind for e in sim.events]
    assert EventKind.DEALER_OPEN in kinds and EventKind.DEALER_CLOSE in kinds


def test_baseline_rejects_on_security_gate():
    nodes = [node("M1", "MNO"), node("C1", "Cloud")]
    services = [service("vault", security_class="Critical")]
    cloud_only = Simulation(scenario(nodes, services, {"vault": 2}), Policy.CLOUD_ONLY)
    report = cloud_only.run()
    assert report.run.arrivals > 0
    assert report.service("vault").rejected == report.run.arrivals
    assert report.run.security_violations == report.run.arrivals

    sami = run(scenario(nodes, services, {"vault": 2}))
    assert sami.run.security_violations == 0
    assert sami.service("vault").tier is Tier.MNO


def test_baseline_without_its_tier(packaged, caplog):
    with caplog.at_level(logging.WARNING, logger="sami_broker.simulation"):
        report = run(packaged["hot_cloud_service"], Policy.DEALER_ONLY)

    assert "No Dealer node for 'hot'" in caplog.text
    row = report.service("hot")
    assert row.tier is None
    assert row.rejected == row.invocations > 0


def test_broker_matches_cloud_only_without_edge_nodes():
    config = scenario(
        [node("C1", "Cloud", rtt_ms=150), node("C2", "Cloud", rtt_ms=300, bandwidth_mbps=20)],
        [service("s1", latency_sensitive=True), service("s2", name="other")],
        {"s1": 5, "s2": 3},
    )
    sami, cloud_only = Simulation(config, Policy.SAMI), Simulation(config, Policy.CLOUD_ONLY)
    sami.run()
    cloud_only.run()

    def outcomes(sim):
        return [
            (r.request_id, r.node_id, r.outcome, r.latency_ms, r.energy_j, r.charge)
            for r in sim.records
        ]

    assert outcomes(sami) == outcomes(cloud_only)
    assert sum(sami.reschedules.values()) == 0


def test_full_queue_drops():
    config = scenario(
        [node("M1", "MNO", cpu_slots=1, queue_limit=0)],
        [service("slow", cpu_demand=4000)],
        {"slow": 5},
    )
    report = run(config)
    row = report.service("slow")
    assert row.dropped > 0
    assert row.completed > 0


def test_single_slot_is_fifo():
    config = scenario(
        [node("M1", "MNO", cpu_slots=1)], [service("slow", cpu_demand=400)], {"slow": 5}
    )
    sim = Simulation(config, Policy.MNO_ONLY)
    sim.run()
    served = sorted(completed(sim.records), key=lambda r: r.t_start)
    assert [r.request_id for r in served] == sorted(r.request_id for r in served)
    assert any(r.queue_ms > 0 for r in served)


def test_concurrency_never_exceeds_slots():
    config = scenario(
        [node("M1", "MNO", cpu_slots=2)], [service("busy", cpu_demand=1000)], {"busy": 4}
    )
    sim = Simulation(config, Policy.MNO_ONLY)
    sim.run()
    edges = sorted(
        [(r.t_start, 1) for r in completed(sim.records)]
        + [(r.t_done, -1) for r in completed(sim.records)]
    )
    running, peak = 0, 0
    for _, step in edges:
        running += step
        peak = max(peak, running)

    assert peak == 2


def test_drifted_service_is_replaced():
    vector = {"blob": "0x00", "digest": compute_digest(b"ok")}
    config = scenario(
        [node("M1", "MNO")],
        [
            service("s1", test_vector=vector),
            service("s2", name="backup", capability_tags=["video", "audio"]),
        ],
        {"s1": 10},
        faults={"s1": compute_digest(b"drifted")},
    )
    sim = Simulation(config)
    report = sim.run()
    assert sim.registry.get("s1").state is RecordState.REPLACED
    assert sim.registry.get("s1").replaced_by == "s2"
    # Requests keep their requested id after forwarding.
    assert report.service("s1").completed == len(completed(sim.records))
    assert report.service("s2").invocations == 0

    # The successor is watched on the traffic it now serves.
    successor, retired = sim.context.service("s2"), sim.context.service("s1")
    assert successor.invocations > 0
    assert successor.latencies
    assert successor.invocations + retired.invocations == len(sim.records)


def test_consumer_profiles_count_invocations(hot_cloud):
    sim, report = hot_cloud
    assert report.consumers["heavy"]["hot"] == len(sim.records)


def test_simulation_runs_once():
    sim = Simulation(scenario([node("M1", "MNO")], [service("s1")], {}))
    sim.run()
    with pytest.raises(RuntimeError):
        sim.run()


def test_run_policies_keeps_order(packaged):
    policies = [Policy.CLOUD_ONLY, Policy.SAMI]
    reports = run_policies(packaged["hot_cloud_service"], policies)
    assert [r.policy for r in reports] == ["cloud-only", "sami"]
