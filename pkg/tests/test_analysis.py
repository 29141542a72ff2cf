import pytest
from pydantic import ValidationError

from sami_broker._error import InvalidExpectation, NotFound, OutOfOrderEvent
from sami_broker.analysis import (
    AnalysisThresholds,
    ContextSnapshot,
    ProfileVerdict,
    Recommendation,
    Trigger,
    analyze_computation,
    analyze_performance,
    apply_verdict,
    collect_context,
    nearest_rank,
    profile_service,
    update_user_profile,
)
from sami_broker.digest import TestVector, compute_digest
from sami_broker.model import Tier, Topology, UserProfile
from sami_broker.registry import RecordState, ServiceRecord, ServiceRegistry
from sami_broker.scheduler import pin_to_tier, schedule_service
from sami_broker.simulation import InvocationRecord, Outcome

THRESHOLDS = AnalysisThresholds()


def completed(service_id, t_done, latency, exec_ms=10.0, node_id="C1"):
    return InvocationRecord(
        request_id=0,
        service_id=service_id,
        consumer_id="c",
        node_id=node_id,
        t_arrive=t_done - latency,
        t_start=t_done - exec_ms,
        t_done=t_done,
        exec_ms=exec_ms,
        outcome=Outcome.COMPLETED,
    )


def feed(service_id, count, spacing_ms, latency, ctx=None):
    ctx = ctx or ContextSnapshot()
    for i in range(count):
        ctx = collect_context(completed(service_id, 1000 + i * spacing_ms, latency), ctx)

    return ctx


@pytest.fixture
def cloud_record(make_service, t0):
    desc = make_service("hot", latency_sensitive=True)
    return ServiceRecord(descriptor=desc, placement=pin_to_tier(desc, t0, Tier.CLOUD))


def test_first_event():
    ctx = collect_context(completed("svc", 500, 42), ContextSnapshot())
    window = ctx.service("svc")
    assert window.invocations == 1
    assert window.mean_latency_ms == 42
    assert window.last_event_ms == 500


def test_window_keeps_latest():
    ctx = ContextSnapshot()
    for latency in range(1, 102):
        ctx = collect_context(completed("svc", latency * 10, latency), ctx)

    window = ctx.service("svc")
    assert window.invocations == 101
    assert window.latencies == tuple(float(v) for v in range(2, 102))


def test_p95_nearest_rank():
    ctx = ContextSnapshot()
    for latency in range(1, 101):
        ctx = collect_context(completed("svc", latency * 10, latency), ctx)

    assert ctx.service("svc").p95_latency_ms == 95


@pytest.mark.parametrize(
    "values,percent,expected",
    [([], 95, 0.0), ([7], 95, 7), ([3, 1, 2], 50, 2), ([1, 2, 3, 4], 95, 4), ([1, 2], 50, 1)],
)
def test_nearest_rank(values, percent, expected):
    assert nearest_rank(values, percent) == expected


def test_out_of_order_event():
    ctx = collect_context(completed("svc", 500, 10), ContextSnapshot())
    with pytest.raises(OutOfOrderEvent):
        collect_context(completed("svc", 499, 10), ctx)


def test_events_of_other_services_are_independent():
    ctx = collect_context(completed("a", 500, 10), ContextSnapshot())
    ctx = collect_context(completed("b", 100, 10), ctx)
    assert ctx.service("b").invocations == 1


def test_rejected_events_count_but_stay_out_of_the_window():
    rejected = InvocationRecord(
        request_id=1,
        service_id="svc",
        consumer_id="c",
        t_arrive=0,
        t_start=0,
        t_done=5,
        outcome=Outcome.REJECTED,
    )
    window = collect_context(rejected, ContextSnapshot()).service("svc")
    assert window.invocations == 1
    assert window.latencies == ()


def test_node_utilization():
    ctx = collect_context(completed("svc", 10, 5), ContextSnapshot(), in_flight=3, cpu_slots=4)
    assert ctx.node("C1").in_flight == 3
    assert ctx.node("C1").utilization == 0.75
    assert ctx.node("M1").utilization == 0.0


def test_reset_keeps_event_clock():
    ctx = feed("svc", 5, 100, 50).reset("svc")
    assert ctx.service("svc").latencies == ()
    with pytest.raises(OutOfOrderEvent):
        collect_context(completed("svc", 0, 1), ctx)


def test_invocation_rate():
    # 20 completions 100 ms apart: 19 gaps over 1.9 s.
    assert feed("svc", 20, 100, 600).service("svc").invocation_rate == pytest.approx(10)


def test_delay_pressure_hints_nearest_tier(cloud_record, t0):
    ctx = feed("hot", 20, 100, 600)
    advice = analyze_performance(ctx, cloud_record, t0, THRESHOLDS)
    assert advice is not None
    assert advice.trigger is Trigger.DELAY_PRESSURE
    assert advice.target_tier_hint is Tier.DEALER
    assert advice.projected_gain_ms > THRESHOLDS.delta


def test_delay_pressure_without_nearer_node(make_service, make_node):
    topology = Topology.of([make_node("C1", Tier.CLOUD, rtt_ms=300)])
    desc = make_service("hot", latency_sensitive=True)
    record = ServiceRecord(descriptor=desc, placement=schedule_service(desc, topology))
    assert analyze_performance(feed("hot", 20, 100, 600), record, topology) is None


def test_delay_pressure_at_threshold(cloud_record, t0):
    # One completion per second at 4999 ms mean stays under 5000 ms/s.
    assert analyze_performance(feed("hot", 20, 1000, 4999), cloud_record, t0) is None


def test_delay_pressure_needs_min_samples(cloud_record, t0):
    assert analyze_performance(feed("hot", 19, 100, 600), cloud_record, t0) is None


def test_delay_pressure_ignores_tolerant_services(make_service, t0):
    desc = make_service("hot")
    record = ServiceRecord(descriptor=desc, placement=pin_to_tier(desc, t0, Tier.CLOUD))
    assert analyze_performance(feed("hot", 20, 100, 600), record, t0) is None


def test_delay_pressure_needs_delta_gain(cloud_record, t0):
    # Observed latency barely above what the dealer would give.
    dealer_response = 76.0
    ctx = feed("hot", 100, 1, dealer_response + 49)
    assert analyze_performance(ctx, cloud_record, t0) is None


def test_delay_pressure_falls_through_to_mno(cloud_record, make_node):
    topology = Topology.of(
        [
            make_node("D1", Tier.DEALER, open_hours={"open_minute": 540, "close_minute": 1020}),
            make_node("M1", Tier.MNO),
            make_node("C1", Tier.CLOUD, rtt_ms=200),
        ]
    )
    advice = analyze_performance(feed("hot", 20, 100, 600), cloud_record, topology, t=0)
    assert advice.target_tier_hint is Tier.MNO


def test_compute_shortfall():
    advice = analyze_computation([10, 20, 20, 20], 10, service_id="svc")
    assert advice.trigger is Trigger.COMPUTE_SHORTFALL
    assert advice.projected_gain_ms == pytest.approx(7.5)
    assert advice.target_tier_hint is None


def test_compute_shortfall_broken_streak():
    assert analyze_computation([20, 20, 10], 10) is None


def test_compute_shortfall_needs_m_samples():
    assert analyze_computation([30, 30], 10, m=3) is None


def test_compute_shortfall_is_strict():
    assert analyze_computation([15, 15, 15], 10, k=1.5) is None


@pytest.mark.parametrize("expected", (0, -1))
def test_compute_shortfall_needs_positive_expectation(expected):
    with pytest.raises(InvalidExpectation):
        analyze_computation([1, 2, 3], expected)


def vector_record(make_service, t0, **fields):
    vector = TestVector.for_output(b"frame", b"tags")
    desc = make_service("svc", test_vector=vector, sla_latency_ms=100, **fields)
    return ServiceRecord(descriptor=desc, placement=schedule_service(desc, t0))


def test_profile_keep(make_service, t0):
    verdict = profile_service(vector_record(make_service, t0), compute_digest(b"tags"), 80)
    assert verdict.functional_ok and verdict.latency_ok
    assert verdict.recommendation is Recommendation.KEEP


def test_profile_digest_mismatch(make_service, t0):
    verdict = profile_service(vector_record(make_service, t0), compute_digest(b"other"), 1)
    assert not verdict.functional_ok
    assert verdict.recommendation is Recommendation.REPLACE


@pytest.mark.parametrize("p95,ok", [(120, True), (121, False)])
def test_profile_latency_tolerance(make_service, t0, p95, ok):
    verdict = profile_service(vector_record(make_service, t0), compute_digest(b"tags"), p95)
    assert verdict.latency_ok is ok


def test_profile_without_vector(make_service, t0):
    desc = make_service()
    record = ServiceRecord(descriptor=desc, placement=schedule_service(desc, t0))
    assert profile_service(record, None, 0).functional_ok


def test_profile_inactive(make_service, t0):
    record = vector_record(make_service, t0).model_copy(update={"state": RecordState.REPLACED})
    with pytest.raises(NotFound):
        profile_service(record, None, 0)


def test_verdict_recommendation_serializes():
    verdict = ProfileVerdict(service_id="svc", functional_ok=True, latency_ok=False)
    assert verdict.model_dump(mode="json")["recommendation"] == "Replace"


def test_apply_verdict_replaces_with_best_match(make_service, t0):
    registry = ServiceRegistry()
    registry.register_service(make_service("old", capability_tags={"video"}), t0)
    registry.register_service(make_service("wide", capability_tags={"video", "audio"}), t0)
    registry.register_service(make_service("other", capability_tags={"chat"}), t0)
    verdict = ProfileVerdict(service_id="old", functional_ok=False, latency_ok=True)
    retired = apply_verdict(registry, verdict)
    assert retired.replaced_by == "wide"
    assert registry.resolve("old").service_id == "wide"


def test_apply_verdict_without_candidate(make_service, t0):
    registry = ServiceRegistry()
    registry.register_service(make_service("old", capability_tags={"video", "audio"}), t0)
    registry.register_service(make_service("narrow", capability_tags={"video"}), t0)
    verdict = ProfileVerdict(service_id="old", functional_ok=False, latency_ok=True)
    assert apply_verdict(registry, verdict) is None
    assert registry.get("old").is_active


def test_apply_verdict_keep(make_service, t0):
    registry = ServiceRegistry()
    registry.register_service(make_service("old"), t0)
    verdict = ProfileVerdict(service_id="old", functional_ok=True, latency_ok=True)
    assert apply_verdict(registry, verdict) is None


def test_update_user_profile():
    profile = UserProfile(consumer_id="c")
    profile = update_user_profile(profile, completed("svc", 10, 5))
    assert profile.invocation_history == {"svc": 1}
    assert (profile.weight_latency, profile.weight_cost) == (0.7, 0.3)


def test_user_profiles_do_not_share_counters():
    alice = UserProfile(consumer_id="alice", weight_latency=0.5, weight_cost=0.5)
    bob = UserProfile(consumer_id="bob")
    for t in range(3):
        alice = update_user_profile(alice, completed("svc", t, 0))
    bob = update_user_profile(bob, completed("svc", 0, 0))
    assert alice.invocation_history == {"svc": 3}
    assert bob.invocation_history == {"svc": 1}
    assert alice.weight_latency == 0.5


def test_thresholds_validation():
    with pytest.raises(ValidationError):
        AnalysisThresholds(min_samples=200)
    with pytest.raises(ValidationError):
        AnalysisThresholds(tick_ms=0)
