"""
Deterministic discrete-event simulation of the three tiers on top of :mod:`simpy`.

Each node is a FIFO :class:`simpy.Resource` with ``cpu_slots`` servers. A request
arrives, resolves its service's placement, transfers its payload, queues for a slot
and executes. Dealers close on their operating hours, rejecting whatever is still
queued. Under the ``sami`` policy an analysis tick runs the arbitrator's analyzers
every ``tick_ms`` and applies the resulting re-placements.
"""

import itertools
import logging
from collections import Counter
from collections.abc import Callable, Iterable, Iterator
from enum import Enum
from typing import TYPE_CHECKING, Optional, Union

import simpy
from pydantic import BaseModel, ConfigDict, Field

from sami_broker._error import NoAdmissibleNode, NotFound
from sami_broker.analysis import (
    ContextSnapshot,
    Recommendation,
    analyze_computation,
    analyze_performance,
    apply_verdict,
    collect_context,
    profile_service,
    update_user_profile,
)
from sami_broker.billing import apply_slo_rebate, compute_charge
from sami_broker.infra import build_topology, energy_j, is_dealer_open
from sami_broker.model import (
    MINUTES_PER_DAY,
    MS_PER_MINUTE,
    PlacementDecision,
    PlacementReason,
    ResourceNode,
    ServiceDescriptor,
    Tier,
    Topology,
    expected_exec_ms,
    is_admissible,
    passes_security_gate,
    transmit_ms,
)
from sami_broker.registry import ArbitrationKind, ArbitrationLog, ServiceRecord, ServiceRegistry
from sami_broker.scheduler import (
    SchedulerWeights,
    choose_node,
    pin_to_tier,
    reschedule,
    schedule_service,
)
from sami_broker.workload import Arrival, Scenario, generate_workload, service_weights

if TYPE_CHECKING:
    from sami_broker.metrics import MetricsReport

logger = logging.getLogger(__name__)

DAY_MS = MINUTES_PER_DAY * MS_PER_MINUTE


class Outcome(str, Enum):
    COMPLETED = "Completed"
    REJECTED = "Rejected"
    DROPPED = "Dropped"


class EventKind(str, Enum):
    ARRIVAL = "Arrival"
    TRANSFER_DONE = "TransferDone"
    EXEC_DONE = "ExecDone"
    DEALER_OPEN = "DealerOpen"
    DEALER_CLOSE = "DealerClose"
    ANALYSIS_TICK = "AnalysisTick"
    MIGRATION_DONE = "MigrationDone"


class SimEvent(BaseModel):
    model_config = ConfigDict(frozen=True)

    time_ms: float
    seq: int
    kind: EventKind
    refs: tuple[str, ...] = ()


class InvocationRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    request_id: int
    service_id: str
    consumer_id: str
    node_id: str = ""
    tier: Optional[Tier] = None
    t_arrive: float
    t_start: float
    t_done: float
    transfer_ms: float = 0.0
    exec_ms: float = 0.0
    queue_ms: float = 0.0
    data_mb: float = 0.0
    energy_j: float = Field(default=0.0, ge=0)
    charge: float = 0.0
    outcome: Outcome

    @property
    def latency_ms(self) -> float:
        return self.t_done - self.t_arrive


class Policy(str, Enum):
    SAMI = "sami"
    CLOUD_ONLY = "cloud-only"
    MNO_ONLY = "mno-only"
    DEALER_ONLY = "dealer-only"

    @property
    def pinned_tier(self) -> Optional[Tier]:
        """The tier a baseline pins every service to; ``None`` for the broker itself."""
        return _PINNED_TIERS.get(self)


_PINNED_TIERS = {
    Policy.CLOUD_ONLY: Tier.CLOUD,
    Policy.MNO_ONLY: Tier.MNO,
    Policy.DEALER_ONLY: Tier.DEALER,
}


class Simulation:
    def __init__(
        self,
        scenario: Scenario,
        policy: Union[Policy, str] = Policy.SAMI,
        seed: Optional[int] = None,
        topology: Optional[Topology] = None,
        registry: Optional[ServiceRegistry] = None,
    ):
        self.scenario = scenario
        self.policy = Policy(policy)
        self.seed = scenario.seed if seed is None else seed
        self.topology = topology or build_topology(scenario)
        self.registry = registry or ServiceRegistry(vocabulary=scenario.tag_vocabulary())
        self.thresholds = scenario.thresholds
        self.weights = service_weights(scenario)
        self.env = simpy.Environment()
        self.context = ContextSnapshot(window=self.thresholds.window)
        self.profiles = {
            consumer.id: consumer.profile(scenario.weights) for consumer in scenario.consumers
        }
        self.events: list[SimEvent] = []
        self.records: list[InvocationRecord] = []
        self.arrivals: Counter[str] = Counter()
        self.reschedules: Counter[str] = Counter()
        self.security_violations: Counter[str] = Counter()
        self._slots = {
            node.id: simpy.Resource(self.env, capacity=node.cpu_slots)
            for node in self.topology.nodes
        }
        self._waiting: dict[str, dict[int, simpy.Process]] = {
            node.id: {} for node in self.topology.nodes
        }
        self._live: set[int] = set()
        self._seq = itertools.count()
        self._ready = False
        self._ran = False

    @property
    def log(self) -> ArbitrationLog:
        return self.registry.log

    @property
    def in_flight(self) -> int:
        return len(self._live)

    @property
    def wall_ms(self) -> float:
        """Simulated time of the last processed event."""
        return self.events[-1].time_ms if self.events else 0.0

    def weights_for(self, service_id: str) -> SchedulerWeights:
        return self.weights.get(service_id, self.scenario.weights)

    def setup(self) -> None:
        """Register every scenario service. Raises what registration raises."""
        if self._ready:
            return

        tier = self.policy.pinned_tier
        for desc in sorted(self.scenario.services, key=lambda s: s.id):
            weights = self.weights_for(desc.id)
            if tier is None:
                self.registry.register_service(desc, self.topology, 0.0, weights)
                continue

            try:
                self.registry.register_service(
                    desc, self.topology, 0.0, placer=_pinned(tier, weights)
                )
            except NoAdmissibleNode:
                logger.warning(
                    "No %s node for '%s'; its requests will be rejected.", tier.value, desc.id
                )

        self._ready = True

    def run(self, horizon_ms: Optional[float] = None) -> "MetricsReport":
        from sami_broker.metrics import build_report

        if self._ran:
            raise RuntimeError("A simulation runs once; build a new one to rerun.")

        self._ran = True
        self.setup()
        horizon = horizon_ms or self.scenario.horizon_ms
        scenario = self.scenario.model_copy(update={"horizon_ms": horizon})
        self.env.process(self._arrival_source(generate_workload(scenario, self.seed)))
        if self.policy is Policy.SAMI:
            self.env.process(self._analysis_loop())

        for node in self.topology.of_tier(Tier.DEALER):
            self.env.process(self._dealer_hours(node))

        self.env.run(until=horizon)
        logger.info(
            "Policy %s finished: %d arrivals, %d records, %d in flight.",
            self.policy.value,
            sum(self.arrivals.values()),
            len(self.records),
            self.in_flight,
        )
        return build_report(self)

    # Event plumbing.

    def _emit(self, kind: EventKind, *refs: str) -> None:
        event = SimEvent(time_ms=self.env.now, seq=next(self._seq), kind=kind, refs=refs)
        self.events.append(event)
        logger.debug("%.3f %s %s", event.time_ms, kind.value, " ".join(refs))

    def _arrival_source(self, arrivals: Iterator[Arrival]):
        for request_id, arrival in enumerate(arrivals):
            yield self.env.timeout(max(0.0, arrival.time_ms - self.env.now))
            self.env.process(self._request(arrival, request_id))

    # Placement resolution.

    def _select_node(self, service_id: str) -> Optional[tuple[ServiceRecord, ResourceNode]]:
        try:
            record = self.registry.resolve(service_id)
        except NotFound:
            return None

        desc = record.descriptor
        now = self.env.now
        node = self.topology.get(record.placement.node_id)
        if is_admissible(desc, node, now):
            return record, node

        weights = self.weights_for(desc.id)
        if self.policy is Policy.SAMI:
            try:
                decision = schedule_service(desc, self.topology, weights, now)
            except NoAdmissibleNode:
                logger.debug("No admissible node for '%s' at %.3f.", desc.id, now)
                return None

            target = self.topology.get(decision.node_id)
            record = self._relocate(record, target, decision.objective_ms, "re-resolved")
            return record, target

        # Baselines never leave their tier and never move the registration.
        if not passes_security_gate(desc, node):
            self.security_violations[service_id] += 1
            return None

        fallback = [n for n in self.topology.of_tier(node.tier) if is_admissible(desc, n, now)]
        if not fallback:
            return None

        return record, choose_node(desc, fallback, weights)[0]

    def _relocate(
        self, record: ServiceRecord, node: ResourceNode, response_ms: float, why: str
    ) -> ServiceRecord:
        now = self.env.now
        desc = record.descriptor
        decision = PlacementDecision(
            service_id=desc.id,
            node_id=node.id,
            tier=node.tier,
            objective_ms=response_ms,
            reason=PlacementReason.RESCHEDULE,
            decided_at=now,
            active_from=now + transmit_ms(desc.storage_demand, node.bandwidth_mbps),
        )
        return self._apply_placement(record, decision, why)

    def _apply_placement(
        self, record: ServiceRecord, decision: PlacementDecision, why: str
    ) -> ServiceRecord:
        service_id = record.service_id
        moved = f"{record.placement.node_id}->{decision.node_id} ({why})"
        updated = self.registry.update_placement(service_id, decision)
        self.log.record(self.env.now, ArbitrationKind.RESCHEDULE, service_id, moved)
        self.reschedules[service_id] += 1
        self.context = self.context.reset(service_id)
        self.env.process(self._migration(decision))
        logger.info("Moved '%s' %s at %.3f ms.", service_id, moved, self.env.now)
        return updated

    def _migration(self, decision: PlacementDecision):
        yield self.env.timeout(max(0.0, decision.active_from - self.env.now))
        self._emit(EventKind.MIGRATION_DONE, decision.service_id, decision.node_id)

    # Request lifecycle.

    def _request(self, arrival: Arrival, request_id: int):
        env = self.env
        t_arrive = env.now
        self._live.add(request_id)
        self.arrivals[arrival.service_id] += 1
        self._emit(EventKind.ARRIVAL, arrival.service_id, arrival.consumer_id, str(request_id))

        def finish(
            outcome: Outcome,
            node: Optional[ResourceNode] = None,
            desc: Optional[ServiceDescriptor] = None,
            **usage,
        ) -> None:
            record = InvocationRecord(
                request_id=request_id,
                service_id=arrival.service_id,
                consumer_id=arrival.consumer_id,
                node_id=node.id if node else "",
                tier=node.tier if node else None,
                t_arrive=t_arrive,
                t_start=usage.pop("t_start", t_arrive),
                t_done=env.now,
                outcome=outcome,
                **usage,
            )
            self._account(record, node, desc, serving)

        serving = arrival.service_id
        selected = self._select_node(arrival.service_id)
        if selected is None:
            finish(Outcome.REJECTED)
            return

        record, node = selected
        serving = record.service_id
        desc = record.descriptor
        if record.placement.active_from > env.now:
            # New starts stall until the migrated copy is live.
            yield env.timeout(record.placement.active_from - env.now)

        transfer = node.rtt_ms + transmit_ms(desc.payload_mb, node.bandwidth_mbps)
        yield env.timeout(transfer)
        self._emit(EventKind.TRANSFER_DONE, desc.id, node.id, str(request_id))
        if node.tier is Tier.DEALER and not is_dealer_open(node, env.now):
            finish(Outcome.REJECTED, node, transfer_ms=transfer)
            return

        slots = self._slots[node.id]
        queue_full = node.queue_limit is not None and len(slots.queue) >= node.queue_limit
        if queue_full and slots.count >= node.cpu_slots:
            finish(Outcome.DROPPED, node, transfer_ms=transfer)
            return

        enqueued = env.now
        with slots.request() as req:
            self._waiting[node.id][request_id] = env.active_process
            try:
                yield req
            except simpy.Interrupt:
                finish(Outcome.REJECTED, node, transfer_ms=transfer, queue_ms=env.now - enqueued)
                return
            finally:
                self._waiting[node.id].pop(request_id, None)

            t_start = env.now
            if node.tier is Tier.DEALER and not is_dealer_open(node, t_start):
                finish(Outcome.REJECTED, node, transfer_ms=transfer, queue_ms=t_start - enqueued)
                return

            execution = expected_exec_ms(desc, node) * (
                1 + node.contention * (slots.count - 1) / node.cpu_slots
            )
            yield env.timeout(execution)
            self._emit(EventKind.EXEC_DONE, desc.id, node.id, str(request_id))

        finish(
            Outcome.COMPLETED,
            node,
            desc,
            t_start=t_start,
            transfer_ms=transfer,
            exec_ms=execution,
            queue_ms=t_start - enqueued,
            data_mb=desc.payload_mb,
        )

    def _account(
        self,
        record: InvocationRecord,
        node: Optional[ResourceNode],
        desc: Optional[ServiceDescriptor],
        serving: str,
    ) -> None:
        """Metrics stay keyed by the requested id; runtime context follows the serving record."""
        if record.outcome is Outcome.COMPLETED and node is not None and desc is not None:
            record = record.model_copy(update=self._usage_costs(record, desc, node))

        self.records.append(record)
        self._live.discard(record.request_id)
        in_flight = self._slots[node.id].count if node else None
        slots = node.cpu_slots if node else None
        observed = record.model_copy(update={"service_id": serving})
        self.context = collect_context(observed, self.context, in_flight, slots)
        if record.consumer_id in self.profiles:
            profile = self.profiles[record.consumer_id]
            self.profiles[record.consumer_id] = update_user_profile(profile, record)

    def _usage_costs(
        self, record: InvocationRecord, desc: ServiceDescriptor, node: ResourceNode
    ) -> dict[str, float]:
        latency = record.latency_ms
        wait = latency - transmit_ms(record.data_mb, node.bandwidth_mbps)
        charge = apply_slo_rebate(
            compute_charge(record, node.tariff),
            node.qos,
            latency,
            desc.sla_latency_ms,
            self.thresholds.rebate_frac,
        )
        energy = energy_j(
            record.data_mb, node.bandwidth_mbps, max(0.0, wait), self.scenario.energy
        )
        return {"charge": charge, "energy_j": energy}

    # Dealer availability.

    def _dealer_hours(self, node: ResourceNode):
        hours = node.open_hours
        if hours is None or (hours.open_minute == 0 and hours.close_minute == MINUTES_PER_DAY):
            return

        while True:
            now = self.env.now
            day = now // DAY_MS * DAY_MS
            opening = day + hours.open_minute * MS_PER_MINUTE
            closing = day + hours.close_minute * MS_PER_MINUTE
            if now < opening:
                yield self.env.timeout(opening - now)
                self._open_dealer(node)
            elif now < closing:
                yield self.env.timeout(closing - now)
                self._close_dealer(node)
            else:
                yield self.env.timeout(opening + DAY_MS - now)
                self._open_dealer(node)

    def _close_dealer(self, node: ResourceNode) -> None:
        self._emit(EventKind.DEALER_CLOSE, node.id)
        waiting = sorted(self._waiting[node.id].items())
        for _, process in waiting:
            process.interrupt("dealer closed")

        if waiting:
            logger.info("Dealer %s closed with %d queued requests.", node.id, len(waiting))

    def _open_dealer(self, node: ResourceNode) -> None:
        self._emit(EventKind.DEALER_OPEN, node.id)
        if self.policy is not Policy.SAMI:
            return

        now = self.env.now
        for record in self.registry.active_records():
            desc = record.descriptor
            if not desc.latency_sensitive or record.placement.tier is Tier.DEALER:
                continue

            try:
                decision = schedule_service(desc, self.topology, self.weights_for(desc.id), now)
            except NoAdmissibleNode:
                continue

            if decision.tier is Tier.DEALER and decision.node_id != record.placement.node_id:
                target = self.topology.get(decision.node_id)
                self._relocate(record, target, decision.objective_ms, f"{node.id} opened")

    # Arbitrator.

    def _analysis_loop(self):
        while True:
            yield self.env.timeout(self.thresholds.tick_ms)
            self._emit(EventKind.ANALYSIS_TICK)
            for record in self.registry.active_records():
                self._analyze(record)

    def _analyze(self, record: ServiceRecord) -> None:
        now = self.env.now
        service_id = record.service_id
        self.log.record(now, ArbitrationKind.ANALYSIS, service_id)
        if record.placement.active_from > now:
            return

        desc = record.descriptor
        node = self.topology.get(record.placement.node_id)
        window = self.context.service(service_id)
        advice = analyze_performance(self.context, record, self.topology, self.thresholds, now)
        expected = expected_exec_ms(desc, node)
        if advice is None and expected > 0:
            advice = analyze_computation(
                window.exec_ms, expected, self.thresholds.k, self.thresholds.m, service_id
            )

        if advice is not None:
            weights = self.weights_for(service_id)
            try:
                decision = reschedule(record, advice, self.topology, weights, now)
            except NoAdmissibleNode as err:
                logger.warning("Keeping '%s' where it is: %s", service_id, err)
            else:
                if decision != record.placement:
                    self._apply_placement(record, decision, advice.trigger.value)
                    return

        self._profile(record)

    def _profile(self, record: ServiceRecord) -> None:
        window = self.context.service(record.service_id)
        if len(window.latencies) < self.thresholds.min_samples:
            return

        vector = record.descriptor.test_vector
        expected = vector.digest if vector else None
        observed = self.scenario.faults.get(record.service_id, expected)
        verdict = profile_service(record, observed, window.p95_latency_ms, self.thresholds.tol)
        if verdict.recommendation is Recommendation.REPLACE:
            apply_verdict(self.registry, verdict)


def _pinned(tier: Tier, weights: SchedulerWeights) -> Callable:
    def placer(desc: ServiceDescriptor, topology: Topology, t: float) -> PlacementDecision:
        return pin_to_tier(desc, topology, tier, weights, t)

    return placer


def run(
    scenario: Scenario,
    policy: Union[Policy, str] = Policy.SAMI,
    seed: Optional[int] = None,
    horizon_ms: Optional[float] = None,
    topology: Optional[Topology] = None,
    registry: Optional[ServiceRegistry] = None,
) -> "MetricsReport":
    return Simulation(scenario, policy, seed, topology, registry).run(horizon_ms)


def run_policies(
    scenario: Scenario, policies: Iterable[Policy], seed: Optional[int] = None
) -> list["MetricsReport"]:
    return [run(scenario, policy, seed) for policy in policies]
