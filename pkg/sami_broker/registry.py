"""
Service registry: registration, discovery, matching, composition and replacement
of service records, plus the arbitration journal that measures broker overhead.
"""

import logging
import threading
from collections.abc import Callable, Iterable, Mapping
from enum import Enum
from typing import Any, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_serializer

from sami_broker._error import (
    ConfigError,
    DuplicateService,
    IncompatibleReplacement,
    NotFound,
    SamiError,
    StandardViolation,
    UncoverableGoal,
    errors_from_validation,
)
from sami_broker.model import PlacementDecision, ServiceDescriptor, Topology
from sami_broker.scheduler import SchedulerWeights, schedule_service
from sami_broker.standards import SemVer, TagVocabulary, enforce_standard

logger = logging.getLogger(__name__)

Placer = Callable[[ServiceDescriptor, Topology, float], PlacementDecision]


class RecordState(str, Enum):
    ACTIVE = "Active"
    REPLACED = "Replaced"
    DEREGISTERED = "Deregistered"


class ServiceRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    descriptor: ServiceDescriptor
    placement: PlacementDecision
    registered_at: float = 0.0
    state: RecordState = RecordState.ACTIVE
    replaced_by: Optional[str] = None
    """Forwarding link set when the record is Replaced."""

    @property
    def service_id(self) -> str:
        return self.descriptor.id

    @property
    def name(self) -> str:
        return self.descriptor.name

    @property
    def address(self) -> str:
        """The provider address handed back on discovery."""
        return self.placement.node_id

    @property
    def is_active(self) -> bool:
        return self.state is RecordState.ACTIVE


class FunctionalSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    required_tags: frozenset[str] = Field(min_length=1)
    keywords: tuple[str, ...] = ()

    @field_serializer("required_tags")
    def _sorted_tags(self, tags: frozenset[str]) -> list[str]:
        return sorted(tags)


class CompositePlan(BaseModel):
    model_config = ConfigDict(frozen=True)

    steps: tuple[str, ...] = ()
    covered_tags: frozenset[str] = frozenset()
    residual_tags: frozenset[str] = frozenset()

    @field_serializer("covered_tags", "residual_tags")
    def _sorted_tags(self, tags: frozenset[str]) -> list[str]:
        return sorted(tags)

    @property
    def complete(self) -> bool:
        return not self.residual_tags


class ServiceMatch(BaseModel):
    model_config = ConfigDict(frozen=True)

    record: ServiceRecord
    score: float


class ArbitrationKind(str, Enum):
    REGISTRATION = "Registration"
    ANALYSIS = "Analysis"
    RESCHEDULE = "Reschedule"


class ArbitrationEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    time_ms: float
    kind: ArbitrationKind
    service_id: str
    detail: str = ""


class ArbitrationLog:
    """Append-only journal of arbitrator work, the recount source for overhead metrics."""

    def __init__(self):
        self._entries: list[ArbitrationEntry] = []
        self._lock = threading.Lock()

    def record(
        self, time_ms: float, kind: ArbitrationKind, service_id: str, detail: str = ""
    ) -> ArbitrationEntry:
        entry = ArbitrationEntry(time_ms=time_ms, kind=kind, service_id=service_id, detail=detail)
        with self._lock:
            self._entries.append(entry)

        return entry

    @property
    def entries(self) -> tuple[ArbitrationEntry, ...]:
        return tuple(self._entries)

    def count(
        self, kind: Optional[ArbitrationKind] = None, service_id: Optional[str] = None
    ) -> int:
        return sum(
            1
            for entry in self._entries
            if (kind is None or entry.kind is kind)
            and (service_id is None or entry.service_id == service_id)
        )

    def __len__(self) -> int:
        return len(self._entries)


class ServiceRegistry:
    """
    Single logical store of service records. Reads may run concurrently; every
    mutation goes through one lock, and stored records are immutable snapshots.
    """

    def __init__(
        self, vocabulary: Optional[TagVocabulary] = None, log: Optional[ArbitrationLog] = None
    ):
        self.vocabulary = vocabulary or TagVocabulary.default()
        self.log = log or ArbitrationLog()
        self._records: dict[str, ServiceRecord] = {}
        self._lock = threading.RLock()

    @property
    def records(self) -> tuple[ServiceRecord, ...]:
        return tuple(self._records[key] for key in sorted(self._records))

    def active_records(self) -> tuple[ServiceRecord, ...]:
        return tuple(record for record in self.records if record.is_active)

    def get(self, service_id: str) -> ServiceRecord:
        """The record for ``service_id`` in any state."""
        if service_id not in self._records:
            raise NotFound(service_id)

        return self._records[service_id]

    def _active(self, service_id: str) -> ServiceRecord:
        record = self._records.get(service_id)
        if record is None or not record.is_active:
            raise NotFound(service_id)

        return record

    def register_service(
        self,
        desc: ServiceDescriptor,
        topology: Topology,
        t: float = 0.0,
        weights: Optional[SchedulerWeights] = None,
        placer: Optional[Placer] = None,
    ) -> ServiceRecord:
        with self._lock:
            result = enforce_standard(desc, self.vocabulary)
            if not result.ok:
                raise StandardViolation(result.violations)

            clash = desc.id in self._records or any(
                record.name == desc.name and record.descriptor.version == desc.version
                for record in self.active_records()
            )
            if clash:
                raise DuplicateService(desc.name, desc.version)

            if placer is None:
                decision = schedule_service(desc, topology, weights, t)
            else:
                decision = placer(desc, topology, t)

            record = ServiceRecord(descriptor=desc, placement=decision, registered_at=t)
            self._records[desc.id] = record
            placed_on = f"{decision.tier.value}:{decision.node_id}"
            self.log.record(t, ArbitrationKind.REGISTRATION, desc.id, placed_on)

        logger.info(
            "Registered '%s' %s on %s (%s).",
            desc.name,
            desc.version,
            decision.node_id,
            decision.reason.value,
        )
        return record

    def resolve(self, service_id: str) -> ServiceRecord:
        """Follow replacement links from ``service_id`` to the live successor."""
        record = self.get(service_id)
        while record.state is RecordState.REPLACED and record.replaced_by:
            record = self.get(record.replaced_by)

        if not record.is_active:
            raise NotFound(service_id)

        return record

    def discover_service(self, name: str, version: Optional[str] = None) -> ServiceRecord:
        def matching(state: RecordState) -> list[ServiceRecord]:
            return [
                record
                for record in self.records
                if record.state is state
                and record.name == name
                and (version is None or record.descriptor.version == version)
            ]

        if active := matching(RecordState.ACTIVE):
            return max(active, key=lambda r: SemVer.parse(r.descriptor.version))

        # A replaced name forwards to its successor.
        if replaced := matching(RecordState.REPLACED):
            newest = max(replaced, key=lambda r: SemVer.parse(r.descriptor.version))
            return self.resolve(newest.service_id)

        key = name if version is None else f"{name}@{version}"
        raise NotFound(key)

    def match_services(self, query: FunctionalSpec) -> list[ServiceMatch]:
        keywords = [keyword.lower() for keyword in query.keywords]
        matches = []
        for record in self.active_records():
            tags = record.descriptor.capability_tags
            overlap = len(query.required_tags & tags)
            if not overlap:
                continue

            description = record.descriptor.description.lower()
            if keywords and not any(keyword in description for keyword in keywords):
                continue

            score = overlap / len(query.required_tags | tags)
            matches.append(ServiceMatch(record=record, score=score))

        return sorted(matches, key=lambda m: (-m.score, m.record.name, m.record.service_id))

    def compose_services(self, goal: FunctionalSpec) -> CompositePlan:
        """Greedy set cover over Active records; ties go to the lower name."""
        uncovered = set(goal.required_tags)
        steps: list[str] = []
        pool = list(self.active_records())
        while uncovered and pool:
            best = min(
                pool,
                key=lambda r: (
                    -len(r.descriptor.capability_tags & uncovered),
                    r.name,
                    r.service_id,
                ),
            )
            if not best.descriptor.capability_tags & uncovered:
                break

            steps.append(best.service_id)
            uncovered -= best.descriptor.capability_tags
            pool.remove(best)

        plan = CompositePlan(
            steps=tuple(steps),
            covered_tags=goal.required_tags - uncovered,
            residual_tags=frozenset(uncovered),
        )
        if uncovered:
            raise UncoverableGoal(uncovered, plan)

        return plan

    def replace_service(self, old_id: str, new_id: str) -> ServiceRecord:
        with self._lock:
            old = self._active(old_id)
            new = self._active(new_id)
            if old_id == new_id:
                raise IncompatibleReplacement(old_id, new_id, ())

            # The successor is re-checked against the current standard.
            result = enforce_standard(new.descriptor, self.vocabulary)
            if not result.ok:
                raise StandardViolation(result.violations)

            missing = old.descriptor.capability_tags - new.descriptor.capability_tags
            if missing:
                raise IncompatibleReplacement(old_id, new_id, missing)

            replaced = old.model_copy(
                update={"state": RecordState.REPLACED, "replaced_by": new_id}
            )
            self._records[old_id] = replaced

        logger.info("Replaced '%s' with '%s'.", old_id, new_id)
        return replaced

    def deregister_service(self, service_id: str) -> ServiceRecord:
        with self._lock:
            record = self._active(service_id)
            retired = record.model_copy(update={"state": RecordState.DEREGISTERED})
            self._records[service_id] = retired

        logger.info("Deregistered '%s'.", service_id)
        return retired

    def update_placement(self, service_id: str, decision: PlacementDecision) -> ServiceRecord:
        with self._lock:
            record = self._active(service_id)
            updated = record.model_copy(update={"placement": decision})
            self._records[service_id] = updated

        return updated


# Request envelope


class RequestEnvelope(BaseModel):
    model_config = ConfigDict(extra="forbid")

    op: Literal["register", "discover", "match", "compose", "validate"]
    body: dict[str, Any] = {}


class DiscoverBody(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    version: Optional[str] = None


def _record_summary(record: ServiceRecord) -> dict[str, Any]:
    return {
        "service_id": record.service_id,
        "name": record.name,
        "version": record.descriptor.version,
        "address": record.address,
        "tier": record.placement.tier.value,
        "state": record.state.value,
    }


def _describe(err: Exception) -> dict[str, Any]:
    error: dict[str, Any] = {"type": type(err).__name__, "message": str(err)}
    if isinstance(err, StandardViolation):
        error["violations"] = [v.model_dump() for v in err.violations]
    elif isinstance(err, UncoverableGoal):
        error["residual_tags"] = sorted(err.residual_tags)
    elif isinstance(err, ValidationError):
        error["message"] = "invalid request"
        error["errors"] = [
            {"path": e.path, "message": e.message} for e in errors_from_validation(err)
        ]

    return error


def _register(registry, body, topology, t):
    if topology is None:
        raise ConfigError("topology", "registration needs a topology")

    desc = ServiceDescriptor.model_validate(body)
    return _record_summary(registry.register_service(desc, topology, t))


def _discover(registry, body, topology, t):
    query = DiscoverBody.model_validate(body)
    return _record_summary(registry.discover_service(query.name, query.version))


def _match(registry, body, topology, t):
    query = FunctionalSpec.model_validate(body)
    return [
        {**_record_summary(match.record), "score": match.score}
        for match in registry.match_services(query)
    ]


def _compose(registry, body, topology, t):
    return registry.compose_services(FunctionalSpec.model_validate(body)).model_dump(mode="json")


def _validate(registry, body, topology, t):
    desc = ServiceDescriptor.model_validate(body)
    result = enforce_standard(desc, registry.vocabulary)
    if not result.ok:
        raise StandardViolation(result.violations)

    return {"service_id": desc.id, "violations": []}


_HANDLERS = {
    "register": _register,
    "discover": _discover,
    "match": _match,
    "compose": _compose,
    "validate": _validate,
}


def handle_request(
    registry: ServiceRegistry,
    envelope: Mapping[str, Any],
    topology: Optional[Topology] = None,
    t: float = 0.0,
) -> dict[str, Any]:
    """
    Serve one request envelope ``{"op": ..., "body": {...}}``. Never raises for
    request-level problems; the response carries ``ok`` and either ``result`` or
    ``error``.
    """
    try:
        request = RequestEnvelope.model_validate(envelope)
        result = _HANDLERS[request.op](registry, request.body, topology, t)
    except (SamiError, ValidationError) as err:
        return {"ok": False, "error": _describe(err)}

    return {"ok": True, "result": result}


def validate_descriptors(
    registry: ServiceRegistry, descriptors: Iterable[Mapping[str, Any]]
) -> list[dict[str, Any]]:
    """Run the ``validate`` op over every descriptor and keep each response."""
    return [
        handle_request(registry, {"op": "validate", "body": dict(body)}) for body in descriptors
    ]
