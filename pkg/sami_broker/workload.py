"""
Scenario files and synthetic workload.

A scenario is one UTF-8 JSON document (see ``docs/scenario.schema``); unknown fields
are rejected. Arrivals are Poisson per (consumer, service) pair, each pair drawing
from its own SplitMix64 stream seeded with ``seed ^ stream_index`` so that editing
one pair never perturbs another's arrivals.
"""

import heapq
import json
import math
from collections.abc import Iterable, Iterator
from importlib.resources import files
from pathlib import Path
from typing import TYPE_CHECKING, Annotated, Any, NamedTuple, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from typing_extensions import Self

from sami_broker._error import (
    ConfigError,
    DuplicateIdError,
    ParseError,
    ScenarioValidationError,
    UnknownReferenceError,
    errors_from_validation,
)
from sami_broker.analysis import AnalysisThresholds
from sami_broker.digest import Digest
from sami_broker.infra import EnergyModel, TopologyConfig, check_topology
from sami_broker.model import ServiceDescriptor, UserProfile
from sami_broker.scheduler import SchedulerWeights
from sami_broker.standards import TagVocabulary

if TYPE_CHECKING:
    from pydantic_core import PydanticCustomError

MASK64 = (1 << 64) - 1

Rate = Annotated[float, Field(ge=0)]


class ConsumerConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    id: str
    rates: dict[str, Rate] = {}
    """Arrival rate in requests per second, by service id."""

    weights: Optional[SchedulerWeights] = None
    """Overrides the scenario's scheduler weights for services this consumer drives."""

    def profile(self, defaults: SchedulerWeights) -> UserProfile:
        weights = self.weights or defaults
        return UserProfile(
            consumer_id=self.id, weight_latency=weights.w_latency, weight_cost=weights.w_cost
        )


def reference_problems(
    ids: dict[str, list[str]], referenced: Iterable[str]
) -> list["PydanticCustomError"]:
    """Duplicate ids per kind, then service references that name no service."""
    problems = [
        DuplicateIdError(kind, duplicates)
        for kind, values in ids.items()
        if (duplicates := sorted({i for i in values if values.count(i) > 1}))
    ]
    if unknown := sorted(set(referenced) - set(ids.get("service", []))):
        problems.append(UnknownReferenceError("service", unknown))

    return problems


class Scenario(TopologyConfig):
    name: str = "scenario"
    seed: int = 0
    horizon_ms: float = Field(gt=0)
    services: list[ServiceDescriptor] = []
    consumers: list[ConsumerConfig] = []
    thresholds: AnalysisThresholds = AnalysisThresholds()
    weights: SchedulerWeights = SchedulerWeights()
    energy: EnergyModel = EnergyModel()
    vocabulary: Optional[str] = None
    """Tag vocabulary file; relative paths resolve against the scenario file."""

    faults: dict[str, Digest] = {}
    """Observed output digest per service id, for services that drifted from their vector."""

    @model_validator(mode="after")
    def _references_resolve(self) -> Self:
        ids = {
            "node": [n.id for n in self.nodes],
            "service": [s.id for s in self.services],
            "consumer": [c.id for c in self.consumers],
        }
        referenced = [sid for consumer in self.consumers for sid in consumer.rates]
        if problems := reference_problems(ids, [*referenced, *self.faults]):
            raise problems[0]

        return self

    def service(self, service_id: str) -> ServiceDescriptor:
        return next(service for service in self.services if service.id == service_id)

    def tag_vocabulary(self) -> TagVocabulary:
        if self.vocabulary is None:
            return TagVocabulary.default()

        return TagVocabulary.from_file(self.vocabulary)


def load_scenario(path: Union[str, Path]) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ParseError(f"Cannot read scenario '{path}': {err.strerror}") from err

    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ParseError(f"{path}:{err.lineno}:{err.colno}: {err.msg}") from err

    return parse_scenario(raw, base_dir=path.parent)


def parse_scenario(raw: Any, base_dir: Optional[Path] = None) -> Scenario:
    """Validate a decoded scenario document, reporting every error at once."""
    try:
        scenario = Scenario.model_validate(raw)
    except ValidationError as err:
        raise ScenarioValidationError(_every_error(raw, err)) from err

    if errors := check_topology(scenario):
        raise ScenarioValidationError(errors)

    if scenario.vocabulary and base_dir is not None:
        location = Path(scenario.vocabulary)
        if not location.is_absolute():
            resolved = str((base_dir / location).resolve())
            scenario = scenario.model_copy(update={"vocabulary": resolved})

    return scenario


def _every_error(raw: Any, err: ValidationError) -> list[ConfigError]:
    """
    Field errors stop pydantic before the cross-field checks run, so those are
    repeated over whatever parts of the document still validate.
    """
    if not isinstance(raw, dict):
        return errors_from_validation(err)

    # Reference problems are recomputed from the raw ids below.
    errors = [e for e in errors_from_validation(err) if e.path != "scenario"]

    def blocks(key: str) -> list[dict]:
        value = raw.get(key)
        return [b for b in value if isinstance(b, dict)] if isinstance(value, list) else []

    def ids(key: str) -> list[str]:
        return [b["id"] for b in blocks(key) if isinstance(b.get("id"), str)]

    referenced = [
        sid
        for consumer in blocks("consumers")
        if isinstance(consumer.get("rates"), dict)
        for sid in consumer["rates"]
    ]
    if isinstance(raw.get("faults"), dict):
        referenced.extend(raw["faults"])

    # Node ids are checked with the node blocks, which report the exact path.
    problems = reference_problems(
        {"service": ids("services"), "consumer": ids("consumers")}, referenced
    )
    errors.extend(ConfigError("scenario", problem.message()) for problem in problems)

    topology = {key: raw[key] for key in ("nodes", "tariffs") if key in raw}
    try:
        config = TopologyConfig.model_validate(topology)
    except ValidationError:
        # Already among the field errors.
        return errors

    return [*errors, *check_topology(config)]


def packaged_scenarios() -> list[str]:
    """Names of the scenarios shipped with the package."""
    folder = files("sami_broker") / "data" / "scenarios"
    return sorted(
        entry.name[: -len(".json")] for entry in folder.iterdir() if entry.name.endswith(".json")
    )


def load_packaged_scenario(name: str) -> Scenario:
    resource = files("sami_broker") / "data" / "scenarios" / f"{name}.json"
    try:
        raw = json.loads(resource.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        raise ParseError(f"Cannot load shipped scenario '{name}': {err}") from err

    return parse_scenario(raw)


def dump_scenario(scenario: Scenario) -> str:
    return json.dumps(scenario.model_dump(mode="json"), indent=2) + "\n"


def scenario_schema() -> dict[str, Any]:
    return Scenario.model_json_schema()


def service_weights(scenario: Scenario) -> dict[str, SchedulerWeights]:
    """
    Each service is placed with the weights of its primary consumer, the one with
    the highest arrival rate (ties to the lower consumer id), when that consumer
    overrides weights. Everything else uses the scenario defaults.
    """
    weights = {}
    for service in scenario.services:
        drivers = [c for c in scenario.consumers if c.rates.get(service.id, 0) > 0]
        primary = min(drivers, key=lambda c: (-c.rates[service.id], c.id), default=None)
        if primary is not None and primary.weights is not None:
            weights[service.id] = primary.weights
        else:
            weights[service.id] = scenario.weights

    return weights


class SplitMix64:
    """64-bit mixing generator; identical streams in any language."""

    GAMMA = 0x9E3779B97F4A7C15

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + self.GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def next_float(self) -> float:
        """Uniform on [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * 2.0**-53


class Arrival(NamedTuple):
    time_ms: float
    stream: int
    consumer_id: str
    service_id: str


def stream_pairs(scenario: Scenario) -> list[tuple[str, str]]:
    """Every (consumer, service) pair in stream-index order."""
    return sorted(
        (consumer.id, service_id)
        for consumer in scenario.consumers
        for service_id in consumer.rates
    )


def poisson_stream(rate_per_s: float, horizon_ms: float, rng: SplitMix64) -> Iterator[float]:
    """Arrival times in ms, strictly increasing, ending before ``horizon_ms``."""
    if rate_per_s <= 0:
        return

    per_ms = rate_per_s / 1000
    t = 0.0
    while True:
        gap = 0.0
        while gap <= 0:
            gap = -math.log(1.0 - rng.next_float()) / per_ms

        t += gap
        if t >= horizon_ms:
            return

        yield t


def generate_workload(scenario: Scenario, seed: Optional[int] = None) -> Iterator[Arrival]:
    seed = scenario.seed if seed is None else seed
    rates = {(c.id, sid): rate for c in scenario.consumers for sid, rate in c.rates.items()}
    streams = []
    for index, (consumer_id, service_id) in enumerate(stream_pairs(scenario)):
        rng = SplitMix64(seed ^ index)
        times = poisson_stream(rates[consumer_id, service_id], scenario.horizon_ms, rng)
        streams.append(_tagged(times, index, consumer_id, service_id))

    return heapq.merge(*streams)


def _tagged(times: Iterator[float], index: int, consumer_id: str, service_id: str):
    for t in times:
        yield Arrival(t, index, consumer_id, service_id)
