"""
Run metrics and their file formats.

``metrics.csv`` and ``compare.csv`` share :data:`COLUMNS`: one row per service, then
an ``ALL`` row per policy carrying the run-level counters. Floats are written with six
significant digits and nothing time-of-day dependent is recorded, so identical inputs
give byte-identical files. Column meanings are documented in ``docs/metrics.md``.
"""

import csv
import io
import json
from collections.abc import Iterable, Sequence
from pathlib import Path
from statistics import fmean
from typing import TYPE_CHECKING, Any, Optional, Union

from pydantic import BaseModel, ConfigDict

from sami_broker._error import NotFound
from sami_broker.analysis import nearest_rank
from sami_broker.model import CloudClass, Tier
from sami_broker.registry import ArbitrationKind
from sami_broker.simulation import InvocationRecord, Outcome

if TYPE_CHECKING:
    from sami_broker.simulation import Simulation

SUMMARY_ID = "ALL"

COLUMNS = (
    "policy",
    "seed",
    "service_id",
    "tier",
    "invocations",
    "completed",
    "rejected",
    "dropped",
    "mean_latency_ms",
    "p95_latency_ms",
    "energy_j_total",
    "charge_total",
    "reschedules",
    "arbitration_events",
    "security_violations",
    "wall_ms",
)


def format_float(value: float) -> str:
    return f"{value:.6g}"


class ServiceRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    service_id: str
    tier: Optional[Tier] = None
    invocations: int = 0
    completed: int = 0
    rejected: int = 0
    dropped: int = 0
    mean_latency_ms: float = 0.0
    p95_latency_ms: float = 0.0
    energy_j_total: float = 0.0
    charge_total: float = 0.0
    reschedules: int = 0
    arbitration_events: int = 0
    security_violations: int = 0

    @classmethod
    def tally(
        cls,
        service_id: str,
        tier: Optional[Tier],
        arrivals: int,
        records: Sequence[InvocationRecord],
        **counters: int,
    ) -> "ServiceRow":
        latencies = [r.latency_ms for r in records if r.outcome is Outcome.COMPLETED]
        return cls(
            service_id=service_id,
            tier=tier,
            invocations=arrivals,
            completed=len(latencies),
            rejected=sum(1 for r in records if r.outcome is Outcome.REJECTED),
            dropped=sum(1 for r in records if r.outcome is Outcome.DROPPED),
            mean_latency_ms=fmean(latencies) if latencies else 0.0,
            p95_latency_ms=nearest_rank(latencies, 95),
            energy_j_total=sum(r.energy_j for r in records),
            charge_total=sum(r.charge for r in records),
            **counters,
        )


class RunSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    policy: str
    seed: int
    totals: ServiceRow
    in_flight: int = 0
    wall_ms: float = 0.0

    @property
    def arrivals(self) -> int:
        return self.totals.invocations

    @property
    def arbitration_events(self) -> int:
        return self.totals.arbitration_events

    @property
    def security_violations(self) -> int:
        return self.totals.security_violations


class NodeSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    node_id: str
    tier: Tier
    cloud_class: Optional[CloudClass] = None
    cloud_score: Optional[float] = None
    invocations: int = 0


class MetricsReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    run: RunSummary
    services: tuple[ServiceRow, ...] = ()
    nodes: tuple[NodeSummary, ...] = ()
    consumers: dict[str, dict[str, int]] = {}

    @property
    def policy(self) -> str:
        return self.run.policy

    def service(self, service_id: str) -> ServiceRow:
        for row in self.services:
            if row.service_id == service_id:
                return row

        raise NotFound(service_id)

    def rows(self) -> list[list[str]]:
        """CSV rows in :data:`COLUMNS` order, service rows first, then ``ALL``."""
        lead = [self.run.policy, str(self.run.seed)]
        rows = [lead + _row_cells(row) + [""] for row in self.services]
        rows.append(lead + _row_cells(self.run.totals) + [format_float(self.run.wall_ms)])
        return rows

    def to_json(self) -> dict[str, Any]:
        return {
            "policy": self.run.policy,
            "seed": self.run.seed,
            "arrivals": self.run.arrivals,
            "in_flight": self.run.in_flight,
            "arbitration_events": self.run.arbitration_events,
            "security_violations": self.run.security_violations,
            "wall_ms": self.run.wall_ms,
            "totals": self.run.totals.model_dump(mode="json"),
            "services": [row.model_dump(mode="json") for row in self.services],
            "nodes": [node.model_dump(mode="json") for node in self.nodes],
            "consumers": {
                cid: dict(sorted(history.items()))
                for cid, history in sorted(self.consumers.items())
            },
        }


def _row_cells(row: ServiceRow) -> list[str]:
    return [
        row.service_id,
        row.tier.value if row.tier else "",
        str(row.invocations),
        str(row.completed),
        str(row.rejected),
        str(row.dropped),
        format_float(row.mean_latency_ms),
        format_float(row.p95_latency_ms),
        format_float(row.energy_j_total),
        format_float(row.charge_total),
        str(row.reschedules),
        str(row.arbitration_events),
        str(row.security_violations),
    ]


def build_report(sim: "Simulation") -> MetricsReport:
    log = sim.log
    by_service: dict[str, list[InvocationRecord]] = {}
    for record in sim.records:
        by_service.setdefault(record.service_id, []).append(record)

    rows = []
    for desc in sorted(sim.scenario.services, key=lambda s: s.id):
        try:
            tier: Optional[Tier] = sim.registry.get(desc.id).placement.tier
        except NotFound:
            tier = None

        rows.append(
            ServiceRow.tally(
                desc.id,
                tier,
                sim.arrivals[desc.id],
                by_service.get(desc.id, []),
                reschedules=sim.reschedules[desc.id],
                arbitration_events=log.count(service_id=desc.id),
                security_violations=sim.security_violations[desc.id],
            )
        )

    totals = ServiceRow.tally(
        SUMMARY_ID,
        None,
        sum(sim.arrivals.values()),
        sim.records,
        reschedules=log.count(ArbitrationKind.RESCHEDULE),
        arbitration_events=len(log),
        security_violations=sum(sim.security_violations.values()),
    )
    served: dict[str, int] = {}
    for record in sim.records:
        if record.outcome is Outcome.COMPLETED:
            served[record.node_id] = served.get(record.node_id, 0) + 1

    nodes = tuple(
        NodeSummary(
            node_id=node.id,
            tier=node.tier,
            cloud_class=node.cloud_class,
            cloud_score=node.cloud_score,
            invocations=served.get(node.id, 0),
        )
        for node in sim.topology.nodes
    )
    return MetricsReport(
        run=RunSummary(
            policy=sim.policy.value,
            seed=sim.seed,
            totals=totals,
            in_flight=sim.in_flight,
            wall_ms=sim.wall_ms,
        ),
        services=tuple(rows),
        nodes=nodes,
        consumers={cid: dict(p.invocation_history) for cid, p in sim.profiles.items()},
    )


def render_csv(reports: Iterable[MetricsReport]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(COLUMNS)
    for report in reports:
        writer.writerows(report.rows())

    return buffer.getvalue()


def render_json(reports: Sequence[MetricsReport]) -> str:
    payload: Union[dict, list] = [r.to_json() for r in reports]
    if len(reports) == 1:
        payload = payload[0]

    return json.dumps(payload, indent=2) + "\n"


def write_reports(
    reports: Sequence[MetricsReport], out_dir: Union[str, Path], stem: str, fmt: str = "both"
) -> list[Path]:
    """Write ``<stem>.csv`` and/or ``<stem>.json`` under ``out_dir``; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt in ("csv", "both"):
        path = out / f"{stem}.csv"
        _write(path, render_csv(reports))
        written.append(path)
    if fmt in ("json", "both"):
        path = out / f"{stem}.json"
        _write(path, render_json(reports))
        written.append(path)

    return written


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as stream:
        stream.write(text)
