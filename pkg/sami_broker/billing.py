"""
Pay-as-you-use charging with a QoS-sensitive SLO rebate.

Bandwidth capacity and security degree only reach prices through the tier default
tariffs; jitter and session re-establishment delay feed the rebate.
"""

from typing import TYPE_CHECKING

from pydantic import BaseModel, ConfigDict, Field

from sami_broker._error import NotBillable

if TYPE_CHECKING:
    from sami_broker.model import ResourceNode, ServiceDescriptor, Tier
    from sami_broker.simulation import InvocationRecord

DEFAULT_REBATE_FRAC = 0.1


class Tariff(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    base_fee: float = Field(default=0.0, ge=0)
    """Currency units per invocation."""

    cpu_rate: float = Field(default=0.0, ge=0)
    """Currency units per cpu-second."""

    data_rate: float = Field(default=0.0, ge=0)
    """Currency units per MB moved."""

    def charge_for(self, exec_ms: float, data_mb: float) -> float:
        return self.base_fee + self.cpu_rate * exec_ms / 1000 + self.data_rate * data_mb


class QoSParameters(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    wan_delay_ms: float = Field(default=0.0, ge=0)
    jitter_ms: float = Field(default=0.0, ge=0)
    session_reestablish_ms: float = Field(default=0.0, ge=0)
    bandwidth_mbps: float = Field(default=0.0, ge=0)
    security_degree: float = Field(default=0.0, ge=0, le=1)


def default_tariffs() -> dict["Tier", Tariff]:
    """Dealer < MNO < Cloud base fees; clouds sell cheaper cpu-seconds."""
    from sami_broker.model import Tier

    return {
        Tier.DEALER: Tariff(base_fee=0.5, cpu_rate=0.2, data_rate=0.01),
        Tier.MNO: Tariff(base_fee=1.0, cpu_rate=0.3, data_rate=0.02),
        Tier.CLOUD: Tariff(base_fee=2.0, cpu_rate=0.1, data_rate=0.05),
    }


def compute_charge(inv: "InvocationRecord", tariff: Tariff) -> float:
    from sami_broker.simulation import Outcome

    if inv.outcome is not Outcome.COMPLETED:
        raise NotBillable(inv.request_id, inv.outcome.value)

    return tariff.charge_for(inv.exec_ms, inv.data_mb)


def projected_charge(service: "ServiceDescriptor", node: "ResourceNode") -> float:
    from sami_broker.model import expected_exec_ms

    return node.tariff.charge_for(expected_exec_ms(service, node), service.payload_mb)


def apply_slo_rebate(
    charge: float,
    qos: QoSParameters,
    observed_latency_ms: float,
    sla_ms: float,
    rebate_frac: float = DEFAULT_REBATE_FRAC,
) -> float:
    if not 0 <= rebate_frac <= 1:
        raise ValueError(f"rebate_frac must be within [0, 1] (got {rebate_frac}).")

    perceived = observed_latency_ms + qos.jitter_ms + qos.session_reestablish_ms
    return charge * (1 - rebate_frac) if perceived > sla_ms else charge
