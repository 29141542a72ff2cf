"""
The four trust approaches for infrastructure nodes: establishment by probing,
aggregation of opinions, indirect (transitive) trust and reputation.
"""

from collections.abc import Sequence

from pydantic import BaseModel, ConfigDict, Field

from sami_broker._error import ChainTooShort, EmptyOpinions, InvalidProbeCount
from sami_broker.model import TrustAssessment, TrustBasis, TrustLevel

# Probes needed before an all-pass record earns High.
HIGH_TRUST_PROBES = 3
# Transitive trust is only good for low-security jobs.
INDIRECT_CAP = TrustLevel.LOW
# Weakest second opinion that still backs a reputation.
CORROBORATION_FLOOR = TrustLevel.MEDIUM


class ReputationRecord(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    node_id: str = ""
    legal_registered: bool
    years_active: int = Field(default=0, ge=0)
    complaint_rate: float = Field(default=0.0, ge=0, le=1)


def establish_trust(probe_passed: bool, probe_count: int) -> TrustAssessment:
    if probe_count < 1:
        raise InvalidProbeCount(probe_count)

    if not probe_passed:
        level = TrustLevel.UNTRUSTED
    elif probe_count >= HIGH_TRUST_PROBES:
        level = TrustLevel.HIGH
    else:
        level = TrustLevel.MEDIUM

    return TrustAssessment(level=level, basis=TrustBasis.ESTABLISHED)


def aggregate_trust(opinions: Sequence[TrustAssessment]) -> TrustAssessment:
    if not opinions:
        raise EmptyOpinions()

    levels = sorted(opinion.level for opinion in opinions)
    # Lower median on even counts.
    median = levels[(len(levels) - 1) // 2]
    return TrustAssessment(level=median, basis=TrustBasis.AGGREGATED)


def indirect_trust(chain: Sequence[TrustAssessment]) -> TrustAssessment:
    if len(chain) < 2:
        raise ChainTooShort(len(chain))

    weakest = min(link.level for link in chain)
    return TrustAssessment(level=min(weakest, INDIRECT_CAP), basis=TrustBasis.INDIRECT)


def reputation_trust(rec: ReputationRecord) -> TrustAssessment:
    if not rec.legal_registered:
        level = TrustLevel.UNTRUSTED
    elif rec.years_active >= 5 and rec.complaint_rate < 0.05:
        level = TrustLevel.HIGH
    elif rec.complaint_rate < 0.2:
        level = TrustLevel.MEDIUM
    else:
        level = TrustLevel.LOW

    return TrustAssessment(level=level, basis=TrustBasis.REPUTATION)


def effective_trust(assessments: Sequence[TrustAssessment]) -> TrustAssessment:
    """
    The strongest assessment. Ties prefer non-reputation evidence; a reputation
    winner is corroborated only when some other assessment rates the node at
    least Medium. A failed probe contradicts the reputation rather than backing it.
    """
    if not assessments:
        raise EmptyOpinions()

    best_index = max(
        range(len(assessments)),
        key=lambda i: (assessments[i].level, assessments[i].basis is not TrustBasis.REPUTATION),
    )
    best = assessments[best_index]
    backed = any(
        other.level >= CORROBORATION_FLOOR
        for i, other in enumerate(assessments)
        if i != best_index
    )
    if best.basis is TrustBasis.REPUTATION and backed:
        return best.model_copy(update={"corroborated": True})

    return best
