from collections.abc import Callable, Iterable, Sequence
from typing import TYPE_CHECKING, Any, Optional

if TYPE_CHECKING:
    from pydantic_core._pydantic_core import PydanticCustomError

    from sami_broker.registry import CompositePlan
    from sami_broker.standards import Violation


# NOTE: Validator errors use the factory approach because PydanticCustomError is a final class.


def CustomError(fn: Callable, invalid_tag: str, **kwargs) -> "PydanticCustomError":
    # perf: keep module loading fast by localizing this import.
    from pydantic_core._pydantic_core import PydanticCustomError

    return PydanticCustomError(fn.__name__, f"Invalid {invalid_tag}", kwargs)


def DigestFormatError(value: Any) -> "PydanticCustomError":
    return CustomError(DigestFormatError, "digest (expected 32 bytes of hex)", value=value)


def HexValueError(value: Any) -> "PydanticCustomError":
    return CustomError(HexValueError, "hex value", value=value)


def TrustLevelError(value: Any) -> "PydanticCustomError":
    return CustomError(
        TrustLevelError, "trust level", value=value, allowed="Untrusted|Low|Medium|High"
    )


def TierFieldError(field: str, tier: str, rule: str) -> "PydanticCustomError":
    return CustomError(TierFieldError, f"{field} for {tier} node ({rule})", field=field, tier=tier)


def UnknownReferenceError(kind: str, refs: Sequence[str]) -> "PydanticCustomError":
    return CustomError(UnknownReferenceError, f"{kind} reference", refs=", ".join(refs))


def DuplicateIdError(kind: str, ids: Sequence[str]) -> "PydanticCustomError":
    return CustomError(DuplicateIdError, f"duplicate {kind} id", ids=", ".join(ids))


class SamiError(Exception):
    """Base class for every broker error."""


# Registry


class DuplicateService(SamiError):
    def __init__(self, name: str, version: str):
        self.name = name
        self.version = version
        super().__init__(f"Service '{name}' version '{version}' already has an Active record.")


class NotFound(SamiError):
    def __init__(self, key: str):
        self.key = key
        super().__init__(f"No Active service record for '{key}'.")


class IncompatibleReplacement(SamiError):
    def __init__(self, old_id: str, new_id: str, missing: Iterable[str]):
        self.old_id = old_id
        self.new_id = new_id
        self.missing = tuple(sorted(missing))
        super().__init__(
            f"Service '{new_id}' cannot replace '{old_id}': missing tags {list(self.missing)}."
        )


class StandardViolation(SamiError):
    def __init__(self, violations: Sequence["Violation"]):
        self.violations = tuple(violations)
        listing = "; ".join(f"{v.field}: {v.message}" for v in self.violations)
        super().__init__(f"Descriptor violates the service standard: {listing}")


class UncoverableGoal(SamiError):
    def __init__(self, residual_tags: Iterable[str], plan: Optional["CompositePlan"] = None):
        self.residual_tags = frozenset(residual_tags)
        self.plan = plan
        super().__init__(f"No composition covers tags {sorted(self.residual_tags)}.")


# Arbitrator


class NoAdmissibleNode(SamiError):
    def __init__(self, service_id: str, detail: str = ""):
        self.service_id = service_id
        suffix = f" ({detail})" if detail else ""
        super().__init__(f"No admissible node for service '{service_id}'{suffix}.")


class NonCloudNode(SamiError):
    def __init__(self, node_id: str):
        self.node_id = node_id
        super().__init__(f"Node '{node_id}' is not a Cloud node.")


class InvalidAdvice(SamiError):
    pass


class InvalidExpectation(SamiError):
    pass


class OutOfOrderEvent(SamiError):
    def __init__(self, service_id: str, event_ms: float, last_ms: float):
        self.service_id = service_id
        super().__init__(
            f"Event for '{service_id}' at {event_ms} ms precedes the last one at {last_ms} ms."
        )


# Trust


class EmptyOpinions(SamiError):
    def __init__(self):
        super().__init__("At least one trust assessment is required.")


class ChainTooShort(SamiError):
    def __init__(self, length: int):
        self.length = length
        super().__init__(f"Indirect trust needs a chain of at least 2 links (got {length}).")


class InvalidProbeCount(SamiError):
    def __init__(self, count: int):
        super().__init__(f"Trust establishment needs at least one probe (got {count}).")


# Infrastructure


class NonDealerNode(SamiError):
    def __init__(self, node_id: str):
        self.node_id = node_id
        super().__init__(f"Node '{node_id}' is not a Dealer node.")


class ConfigError(SamiError):
    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


# Billing


class NotBillable(SamiError):
    charge = 0.0

    def __init__(self, request_id: int, outcome: str):
        self.request_id = request_id
        self.outcome = outcome
        super().__init__(f"Invocation {request_id} ended {outcome} and is not billable.")


# Workload


class ParseError(SamiError):
    pass


class ScenarioValidationError(SamiError):
    def __init__(self, errors: Sequence[ConfigError]):
        self.errors = tuple(errors)
        super().__init__("\n".join(str(e) for e in self.errors))


def field_path(loc: Sequence[Any]) -> str:
    """Render a pydantic error location as a dotted path, ``nodes[0].open_hours``."""
    path = ""
    for part in loc:
        if isinstance(part, int):
            path += f"[{part}]"
        else:
            path += f".{part}" if path else str(part)

    return path


def errors_from_validation(err: Any, prefix: str = "") -> list[ConfigError]:
    """One :class:`ConfigError` per pydantic error, all of them, in reported order."""
    errors = []
    for detail in err.errors():
        path = field_path(detail["loc"])
        if prefix:
            path = f"{prefix}{path}" if path.startswith("[") or not path else f"{prefix}.{path}"

        errors.append(ConfigError(path or "scenario", detail["msg"]))

    return errors
