"""
Standard enforcement for service descriptors: required fields, semantic versions,
the controlled tag vocabulary and descriptor limits.
"""

import re
from collections.abc import Iterable
from functools import lru_cache, total_ordering
from importlib.resources import files
from pathlib import Path
from typing import Optional, Union

from pydantic import BaseModel, ConfigDict

from sami_broker.model import ServiceDescriptor

MAX_TAGS = 16
MAX_DESCRIPTION_CHARS = 2048
REQUIRED_FIELDS = ("id", "name", "version")
DEMAND_FIELDS = ("cpu_demand", "mem_demand", "storage_demand", "payload_in", "payload_out")

# https://semver.org/#is-there-a-suggested-regular-expression-regex-to-check-a-semver-string
SEMVER_PATTERN = re.compile(
    r"^(?P<major>0|[1-9]\d*)\.(?P<minor>0|[1-9]\d*)\.(?P<patch>0|[1-9]\d*)"
    r"(?:-(?P<prerelease>(?:0|[1-9]\d*|\d*[a-zA-Z-][0-9a-zA-Z-]*)"
    r"(?:\.(?:0|[1-9]\d*|\d*[a-zA-Z-][0-9a-zA-Z-]*))*))?"
    r"(?:\+(?P<build>[0-9a-zA-Z-]+(?:\.[0-9a-zA-Z-]+)*))?$"
)


@total_ordering
class SemVer:
    """Precedence-ordered semantic version (build metadata ignored)."""

    def __init__(self, major: int, minor: int, patch: int, prerelease: tuple[str, ...] = ()):
        self.major = major
        self.minor = minor
        self.patch = patch
        self.prerelease = prerelease

    @classmethod
    def parse(cls, value: str) -> "SemVer":
        match = SEMVER_PATTERN.match(value)
        if not match:
            raise ValueError(f"'{value}' is not a semantic version.")

        pre = match["prerelease"]
        return cls(
            int(match["major"]),
            int(match["minor"]),
            int(match["patch"]),
            tuple(pre.split(".")) if pre else (),
        )

    @property
    def _key(self) -> tuple:
        # A release outranks its pre-releases; numeric identifiers sort below alphanumerics.
        pre = tuple((0, int(p), "") if p.isdigit() else (1, 0, p) for p in self.prerelease)
        return (self.major, self.minor, self.patch, not self.prerelease, pre)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, SemVer) and self._key == other._key

    def __lt__(self, other: "SemVer") -> bool:
        return self._key < other._key

    def __hash__(self) -> int:
        return hash(self._key)

    def __str__(self) -> str:
        pre = f"-{'.'.join(self.prerelease)}" if self.prerelease else ""
        return f"{self.major}.{self.minor}.{self.patch}{pre}"


def is_semver(value: str) -> bool:
    return SEMVER_PATTERN.match(value) is not None


class TagVocabulary:
    """Controlled tag vocabulary: a text file with one lowercase tag per line."""

    def __init__(self, tags: Iterable[str]):
        self.tags = frozenset(tags)

    def __contains__(self, tag: object) -> bool:
        return tag in self.tags

    @classmethod
    def from_text(cls, text: str) -> "TagVocabulary":
        lines = (line.strip() for line in text.splitlines())
        return cls(line for line in lines if line and not line.startswith("#"))

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "TagVocabulary":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def default(cls) -> "TagVocabulary":
        return _packaged_vocabulary()


@lru_cache(maxsize=1)
def _packaged_vocabulary() -> TagVocabulary:
    resource = files("sami_broker") / "data" / "vocabulary.txt"
    return TagVocabulary.from_text(resource.read_text(encoding="utf-8"))


class Violation(BaseModel):
    model_config = ConfigDict(frozen=True)

    field: str
    message: str

    def __str__(self) -> str:
        return f"{self.field}: {self.message}"


class ValidationResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    service_id: str = ""
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __len__(self) -> int:
        return len(self.violations)


def enforce_standard(
    desc: ServiceDescriptor, vocabulary: Optional[TagVocabulary] = None
) -> ValidationResult:
    vocabulary = vocabulary or TagVocabulary.default()
    violations: list[Violation] = []

    for field in REQUIRED_FIELDS:
        if not getattr(desc, field).strip():
            violations.append(Violation(field=field, message="required field is missing"))

    if desc.version.strip() and not is_semver(desc.version):
        violations.append(
            Violation(field="version", message=f"'{desc.version}' is not a semantic version")
        )

    tags = sorted(desc.capability_tags)
    if not tags:
        violations.append(Violation(field="capability_tags", message="at least one tag required"))
    elif len(tags) > MAX_TAGS:
        violations.append(
            Violation(
                field="capability_tags",
                message=f"tag count {len(tags)} exceeds the limit of {MAX_TAGS}",
            )
        )

    if unknown := [tag for tag in tags if tag not in vocabulary]:
        violations.append(
            Violation(
                field="capability_tags",
                message=f"tags not in the controlled vocabulary: {', '.join(unknown)}",
            )
        )

    if len(desc.description) > MAX_DESCRIPTION_CHARS:
        violations.append(
            Violation(
                field="description",
                message=f"{len(desc.description)} chars exceeds {MAX_DESCRIPTION_CHARS}",
            )
        )

    for field in DEMAND_FIELDS:
        if getattr(desc, field) < 0:
            violations.append(Violation(field=field, message="demand must be non-negative"))

    return ValidationResult(service_id=desc.id, violations=tuple(violations))
