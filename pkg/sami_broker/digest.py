"""
Hex-encoded blobs and keccak digests used by service test vectors.

A :class:`TestVector` pairs the input a profiler replays against a service with the
digest of the output the service is expected to produce.
"""

from typing import TYPE_CHECKING, Any, ClassVar, Optional

from eth_utils import keccak
from hexbytes import HexBytes as BaseHexBytes
from pydantic import BaseModel, ConfigDict
from pydantic_core.core_schema import (
    ValidationInfo,
    bytes_schema,
    plain_serializer_function_ser_schema,
    str_schema,
    with_info_before_validator_function,
)

from sami_broker._error import DigestFormatError, HexValueError

if TYPE_CHECKING:
    from pydantic_core import CoreSchema

HEX_CHARS = frozenset("0123456789abcdef")


def serialize_hex(value: bytes) -> str:
    hex_value = value.hex()
    return hex_value if hex_value.startswith("0x") else f"0x{hex_value}"


hex_serializer = plain_serializer_function_ser_schema(function=serialize_hex)


class Blob(BaseHexBytes):
    """
    Opaque bytes that validate from hex strings, ints or bytes and
    serialize back to a ``0x``-prefixed hex string.
    """

    schema_pattern: ClassVar[str] = "^0x([0-9a-f][0-9a-f])*$"
    schema_examples: ClassVar[tuple[str, ...]] = ("0x", "0x7b7d", "0x68656c6c6f")

    @classmethod
    def __get_pydantic_core_schema__(cls, value, handler=None) -> "CoreSchema":
        schema = with_info_before_validator_function(cls.__sami_validate__, bytes_schema())
        schema["serialization"] = hex_serializer
        return schema

    @classmethod
    def __get_pydantic_json_schema__(cls, core_schema, handler):
        json_schema = handler(core_schema)
        json_schema.update(
            format="binary", pattern=cls.schema_pattern, examples=list(cls.schema_examples)
        )
        return json_schema

    @classmethod
    def __sami_validate__(cls, value: Any, info: Optional[ValidationInfo] = None) -> "Blob":
        try:
            return cls(value)
        except (TypeError, ValueError) as err:
            raise HexValueError(value) from err


class Digest(str):
    """A 32-byte keccak digest as a lowercase ``0x``-prefixed hex string."""

    size: ClassVar[int] = 32
    schema_pattern: ClassVar[str] = "^0x[a-f0-9]{64}$"

    @classmethod
    def __get_pydantic_core_schema__(cls, value, handler=None) -> "CoreSchema":
        str_size = cls.size * 2 + 2
        return with_info_before_validator_function(
            cls.__sami_validate__, str_schema(min_length=str_size, max_length=str_size)
        )

    @classmethod
    def __get_pydantic_json_schema__(cls, core_schema, handler):
        json_schema = handler(core_schema)
        json_schema.update(pattern=cls.schema_pattern)
        return json_schema

    @classmethod
    def __sami_validate__(cls, value: Any, info: Optional[ValidationInfo] = None) -> "Digest":
        if isinstance(value, (bytes, bytearray)):
            hex_value = bytes(value).hex()
        elif isinstance(value, str):
            hex_value = (value[2:] if value.startswith("0x") else value).lower()
        else:
            raise DigestFormatError(value)

        if len(hex_value) != cls.size * 2 or set(hex_value) - HEX_CHARS:
            raise DigestFormatError(value)

        return cls(f"0x{hex_value}")

    @classmethod
    def of(cls, data: bytes) -> "Digest":
        return cls(f"0x{keccak(data).hex()}")


def compute_digest(data: bytes) -> Digest:
    return Digest.of(bytes(data))


class TestVector(BaseModel):
    """Profiling input plus the digest of the output a conforming service returns."""

    # Keep pytest from collecting this class.
    __test__: ClassVar[bool] = False

    model_config = ConfigDict(frozen=True, extra="forbid")

    blob: Blob
    digest: Digest

    @classmethod
    def for_output(cls, blob: bytes, output: bytes) -> "TestVector":
        return cls(blob=Blob(blob), digest=compute_digest(output))
