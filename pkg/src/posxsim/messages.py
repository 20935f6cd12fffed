"""Wire messages of the challenge-response protocol and the pinned digest recipes.

The prover and the verifier must agree bit-for-bit on what gets hashed, so
the three digests of the protocol (request digest, program-memory
measurement, proof digest) are defined here once and imported by both sides.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .crypto import (
    AuthTag,
    Digest,
    EncodingError,
    decode_canonical,
    encode_canonical,
    hash_fields,
)

U64_MAX = 2**64 - 1


class WireFormatError(ValueError):
    """Message bytes do not decode to the expected field layout."""


def u64le(value: int) -> bytes:
    if not 0 <= value <= U64_MAX:
        raise ValueError(f"counter out of 64-bit range: {value}")
    return struct.pack("<Q", value)


def request_digest(f_id: str, input_bytes: bytes, c_vrf: int) -> Digest:
    """Digest signed by the verifier and re-derived by the prover on receipt."""
    return hash_fields([("f", f_id.encode()), ("i", input_bytes), ("c", u64le(c_vrf))])


def pmem_measurement(pmem: bytes, f_id: str, input_bytes: bytes, c_vrf: int) -> Digest:
    """Snapshot binding the program image to the request parameters."""
    return hash_fields(
        [("pmem", bytes(pmem)), ("f", f_id.encode()), ("i", input_bytes), ("c", u64le(c_vrf))]
    )


def proof_digest(measurement: Digest, output: bytes) -> Digest:
    """Digest the prover signs: the measurement extended with the output."""
    return hash_fields([("h", measurement.data), ("o", output)])


@dataclass(frozen=True)
class PoSXRequest:
    """Authenticated execution request: (sigma_vrf, f_id, input, c_vrf)."""

    f_id: str
    input: bytes
    c_vrf: int
    sigma_vrf: AuthTag

    def digest(self) -> Digest:
        return request_digest(self.f_id, self.input, self.c_vrf)

    def to_wire(self) -> bytes:
        return encode_canonical(
            [
                ("sig", self.sigma_vrf.data),
                ("scheme", self.sigma_vrf.scheme_id.encode()),
                ("f", self.f_id.encode()),
                ("i", self.input),
                ("c", u64le(self.c_vrf)),
            ]
        )

    @classmethod
    def from_wire(cls, data: bytes) -> "PoSXRequest":
        fields = _decode_expected(data, ("sig", "scheme", "f", "i", "c"))
        (c_vrf,) = struct.unpack("<Q", fields["c"])
        return cls(
            f_id=fields["f"].decode(),
            input=fields["i"],
            c_vrf=c_vrf,
            sigma_vrf=AuthTag(fields["scheme"].decode(), fields["sig"]),
        )


@dataclass(frozen=True)
class PoSXResponse:
    """Prover answer: the function output and the execution proof."""

    output: bytes
    sigma: AuthTag

    def to_wire(self) -> bytes:
        return encode_canonical(
            [
                ("o", self.output),
                ("sig", self.sigma.data),
                ("scheme", self.sigma.scheme_id.encode()),
            ]
        )

    @classmethod
    def from_wire(cls, data: bytes) -> "PoSXResponse":
        fields = _decode_expected(data, ("o", "sig", "scheme"))
        return cls(output=fields["o"], sigma=AuthTag(fields["scheme"].decode(), fields["sig"]))


def _decode_expected(data: bytes, labels: tuple) -> dict:
    try:
        fields = decode_canonical(data)
    except EncodingError as exc:
        raise WireFormatError(str(exc)) from exc
    if tuple(label for label, _ in fields) != labels:
        raise WireFormatError(f"unexpected field layout {[l for l, _ in fields]!r}")
    decoded = dict(fields)
    if "c" in decoded and len(decoded["c"]) != 8:
        raise WireFormatError("counter field must be 8 bytes")
    for label in ("scheme", "f"):
        if label in decoded:
            try:
                decoded[label].decode()
            except UnicodeDecodeError as exc:
                raise WireFormatError(f"{label} field is not valid UTF-8") from exc
    return decoded
