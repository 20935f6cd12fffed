"""Deterministic, replayable run records.

A transcript is a text file of one record per line::

    <kind> <hex of canonical fields> <8-hex-digit integrity footer>

Record kinds: request, tamper, transition, abort, response, verdict.  Every
record carries its phase label, device index, and per-instance sequence
number as the first three fields.  Response records are self-contained --
they embed the request parameters alongside the output and proof -- so a
transcript can be re-validated offline against the expected program image
and the device public keys alone.

The footer is a truncated digest of the rest of the line.  The proof inside
a response covers only what the prover signed; the footer extends tamper
evidence to the bookkeeping bytes (phase labels, sequence numbers) so any
single-byte edit of a stored record is detectable.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .crypto import (
    EncodingError,
    Field,
    KeyMaterial,
    decode_canonical,
    encode_canonical,
    verify,
)
from .messages import pmem_measurement, proof_digest, u64le
from .verifier import FunctionExpectation
from .crypto import AuthTag

RECORD_KINDS = ("request", "tamper", "transition", "abort", "response", "verdict")

CHECKSUM_HEX_LEN = 8


class TranscriptFormatError(ValueError):
    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


def _footer(body: str) -> str:
    return hashlib.sha256(body.encode("ascii")).hexdigest()[:CHECKSUM_HEX_LEN]


@dataclass(frozen=True)
class TranscriptRecord:
    kind: str
    fields: Tuple[Field, ...]

    def __post_init__(self) -> None:
        if self.kind not in RECORD_KINDS:
            raise ValueError(f"unknown record kind {self.kind!r}")
        object.__setattr__(self, "fields", tuple(self.fields))

    def value(self, label: str) -> bytes:
        for name, data in self.fields:
            if name == label:
                return data
        raise KeyError(f"record has no {label!r} field")

    @property
    def phase(self) -> str:
        return self.value("phase").decode()

    @property
    def device(self) -> int:
        return struct.unpack("<Q", self.value("dev"))[0]

    @property
    def seq(self) -> int:
        return struct.unpack("<Q", self.value("seq"))[0]

    def encode_line(self) -> str:
        body = f"{self.kind} {encode_canonical(self.fields).hex()}"
        return f"{body} {_footer(body)}"

    @classmethod
    def decode_line(cls, line: str, line_number: int) -> "TranscriptRecord":
        parts = line.split(" ")
        if len(parts) != 3:
            raise TranscriptFormatError(line_number, "expected 'kind payload footer'")
        kind, payload_hex, footer = parts
        if kind not in RECORD_KINDS:
            raise TranscriptFormatError(line_number, f"unknown record kind {kind!r}")
        body = f"{kind} {payload_hex}"
        if footer != _footer(body):
            raise TranscriptFormatError(line_number, "integrity footer mismatch")
        try:
            payload = bytes.fromhex(payload_hex)
        except ValueError:
            raise TranscriptFormatError(line_number, "payload is not hex") from None
        try:
            fields = decode_canonical(payload)
        except EncodingError as exc:
            raise TranscriptFormatError(line_number, f"bad field encoding: {exc}") from None
        return cls(kind=kind, fields=tuple(fields))

    def describe(self) -> str:
        """One human-readable line for transcript inspection."""
        parts = [f"{self.kind:<10} phase={self.phase} dev={self.device} seq={self.seq}"]
        for name, data in self.fields:
            if name in ("phase", "dev", "seq"):
                continue
            if name in ("f", "reason", "result", "cause", "name", "detail", "scheme", "attack"):
                parts.append(f"{name}={data.decode(errors='replace')}")
            elif name == "c":
                parts.append(f"c={struct.unpack('<Q', data)[0]}")
            else:
                shown = data.hex()
                if len(shown) > 32:
                    shown = shown[:32] + f"...({len(data)}B)"
                parts.append(f"{name}={shown}")
        return " ".join(parts)


def base_fields(phase: str, device: int, seq: int) -> List[Field]:
    return [("phase", phase.encode()), ("dev", u64le(device)), ("seq", u64le(seq))]


def write_transcript(records: Sequence[TranscriptRecord], path: str) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as handle:
        for record in records:
            handle.write(record.encode_line())
            handle.write("\n")


def read_transcript(path: str) -> List[TranscriptRecord]:
    records = []
    with open(path, "r", encoding="ascii") as handle:
        for line_number, raw in enumerate(handle, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            records.append(TranscriptRecord.decode_line(line, line_number))
    return records


def transcript_text(records: Sequence[TranscriptRecord]) -> str:
    return "".join(record.encode_line() + "\n" for record in records)


# -- offline re-validation ---------------------------------------------------


@dataclass
class OfflineRegistry:
    """What verify-transcript needs besides the transcript: the authenticator
    scheme, per-device public keys, and the declared function metadata."""

    scheme: str
    device_keys: Dict[int, bytes] = field(default_factory=dict)
    functions: Dict[str, FunctionExpectation] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [f"scheme = {self.scheme}"]
        for device_id in sorted(self.device_keys):
            lines.append(f"device.{device_id}.pk = {self.device_keys[device_id].hex()}")
        for f_id in sorted(self.functions):
            meta = self.functions[f_id]
            flags = (
                f"stateful={int(meta.stateful)} b1={int(meta.checkstate_first)} "
                f"b2={int(meta.setstate_last)} b3={int(meta.no_interrupt_enable)}"
            )
            lines.append(f"function.{f_id} = {flags}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "OfflineRegistry":
        scheme = ""
        device_keys: Dict[int, bytes] = {}
        functions: Dict[str, FunctionExpectation] = {}
        for line_number, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"registry line {line_number}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key == "scheme":
                scheme = value
            elif key.startswith("device.") and key.endswith(".pk"):
                device_id = int(key.split(".")[1])
                device_keys[device_id] = bytes.fromhex(value)
            elif key.startswith("function."):
                f_id = key.split(".", 1)[1]
                flags = dict(token.split("=", 1) for token in value.split())
                functions[f_id] = FunctionExpectation(
                    stateful=flags["stateful"] == "1",
                    checkstate_first=flags["b1"] == "1",
                    setstate_last=flags["b2"] == "1",
                    no_interrupt_enable=flags["b3"] == "1",
                )
            else:
                raise ValueError(f"registry line {line_number}: unknown key {key!r}")
        if not scheme:
            raise ValueError("registry file does not declare a scheme")
        return cls(scheme=scheme, device_keys=device_keys, functions=functions)

    def write(self, path: str) -> None:
        with open(path, "w", encoding="ascii", newline="\n") as handle:
            handle.write(self.to_text())

    @classmethod
    def read(cls, path: str) -> "OfflineRegistry":
        with open(path, "r", encoding="ascii") as handle:
            return cls.from_text(handle.read())


def validate_response_records(
    records: Sequence[TranscriptRecord],
    pmem_expected: bytes,
    registry: OfflineRegistry,
) -> List[Tuple[int, str]]:
    """Re-validate every response record; returns (record index, reason) failures.

    Indices are 1-based positions in the record sequence, matching line
    numbers of a transcript file with no blank lines.
    """
    failures: List[Tuple[int, str]] = []
    for index, record in enumerate(records, start=1):
        if record.kind != "response":
            continue
        reason = _validate_one_response(record, pmem_expected, registry)
        if reason is not None:
            failures.append((index, reason))
    return failures


def _validate_one_response(
    record: TranscriptRecord, pmem_expected: bytes, registry: OfflineRegistry
) -> Optional[str]:
    try:
        device_id = record.device
        f_id = record.value("f").decode()
        input_bytes = record.value("i")
        (c_vrf,) = struct.unpack("<Q", record.value("c"))
        output = record.value("o")
        sigma = AuthTag(record.value("scheme").decode(), record.value("sig"))
    except (KeyError, struct.error, UnicodeDecodeError) as exc:
        return f"malformed response record: {exc}"
    public = registry.device_keys.get(device_id)
    if public is None:
        return f"no public key for device {device_id}"
    key = KeyMaterial(registry.scheme, b"", public)
    measurement = pmem_measurement(pmem_expected, f_id, input_bytes, c_vrf)
    if not verify(key, sigma, proof_digest(measurement, output)):
        return "bad_proof"
    expectation = registry.functions.get(f_id)
    if expectation is None:
        return f"no metadata for function {f_id!r}"
    if not expectation.acceptable():
        return "bad_binary_metadata"
    return None
