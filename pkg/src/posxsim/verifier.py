"""Back-end side of the protocol: request issuance and proof validation.

The verifier holds, per enrolled device, the public key, the expected
program-memory image, and the declared behavioral metadata of every function
it may request.  A single monotone challenge counter is shared across all
devices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

from . import crypto
from .crypto import KeyMaterial
from .messages import (
    U64_MAX,
    PoSXRequest,
    PoSXResponse,
    pmem_measurement,
    proof_digest,
    request_digest,
)

FAIL_NO_RESPONSE = "no_response"
FAIL_BAD_PROOF = "bad_proof"
FAIL_BAD_BINARY_METADATA = "bad_binary_metadata"


class VerifierError(Exception):
    pass


class CounterOverflowError(VerifierError):
    """The 64-bit challenge space is exhausted; wraparound is forbidden."""


@dataclass(frozen=True)
class FunctionExpectation:
    """Declared behavior of a registered binary, as the verifier expects it."""

    stateful: bool
    checkstate_first: bool
    setstate_last: bool
    no_interrupt_enable: bool

    def acceptable(self) -> bool:
        # stateless functions are exempt from the check/commit pair, but
        # nothing is ever allowed to re-enable interrupts
        if not self.no_interrupt_enable:
            return False
        if self.stateful:
            return self.checkstate_first and self.setstate_last
        return True


@dataclass(frozen=True)
class Verdict:
    ok: bool
    failure_cause: Optional[str] = None

    def __post_init__(self) -> None:
        if self.ok == (self.failure_cause is not None):
            raise ValueError("verdict passes iff there is no failure cause")

    @classmethod
    def passed(cls) -> "Verdict":
        return cls(ok=True)

    @classmethod
    def failed(cls, cause: str) -> "Verdict":
        return cls(ok=False, failure_cause=cause)


@dataclass
class DeviceRecord:
    pk_dev: KeyMaterial
    pmem_expected: bytes
    expected_meta: Dict[str, FunctionExpectation] = field(default_factory=dict)


class Verifier:
    """Issues authenticated requests and validates the returned proofs.

    Request issuance mutates the counter and must be serialized; validation
    is read-only.
    """

    def __init__(self, sk_vrf: KeyMaterial):
        self.sk_vrf = sk_vrf
        self.c_vrf = 0
        self.device_registry: Dict[int, DeviceRecord] = {}

    @property
    def pk_vrf(self) -> KeyMaterial:
        return self.sk_vrf.public_only()

    def register_device(
        self,
        device_id: int,
        pk_dev: KeyMaterial,
        pmem_expected: bytes,
        expected_meta: Dict[str, FunctionExpectation],
    ) -> None:
        self.device_registry[device_id] = DeviceRecord(
            pk_dev=pk_dev, pmem_expected=bytes(pmem_expected), expected_meta=dict(expected_meta)
        )

    def _record(self, device_id: int) -> DeviceRecord:
        try:
            return self.device_registry[device_id]
        except KeyError:
            raise VerifierError(f"device {device_id} not registered") from None

    def make_request(self, device_id: int, f_id: str, input_bytes: bytes) -> PoSXRequest:
        """Next authenticated request; the challenge counter strictly increases."""
        record = self._record(device_id)
        if f_id not in record.expected_meta:
            raise VerifierError(f"function {f_id!r} not expected on device {device_id}")
        if self.c_vrf >= U64_MAX:
            raise CounterOverflowError("challenge counter exhausted")
        self.c_vrf += 1
        sigma_vrf = crypto.sign(self.sk_vrf, request_digest(f_id, input_bytes, self.c_vrf))
        return PoSXRequest(f_id=f_id, input=input_bytes, c_vrf=self.c_vrf, sigma_vrf=sigma_vrf)

    def inspect_binary(self, device_id: int, f_id: str) -> bool:
        record = self._record(device_id)
        try:
            expectation = record.expected_meta[f_id]
        except KeyError:
            raise VerifierError(f"function {f_id!r} not expected on device {device_id}") from None
        return expectation.acceptable()

    def validate_posx(
        self,
        device_id: int,
        request: PoSXRequest,
        response: Optional[PoSXResponse],
    ) -> Verdict:
        """Judge one protocol instance; failures are verdicts, never exceptions.

        The measurement is recomputed from the verifier's own copy of the
        expected program image and the request it actually issued, so neither
        a tampered device image nor a tampered wire message can influence
        what the proof is checked against.
        """
        record = self._record(device_id)
        if response is None:
            return Verdict.failed(FAIL_NO_RESPONSE)
        expected_measurement = pmem_measurement(
            record.pmem_expected, request.f_id, request.input, request.c_vrf
        )
        digest = proof_digest(expected_measurement, response.output)
        if not crypto.verify(record.pk_dev, response.sigma, digest):
            return Verdict.failed(FAIL_BAD_PROOF)
        if not self.inspect_binary(device_id, request.f_id):
            return Verdict.failed(FAIL_BAD_BINARY_METADATA)
        return Verdict.passed()
