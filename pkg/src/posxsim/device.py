"""Prover emulator: an untrusted program world plus a trusted secure core.

The emulator enforces, in software, the two hardware contracts the real
platform would provide: world isolation (the committed state, keys, and
counter live only in :class:`SecureWorldState`) and controlled invocation
(state check/commit calls are reachable only through the handle given to the
executing function, and are rejected outside an active instance).

Interrupt masking is modeled by the ``exec`` flag: asynchronous events
injected while an instance is active are recorded as suppressed and have no
effect; between instances they are delivered and may tamper with program
memory or stored state -- that is how mid-deployment attacks are simulated.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

from . import crypto
from .crypto import Digest, KeyMaterial, hash_bytes, hash_fields
from .messages import PoSXRequest, PoSXResponse, pmem_measurement, proof_digest, u64le
from .rng import substream

PMEM_SIZE = 32 * 1024
PMEM_FILL = 0xFF

STORAGE_MODES = ("digest", "full_value", "outsourced_mac")

# abort causes an execution can end with, in the order they can occur
ABORT_BAD_COUNTER = "bad_counter"
ABORT_BAD_REQUEST_TAG = "bad_request_tag"
ABORT_ALREADY_EXECUTING = "already_executing"
ABORT_STATE_CHECK_FAILED = "state_check_failed"
ABORT_FUNCTION_FAULT = "function_fault"

ABORT_REASONS = (
    ABORT_BAD_COUNTER,
    ABORT_BAD_REQUEST_TAG,
    ABORT_ALREADY_EXECUTING,
    ABORT_STATE_CHECK_FAILED,
    ABORT_FUNCTION_FAULT,
)


class DeviceError(Exception):
    pass


class RegistrationError(DeviceError):
    """Function image overlaps an existing registration or exceeds memory."""


class ControlledInvocationError(DeviceError):
    """State check/commit invoked outside an active execution instance."""


@dataclass
class FunctionBinary:
    """A registered untrusted-world function.

    ``code`` is what appears in program memory; ``behavior`` is the simulated
    effect of running it.  The three metadata flags declare whether the
    binary checks state first, commits state last, and never enables
    interrupts -- the verifier inspects these, the emulator does not enforce
    them (a dishonest declaration is exactly what binary inspection exists
    to catch).

    ``state_id`` names the secure-world state slot the function's handle is
    bound to.  Functions that share state (an initializer and the routine it
    initializes for, or a collector and a trainer over the same dataset)
    declare the same slot.
    """

    f_id: str
    code: bytes
    behavior: Callable[[bytes, "StateHandle"], bytes]
    checkstate_first: bool = True
    setstate_last: bool = True
    no_interrupt_enable: bool = True
    stateful: bool = True
    state_id: str = ""

    def __post_init__(self) -> None:
        if not self.state_id:
            self.state_id = self.f_id


@dataclass
class NonSecureWorld:
    """Program memory image and the untrusted-world resident state values."""

    size: int = PMEM_SIZE
    pmem: bytearray = field(default_factory=bytearray)
    layout: Dict[str, Tuple[int, int]] = field(default_factory=dict)
    state_store: Dict[str, bytes] = field(default_factory=dict)
    state_tags: Dict[str, bytes] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.pmem:
            self.pmem = bytearray([PMEM_FILL]) * self.size

    def register(self, fb: FunctionBinary, offset: int) -> None:
        end = offset + len(fb.code)
        if offset < 0 or end > self.size:
            raise RegistrationError(f"{fb.f_id}: [{offset}, {end}) outside program memory")
        for other, (o_off, o_len) in self.layout.items():
            if offset < o_off + o_len and o_off < end:
                raise RegistrationError(f"{fb.f_id} overlaps {other}")
        self.pmem[offset:end] = fb.code
        self.layout[fb.f_id] = (offset, len(fb.code))

    def read_state(self, state_id: str) -> bytes:
        return self.state_store.get(state_id, b"")

    def write_state(self, state_id: str, value: bytes) -> None:
        self.state_store[state_id] = bytes(value)


@dataclass
class SecureWorldState:
    """Everything the untrusted world cannot touch."""

    sk_dev: KeyMaterial
    pk_vrf: KeyMaterial
    storage_mode: str = "digest"
    c: int = 0
    s_sec: Dict[str, bytes] = field(default_factory=dict)
    epochs: Dict[str, int] = field(default_factory=dict)
    exec_flag: bool = False
    state_checked: bool = False
    state_used: bool = False

    def __post_init__(self) -> None:
        if self.storage_mode not in STORAGE_MODES:
            raise DeviceError(f"unknown storage mode {self.storage_mode!r}")


@dataclass
class ExecutionOutcome:
    """Exactly one of response / abort_reason is set."""

    response: Optional[PoSXResponse] = None
    abort_reason: Optional[str] = None

    def __post_init__(self) -> None:
        if (self.response is None) == (self.abort_reason is None):
            raise ValueError("outcome must be exactly one of response / abort")

    @property
    def ok(self) -> bool:
        return self.response is not None


@dataclass(frozen=True)
class AsyncEvent:
    """A deliverable interrupt-context mutation of the untrusted world.

    kind "patch_pmem" patches the registered code of ``target`` (offset
    relative to the function's load address); kind "patch_state" patches the
    stored state value of slot ``target``, extending it if the patch runs
    past the current end.
    """

    kind: str
    target: str
    offset: int = 0
    data: bytes = b""


def apply_patch(buf: bytes, offset: int, data: bytes) -> bytes:
    if offset < 0:
        raise ValueError("negative patch offset")
    out = bytearray(buf)
    end = offset + len(data)
    if end > len(out):
        out.extend(b"\x00" * (end - len(out)))
    out[offset:end] = data
    return bytes(out)


class StateHandle:
    """The one route a running function has to its state.

    Stands in for the secure-call gate: check/commit trap into the secure
    world, read/write touch the untrusted-world copy, and the named random
    streams and the sensor belong to the device, not the function.
    """

    def __init__(self, device: "ProverDevice", state_id: str):
        self._device = device
        self._state_id = state_id

    def read(self) -> bytes:
        return self._device.nsw.read_state(self._state_id)

    def write(self, value: bytes) -> None:
        self._device.nsw.write_state(self._state_id, value)

    def check_state(self, value: bytes) -> bool:
        return self._device.check_state(self._state_id, value)

    def set_state(self, value: bytes) -> bool:
        return self._device.set_state(self._state_id, value)

    def rng(self, label: str):
        return self._device.rng(label)

    def sense(self):
        return self._device.sense()


TraceHook = Callable[[str, Dict[str, bytes]], None]


class ProverDevice:
    """One emulated prover; operations on a device must be serialized."""

    def __init__(
        self,
        sk_dev: KeyMaterial,
        pk_vrf: KeyMaterial,
        *,
        storage_mode: str = "digest",
        pmem_size: int = PMEM_SIZE,
        rng_seed: int = 0,
        rng_scope: str = "device",
        sensor: Optional[Callable[[], object]] = None,
        trace_hook: Optional[TraceHook] = None,
    ):
        self.nsw = NonSecureWorld(size=pmem_size)
        self.sec = SecureWorldState(sk_dev=sk_dev, pk_vrf=pk_vrf, storage_mode=storage_mode)
        self.functions: Dict[str, FunctionBinary] = {}
        self.event_log: List[Tuple[AsyncEvent, str]] = []
        self.sensor = sensor
        self.trace_hook = trace_hook
        self._rng_seed = rng_seed
        self._rng_scope = rng_scope
        self._streams: Dict[str, object] = {}
        # MAC key for the outsourced-tag storage mode, derived so it never
        # equals the signing key
        self._state_mac_key = hash_fields(
            [("purpose", b"state-tag"), ("k", sk_dev.secret_part)]
        ).data

    # -- plumbing ---------------------------------------------------------

    def rng(self, label: str):
        stream = self._streams.get(label)
        if stream is None:
            stream = substream(self._rng_seed, self._rng_scope, label)
            self._streams[label] = stream
        return stream

    def sense(self):
        if self.sensor is None:
            raise DeviceError("device has no sensor trace configured")
        return self.sensor()

    def _trace(self, name: str, **fields: bytes) -> None:
        if self.trace_hook is not None:
            self.trace_hook(name, fields)

    # -- registration and measurement -------------------------------------

    def register_function(self, fb: FunctionBinary, offset: int) -> None:
        if fb.f_id in self.functions:
            raise RegistrationError(f"{fb.f_id} already registered")
        self.nsw.register(fb, offset)
        self.functions[fb.f_id] = fb

    def pmem_image(self) -> bytes:
        return bytes(self.nsw.pmem)

    def measure_pmem(self, f_id: str, input_bytes: bytes, c_vrf: int) -> Digest:
        return pmem_measurement(self.pmem_image(), f_id, input_bytes, c_vrf)

    # -- state commitment --------------------------------------------------

    def _commitment(self, value: bytes) -> bytes:
        if self.sec.storage_mode == "digest":
            return hash_bytes(value).data
        return bytes(value)

    def _state_tag(self, state_id: str, epoch: int, value: bytes) -> bytes:
        material = crypto.encode_canonical(
            [("sid", state_id.encode()), ("epoch", u64le(epoch)), ("s", value)]
        )
        return hmac.new(self._state_mac_key, material, hashlib.sha256).digest()

    def _state_matches(self, state_id: str, value: bytes) -> bool:
        if self.sec.storage_mode == "outsourced_mac":
            epoch = self.sec.epochs.get(state_id)
            if epoch is None:
                # never committed: only the empty state is authentic
                return value == b""
            stored_tag = self.nsw.state_tags.get(state_id, b"")
            return hmac.compare_digest(self._state_tag(state_id, epoch, value), stored_tag)
        committed = self.sec.s_sec.get(state_id)
        if committed is None:
            committed = self._commitment(b"")
        return hmac.compare_digest(self._commitment(value), committed)

    def check_state(self, state_id: str, value: bytes) -> bool:
        """Integrity-check a state value against the secure commitment.

        Only callable while an instance is executing; also marks the state
        as used so the proof step can insist the check happened.
        """
        if not self.sec.exec_flag:
            raise ControlledInvocationError("check_state outside an active instance")
        self.sec.state_used = True
        ok = self._state_matches(state_id, value)
        self.sec.state_checked = ok
        self._trace("state_check", sid=state_id.encode(), ok=b"\x01" if ok else b"\x00")
        return ok

    def set_state(self, state_id: str, value: bytes) -> bool:
        """Commit a new state value; refused unless the check already passed."""
        if not self.sec.exec_flag:
            raise ControlledInvocationError("set_state outside an active instance")
        if not (self.sec.state_checked and self.sec.exec_flag):
            return False
        if self.sec.storage_mode == "outsourced_mac":
            epoch = self.sec.epochs.get(state_id, 0) + 1
            self.sec.epochs[state_id] = epoch
            # the tag, not the state, goes back to untrusted storage
            self.nsw.state_tags[state_id] = self._state_tag(state_id, epoch, value)
        else:
            self.sec.s_sec[state_id] = self._commitment(value)
        self._trace("state_set", sid=state_id.encode())
        return True

    # -- the protocol core -------------------------------------------------

    def execute(self, request: PoSXRequest) -> ExecutionOutcome:
        """Run one protocol instance; returns a signed response or an abort.

        Request checks run in a fixed order (stale counter, bad tag, busy)
        before any flag or counter is touched, so a rejected request leaves
        the device -- including a concurrently active instance -- unchanged.
        """
        fb = self.functions.get(request.f_id)
        if fb is None:
            raise DeviceError(f"function {request.f_id!r} not registered")

        sec = self.sec
        if request.c_vrf <= sec.c:
            return ExecutionOutcome(abort_reason=ABORT_BAD_COUNTER)
        if not crypto.verify(sec.pk_vrf, request.sigma_vrf, request.digest()):
            return ExecutionOutcome(abort_reason=ABORT_BAD_REQUEST_TAG)
        if sec.exec_flag:
            return ExecutionOutcome(abort_reason=ABORT_ALREADY_EXECUTING)

        sec.c = request.c_vrf
        sec.exec_flag = True
        sec.state_checked = False
        sec.state_used = False
        self._trace("instance_open", c=u64le(sec.c))
        try:
            # atomic window: events injected from here on are suppressed
            measurement = self.measure_pmem(request.f_id, request.input, request.c_vrf)
            handle = StateHandle(self, fb.state_id)
            try:
                output = fb.behavior(request.input, handle)
            except Exception:
                return ExecutionOutcome(abort_reason=ABORT_FUNCTION_FAULT)
            if not isinstance(output, (bytes, bytearray)):
                return ExecutionOutcome(abort_reason=ABORT_FUNCTION_FAULT)
            output = bytes(output)
            if sec.exec_flag and sec.state_used and not sec.state_checked:
                return ExecutionOutcome(abort_reason=ABORT_STATE_CHECK_FAILED)
            sigma = crypto.sign(sec.sk_dev, proof_digest(measurement, output))
            self._trace("instance_close", c=u64le(sec.c))
            return ExecutionOutcome(response=PoSXResponse(output=output, sigma=sigma))
        finally:
            sec.exec_flag = False
            sec.state_checked = False
            sec.state_used = False

    # -- asynchronous world ------------------------------------------------

    def inject_async_event(self, event: AsyncEvent) -> str:
        """Deliver an event, or suppress it if an instance is executing."""
        if self.sec.exec_flag:
            self.event_log.append((event, "suppressed"))
            self._trace("event_suppressed", kind=event.kind.encode(), target=event.target.encode())
            return "suppressed"
        if event.kind == "patch_pmem":
            if event.target not in self.nsw.layout:
                raise DeviceError(f"patch_pmem target {event.target!r} not registered")
            base, _length = self.nsw.layout[event.target]
            absolute = base + event.offset
            end = absolute + len(event.data)
            if absolute < 0 or end > self.nsw.size:
                raise DeviceError("patch outside program memory")
            self.nsw.pmem[absolute:end] = event.data
        elif event.kind == "patch_state":
            current = self.nsw.read_state(event.target)
            self.nsw.write_state(event.target, apply_patch(current, event.offset, event.data))
        else:
            raise DeviceError(f"unknown event kind {event.kind!r}")
        self.event_log.append((event, "delivered"))
        self._trace("event_delivered", kind=event.kind.encode(), target=event.target.encode())
        return "delivered"


def placeholder_code(f_id: str, length: int = 128) -> bytes:
    """Deterministic stand-in for a compiled function image."""
    out = b""
    counter = 0
    while len(out) < length:
        out += hashlib.sha256(f"code:{f_id}:{counter}".encode()).digest()
        counter += 1
    return out[:length]
