"""Scenario orchestration: fleets of provers, a tamperable channel, verdicts.

A scenario is fully declarative -- application, fleet size, authenticator
backend, state-storage mode, attack list, seed -- and a run is a pure
function of it: every random draw comes from a named substream of the seed,
so two runs of the same config produce byte-identical transcripts.

Attacks anchor at phase granularity.  Between-instance anchors are delivered
as asynchronous events (the device accepts them while idle); in-transit
anchors mutate wire bytes on the channel.  Mid-execution tampering is
impossible by construction: events injected during an instance are
suppressed, mirroring the interrupts-disabled window.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import apps, crypto
from .device import AsyncEvent, NonSecureWorld, ProverDevice, apply_patch
from .fltrain import AggregationConfig, ModelWeights, TrainingConfig, fedavg_aggregate, pack_train_input
from .messages import PoSXRequest, PoSXResponse, WireFormatError, u64le
from .rappor import LdpParams, estimate_frequency, pack_bits, report_counts, unpack_bits
from .rng import derive_bytes, substream
from .transcript import OfflineRegistry, TranscriptRecord, base_fields
from .verifier import Verdict, Verifier

PHASE_SETUP = "setup"
PHASE_COLLECT = "collect"
PHASE_TRAIN = "train"

APPS = ("ldp", "fl")

ATTACK_NONE = "none"
ATTACK_CORRUPT_FUNCTION = "corrupt_function"
ATTACK_TAMPER_STATE = "tamper_state"
ATTACK_TAMPER_OUTPUT = "tamper_output"
ATTACK_TAMPER_REQUEST = "tamper_request"
ATTACK_REPLAY_REQUEST = "replay_request"
ATTACK_FORGE_REQUEST = "forge_request"
ATTACK_DROP_RESPONSE = "drop_response"

# which timing anchors each attack kind admits
_CATALOG = {
    ATTACK_NONE: (),
    ATTACK_CORRUPT_FUNCTION: ("before_setup", "between_phases"),
    ATTACK_TAMPER_STATE: ("between_phases",),
    ATTACK_TAMPER_OUTPUT: ("in_transit",),
    ATTACK_TAMPER_REQUEST: ("in_transit",),
    ATTACK_REPLAY_REQUEST: ("in_transit",),
    ATTACK_FORGE_REQUEST: ("in_transit",),
    ATTACK_DROP_RESPONSE: ("in_transit",),
}

_NEEDS_PATCH = (
    ATTACK_CORRUPT_FUNCTION,
    ATTACK_TAMPER_STATE,
    ATTACK_TAMPER_OUTPUT,
    ATTACK_TAMPER_REQUEST,
)

_NEEDS_TARGET = (ATTACK_CORRUPT_FUNCTION, ATTACK_TAMPER_STATE)


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class AttackTiming:
    kind: str
    after_phase: str = ""
    before_phase: str = ""
    phase: str = ""

    @classmethod
    def before_setup(cls) -> "AttackTiming":
        return cls(kind="before_setup")

    @classmethod
    def between(cls, after_phase: str, before_phase: str) -> "AttackTiming":
        return cls(kind="between_phases", after_phase=after_phase, before_phase=before_phase)

    @classmethod
    def in_transit(cls, phase: str) -> "AttackTiming":
        return cls(kind="in_transit", phase=phase)

    def describe(self) -> str:
        if self.kind == "before_setup":
            return "before_setup"
        if self.kind == "between_phases":
            return f"between:{self.after_phase},{self.before_phase}"
        return f"in_transit:{self.phase}"


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    device: int
    timing: AttackTiming
    target: str = ""
    patch_offset: int = 0
    patch_data: bytes = b""

    def describe(self) -> str:
        parts = [f"device={self.device}", f"kind={self.kind}", f"timing={self.timing.describe()}"]
        if self.target:
            parts.append(f"target={self.target}")
        if self.kind in _NEEDS_PATCH:
            parts.append(f"patch={self.patch_offset}:{self.patch_data.hex()}")
        return " ".join(parts)


def _ldp_defaults() -> LdpParams:
    return LdpParams(f=0.5, p=0.75, q=0.25, k=3)


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything a run depends on; equal configs give identical transcripts."""

    app: str = "ldp"
    device_count: int = 1
    crypto_backend: str = "mac"
    storage_mode: str = "digest"
    seed: int = 0
    collect_rounds: int = 1
    pmem_kib: int = 32
    # local-differential-privacy application
    ldp: LdpParams = field(default_factory=_ldp_defaults)
    true_freqs: Tuple[float, ...] = ()
    # federated-learning application
    feature_dim: int = 2
    epochs: int = 100
    alpha: float = 0.05
    eta: float = 1.0
    true_w: Tuple[float, ...] = ()
    true_b: float = 0.0
    noise: float = 0.0
    attacks: Tuple[AttackSpec, ...] = ()

    def phases(self) -> Tuple[str, ...]:
        if self.app == "ldp":
            return (PHASE_SETUP, PHASE_COLLECT)
        return (PHASE_SETUP, PHASE_COLLECT, PHASE_TRAIN)

    def rounds(self, phase: str) -> int:
        return self.collect_rounds if phase == PHASE_COLLECT else 1

    def validate(self) -> None:
        if self.app not in APPS:
            raise ScenarioError(f"unknown app {self.app!r}")
        if self.device_count < 1:
            raise ScenarioError("device_count must be >= 1")
        if self.crypto_backend not in crypto.registered_schemes():
            raise ScenarioError(f"unknown crypto backend {self.crypto_backend!r}")
        if self.storage_mode not in ("digest", "full_value", "outsourced_mac"):
            raise ScenarioError(f"unknown storage mode {self.storage_mode!r}")
        if self.collect_rounds < 1:
            raise ScenarioError("collect_rounds must be >= 1")
        if self.pmem_kib < 1:
            raise ScenarioError("pmem_kib must be >= 1")
        if self.app == "fl":
            if self.feature_dim < 1:
                raise ScenarioError("feature_dim must be >= 1")
            if self.true_w and len(self.true_w) != self.feature_dim:
                raise ScenarioError("true_w length must equal feature_dim")
            TrainingConfig(epochs=self.epochs, alpha=self.alpha)
        if self.true_freqs:
            if len(self.true_freqs) > self.ldp.domain_size:
                raise ScenarioError("more true frequencies than sensor values")
            if any(f < 0 for f in self.true_freqs) or sum(self.true_freqs) > 1.0 + 1e-9:
                raise ScenarioError("true frequencies must be nonnegative with sum <= 1")
        phases = self.phases()
        for spec in self.attacks:
            self._validate_attack(spec, phases)

    def _validate_attack(self, spec: AttackSpec, phases: Tuple[str, ...]) -> None:
        if spec.kind not in _CATALOG:
            raise ScenarioError(f"unknown attack kind {spec.kind!r}")
        if spec.kind == ATTACK_NONE:
            return
        if not 0 <= spec.device < self.device_count:
            raise ScenarioError(f"attack device {spec.device} out of range")
        timing = spec.timing
        if timing.kind not in _CATALOG[spec.kind]:
            raise ScenarioError(f"attack {spec.kind!r} cannot anchor at {timing.kind!r}")
        if timing.kind == "between_phases":
            try:
                after_index = phases.index(timing.after_phase)
            except ValueError:
                raise ScenarioError(f"unknown phase {timing.after_phase!r}") from None
            if after_index + 1 >= len(phases) or phases[after_index + 1] != timing.before_phase:
                raise ScenarioError(
                    f"phases {timing.after_phase!r},{timing.before_phase!r} are not consecutive"
                )
        if timing.kind == "in_transit":
            if timing.phase not in phases:
                raise ScenarioError(f"unknown phase {timing.phase!r}")
            if spec.kind == ATTACK_REPLAY_REQUEST and timing.phase == phases[0]:
                raise ScenarioError("replay needs a preceding request; cannot anchor at setup")
        if spec.kind in _NEEDS_TARGET and not spec.target:
            raise ScenarioError(f"attack {spec.kind!r} needs a target")
        if spec.kind in _NEEDS_PATCH and not spec.patch_data:
            raise ScenarioError(f"attack {spec.kind!r} needs patch bytes")

    def padded_true_freqs(self) -> np.ndarray:
        """Per-value sensing distribution; unnamed values share the leftover mass."""
        size = self.ldp.domain_size
        freqs = np.zeros(size)
        named = list(self.true_freqs)
        freqs[: len(named)] = named
        remaining = size - len(named)
        if remaining > 0:
            freqs[len(named) :] = max(0.0, 1.0 - sum(named)) / remaining
        total = freqs.sum()
        if total <= 0:
            raise ScenarioError("true frequencies sum to zero")
        return freqs / total


# -- scenario file grammar -----------------------------------------------------

_SCALAR_KEYS = {
    "app": str,
    "devices": int,
    "backend": str,
    "storage": str,
    "seed": int,
    "collect_rounds": int,
    "pmem_kib": int,
    "k": int,
    "f": float,
    "p": float,
    "q": float,
    "feature_dim": int,
    "epochs": int,
    "alpha": float,
    "eta": float,
    "true_b": float,
    "noise": float,
}

_LIST_KEYS = ("true_freqs", "true_w")


def parse_attack(text: str) -> AttackSpec:
    tokens: Dict[str, str] = {}
    for token in text.split():
        if "=" not in token:
            raise ScenarioError(f"attack token {token!r} is not key=value")
        key, value = token.split("=", 1)
        if key in tokens:
            raise ScenarioError(f"duplicate attack token {key!r}")
        tokens[key] = value
    try:
        kind = tokens.pop("kind")
        device = int(tokens.pop("device"))
        timing = _parse_timing(tokens.pop("timing"))
    except KeyError as exc:
        raise ScenarioError(f"attack missing required token {exc}") from None
    except ValueError:
        raise ScenarioError("attack device must be an integer") from None
    target = tokens.pop("target", "")
    patch_offset, patch_data = 0, b""
    if "patch" in tokens:
        patch_text = tokens.pop("patch")
        if ":" not in patch_text:
            raise ScenarioError(f"patch {patch_text!r} is not OFFSET:HEX")
        offset_text, hex_text = patch_text.split(":", 1)
        try:
            patch_offset = int(offset_text)
            patch_data = bytes.fromhex(hex_text)
        except ValueError as exc:
            raise ScenarioError(f"bad patch {patch_text!r}: {exc}") from None
    if tokens:
        raise ScenarioError(f"unknown attack tokens {sorted(tokens)!r}")
    if kind not in _CATALOG:
        raise ScenarioError(f"unknown attack kind {kind!r}")
    if kind != ATTACK_NONE and timing.kind not in _CATALOG[kind]:
        raise ScenarioError(f"attack {kind!r} cannot anchor at {timing.kind!r}")
    return AttackSpec(
        kind=kind,
        device=device,
        timing=timing,
        target=target,
        patch_offset=patch_offset,
        patch_data=patch_data,
    )


def _parse_timing(text: str) -> AttackTiming:
    if text == "before_setup":
        return AttackTiming.before_setup()
    if text.startswith("between:"):
        pair = text[len("between:") :].split(",")
        if len(pair) != 2:
            raise ScenarioError(f"between timing {text!r} is not between:A,B")
        return AttackTiming.between(pair[0], pair[1])
    if text.startswith("in_transit:"):
        return AttackTiming.in_transit(text[len("in_transit:") :])
    raise ScenarioError(f"unknown timing {text!r}")


def parse_scenario_text(text: str) -> ScenarioConfig:
    values: Dict[str, object] = {}
    attacks: List[AttackSpec] = []
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"line {line_number}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "attack":
            attacks.append(parse_attack(value))
            continue
        if key in values:
            raise ScenarioError(f"line {line_number}: duplicate key {key!r}")
        if key in _SCALAR_KEYS:
            try:
                values[key] = _SCALAR_KEYS[key](value)
            except ValueError:
                raise ScenarioError(f"line {line_number}: bad value for {key!r}") from None
        elif key in _LIST_KEYS:
            try:
                values[key] = tuple(float(item) for item in value.split())
            except ValueError:
                raise ScenarioError(f"line {line_number}: bad value for {key!r}") from None
        else:
            raise ScenarioError(f"line {line_number}: unknown key {key!r}")

    try:
        ldp = LdpParams(
            f=values.pop("f", 0.5),
            p=values.pop("p", 0.75),
            q=values.pop("q", 0.25),
            k=values.pop("k", 3),
        )
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    config = ScenarioConfig(
        app=values.pop("app", "ldp"),
        device_count=values.pop("devices", 1),
        crypto_backend=values.pop("backend", "mac"),
        storage_mode=values.pop("storage", "digest"),
        seed=values.pop("seed", 0),
        collect_rounds=values.pop("collect_rounds", 1),
        pmem_kib=values.pop("pmem_kib", 32),
        ldp=ldp,
        true_freqs=values.pop("true_freqs", ()),
        feature_dim=values.pop("feature_dim", 2),
        epochs=values.pop("epochs", 100),
        alpha=values.pop("alpha", 0.05),
        eta=values.pop("eta", 1.0),
        true_w=values.pop("true_w", ()),
        true_b=values.pop("true_b", 0.0),
        noise=values.pop("noise", 0.0),
        attacks=tuple(attacks),
    )
    config.validate()
    return config


def load_scenario(path: str) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as handle:
        return parse_scenario_text(handle.read())


# -- run results ----------------------------------------------------------------


@dataclass
class InstanceResult:
    phase: str
    device: int
    round_index: int
    request: PoSXRequest
    abort_reason: str
    response: Optional[PoSXResponse]
    verdict: Verdict


@dataclass
class DeviceSummary:
    device: int
    ok: bool = True
    failed_phase: str = ""
    failure_cause: str = ""
    abort_reason: str = ""


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    records: List[TranscriptRecord]
    instances: List[InstanceResult]
    devices: List[DeviceSummary]
    ldp_reports: List[np.ndarray] = field(default_factory=list)
    ldp_counts: Optional[np.ndarray] = None
    ldp_estimate: Optional[np.ndarray] = None
    fl_base: Optional[ModelWeights] = None
    fl_updates: List[ModelWeights] = field(default_factory=list)
    fl_global: Optional[ModelWeights] = None

    @property
    def all_ok(self) -> bool:
        return all(summary.ok for summary in self.devices)

    def verdict_table(self) -> Tuple[Tuple[str, int, int, bool, str, str], ...]:
        """Backend/storage-independent view of every instance outcome."""
        return tuple(
            (
                inst.phase,
                inst.device,
                inst.round_index,
                inst.verdict.ok,
                inst.verdict.failure_cause or "",
                inst.abort_reason,
            )
            for inst in self.instances
        )

    def summary_text(self) -> str:
        cfg = self.config
        lines = [
            f"app = {cfg.app}",
            f"devices = {cfg.device_count}",
            f"backend = {cfg.crypto_backend}",
            f"storage = {cfg.storage_mode}",
            f"seed = {cfg.seed}",
        ]
        for summary in self.devices:
            prefix = f"device.{summary.device}"
            lines.append(f"{prefix}.verdict = {'ok' if summary.ok else 'fail'}")
            if not summary.ok:
                lines.append(f"{prefix}.phase = {summary.failed_phase}")
                lines.append(f"{prefix}.cause = {summary.failure_cause}")
                if summary.abort_reason:
                    lines.append(f"{prefix}.abort = {summary.abort_reason}")
        lines.append(f"all_ok = {'true' if self.all_ok else 'false'}")
        if cfg.app == "ldp":
            lines.append("aggregate.kind = ldp")
            lines.append(f"aggregate.reports = {len(self.ldp_reports)}")
            if self.ldp_estimate is not None:
                for value, count in enumerate(self.ldp_counts):
                    lines.append(f"aggregate.count.{value} = {int(count)}")
                for value, estimate in enumerate(self.ldp_estimate):
                    lines.append(f"aggregate.est.{value} = {float(estimate)!r}")
        else:
            lines.append("aggregate.kind = fl")
            lines.append(f"aggregate.updates = {len(self.fl_updates)}")
            if self.fl_global is not None:
                for index, value in enumerate(self.fl_global.w):
                    lines.append(f"aggregate.w.{index} = {float(value)!r}")
                lines.append(f"aggregate.b = {float(self.fl_global.b)!r}")
        return "\n".join(lines) + "\n"

    def reports_text(self) -> str:
        """Accepted reports, one hex-packed vector per line (the aggregator input)."""
        return "".join(pack_bits(report).hex() + "\n" for report in self.ldp_reports)


# -- orchestration ----------------------------------------------------------------


class _Recorder:
    """Builds the transcript in canonical (phase, device, sequence) order."""

    def __init__(self) -> None:
        self.records: List[TranscriptRecord] = []
        self._seq: Dict[Tuple[str, int], int] = {}
        self.phase = ""

    def _next(self, device: int) -> int:
        key = (self.phase, device)
        seq = self._seq.get(key, 0)
        self._seq[key] = seq + 1
        return seq

    def emit(self, kind: str, device: int, extra: Sequence[Tuple[str, bytes]]) -> None:
        fields = base_fields(self.phase, device, self._next(device)) + list(extra)
        self.records.append(TranscriptRecord(kind=kind, fields=tuple(fields)))

    def tamper(self, device: int, spec: AttackSpec) -> None:
        self.emit(
            "tamper",
            device,
            [("attack", spec.kind.encode()), ("detail", spec.describe().encode())],
        )

    def hook_for(self, device: int):
        def hook(name: str, fields: Dict[str, bytes]) -> None:
            self.emit("transition", device, [("name", name.encode())] + list(fields.items()))

        return hook


def _build_sensor(cfg: ScenarioConfig, device_index: int):
    rng = substream(cfg.seed, "device", str(device_index), "trace")
    if cfg.app == "ldp":
        freqs = cfg.padded_true_freqs()
        domain = cfg.ldp.domain_size

        def sense_reading() -> int:
            return int(rng.choice(domain, p=freqs))

        return sense_reading

    if cfg.true_w:
        true_w = np.asarray(cfg.true_w, dtype=np.float64)
    else:
        true_w = substream(cfg.seed, "fl", "model").standard_normal(cfg.feature_dim)
    true_b = cfg.true_b

    def sense_row():
        x = rng.standard_normal(cfg.feature_dim)
        y = float(true_w @ x + true_b)
        if cfg.noise > 0:
            y += cfg.noise * float(rng.standard_normal())
        return x, y

    return sense_row


def _plan_instance(cfg: ScenarioConfig, phase: str, base_weights: Optional[ModelWeights]):
    if cfg.app == "ldp":
        if phase == PHASE_SETUP:
            return apps.LDP_INIT, b""
        return apps.LDP_COLLECT, cfg.ldp.pack()
    if phase == PHASE_SETUP:
        return apps.FL_INIT, b""
    if phase == PHASE_COLLECT:
        return apps.FL_SENSE, b""
    training = TrainingConfig(epochs=cfg.epochs, alpha=cfg.alpha)
    return apps.FL_TRAIN, pack_train_input(base_weights, training)


def _attack_event(spec: AttackSpec) -> AsyncEvent:
    kind = "patch_pmem" if spec.kind == ATTACK_CORRUPT_FUNCTION else "patch_state"
    return AsyncEvent(kind=kind, target=spec.target, offset=spec.patch_offset, data=spec.patch_data)


def apply_attack(
    spec: AttackSpec,
    target,
    *,
    adversary_key=None,
    previous_wire: Optional[bytes] = None,
):
    """Catalog semantics of one attack.

    Between-instance kinds take a device as target and mutate it through an
    injected event (so an attack attempted mid-execution is suppressed like
    any other interrupt).  In-transit kinds take wire bytes and return the
    bytes the receiver will see: a patched request, the previous request
    verbatim, a request re-signed under the adversary's own key, a response
    with a patched output, or None for a dropped message.
    """
    if spec.kind in (ATTACK_CORRUPT_FUNCTION, ATTACK_TAMPER_STATE):
        target.inject_async_event(_attack_event(spec))
        return target
    if spec.kind == ATTACK_TAMPER_REQUEST:
        return apply_patch(target, spec.patch_offset, spec.patch_data)
    if spec.kind == ATTACK_REPLAY_REQUEST:
        if previous_wire is None:
            raise ScenarioError("replay needs a previously observed request")
        return previous_wire
    if spec.kind == ATTACK_FORGE_REQUEST:
        request = PoSXRequest.from_wire(target)
        if adversary_key is None:
            adversary_key = crypto.generate_keypair(
                request.sigma_vrf.scheme_id, np.random.default_rng().bytes(32)
            )
        forged = PoSXRequest(
            f_id=request.f_id,
            input=request.input,
            c_vrf=request.c_vrf,
            sigma_vrf=crypto.sign(adversary_key, request.digest()),
        )
        return forged.to_wire()
    if spec.kind == ATTACK_TAMPER_OUTPUT:
        response = PoSXResponse.from_wire(target)
        patched = apply_patch(response.output, spec.patch_offset, spec.patch_data)
        return PoSXResponse(patched, response.sigma).to_wire()
    if spec.kind == ATTACK_DROP_RESPONSE:
        return None
    raise ScenarioError(f"attack {spec.kind!r} has no application semantics")


def fleet_registry(cfg: ScenarioConfig) -> Tuple[bytes, OfflineRegistry]:
    """Expected program image plus the offline-validation registry for a fleet.

    Both are pure functions of the config: keys re-derive from the seed and
    the image is what registration alone produces, so transcripts can be
    re-checked without access to the original run.
    """
    binaries = apps.app_binaries(cfg.app)
    nsw = NonSecureWorld(size=cfg.pmem_kib * 1024)
    for index, fb in enumerate(binaries):
        nsw.register(fb, index * apps.FUNCTION_STRIDE)
    device_keys = {}
    for index in range(cfg.device_count):
        key = crypto.generate_keypair(
            cfg.crypto_backend, derive_bytes(cfg.seed, "device", str(index), "key")
        )
        device_keys[index] = key.public_part
    registry = OfflineRegistry(
        scheme=cfg.crypto_backend,
        device_keys=device_keys,
        functions=apps.expectations(binaries),
    )
    return bytes(nsw.pmem), registry


def run_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    """Execute the phase schedule for every device and aggregate accepted outputs.

    A device whose instance fails (no response, bad proof, or bad metadata)
    is excluded from all later phases and from aggregation.
    """
    cfg.validate()
    phases = cfg.phases()
    recorder = _Recorder()

    sk_vrf = crypto.generate_keypair(cfg.crypto_backend, derive_bytes(cfg.seed, "verifier", "key"))
    verifier = Verifier(sk_vrf)

    devices: List[ProverDevice] = []
    for index in range(cfg.device_count):
        sk_dev = crypto.generate_keypair(
            cfg.crypto_backend, derive_bytes(cfg.seed, "device", str(index), "key")
        )
        device = ProverDevice(
            sk_dev,
            verifier.pk_vrf,
            storage_mode=cfg.storage_mode,
            pmem_size=cfg.pmem_kib * 1024,
            rng_seed=cfg.seed,
            rng_scope=f"device/{index}",
            sensor=_build_sensor(cfg, index),
            trace_hook=recorder.hook_for(index),
        )
        binaries = apps.app_binaries(cfg.app)
        apps.install(device, binaries)
        verifier.register_device(
            index, sk_dev.public_only(), device.pmem_image(), apps.expectations(binaries)
        )
        devices.append(device)

    before_setup: Dict[int, List[AttackSpec]] = {}
    between: Dict[Tuple[str, int], List[AttackSpec]] = {}
    in_transit: Dict[Tuple[str, int], List[AttackSpec]] = {}
    for spec in cfg.attacks:
        if spec.kind == ATTACK_NONE:
            continue
        if spec.timing.kind == "before_setup":
            before_setup.setdefault(spec.device, []).append(spec)
        elif spec.timing.kind == "between_phases":
            between.setdefault((spec.timing.before_phase, spec.device), []).append(spec)
        else:
            in_transit.setdefault((spec.timing.phase, spec.device), []).append(spec)

    adversary_key = crypto.generate_keypair(
        cfg.crypto_backend, derive_bytes(cfg.seed, "adversary", "key")
    )

    instances: List[InstanceResult] = []
    summaries = [DeviceSummary(device=index) for index in range(cfg.device_count)]
    last_request_wire: Dict[int, bytes] = {}
    base_weights = ModelWeights(w=np.zeros(cfg.feature_dim), b=0.0) if cfg.app == "fl" else None
    accepted_reports: List[np.ndarray] = []
    accepted_updates: List[ModelWeights] = []

    for phase_index, phase in enumerate(phases):
        recorder.phase = phase
        for device_index, device in enumerate(devices):
            summary = summaries[device_index]
            pending: List[AttackSpec] = []
            if phase_index == 0:
                pending.extend(before_setup.get(device_index, []))
            pending.extend(between.get((phase, device_index), []))
            for spec in pending:
                apply_attack(spec, device)
                recorder.tamper(device_index, spec)
            if not summary.ok:
                continue
            channel_attacks = in_transit.get((phase, device_index), [])
            for round_index in range(cfg.rounds(phase)):
                f_id, input_bytes = _plan_instance(cfg, phase, base_weights)
                request = verifier.make_request(device_index, f_id, input_bytes)
                recorder.emit(
                    "request",
                    device_index,
                    [
                        ("f", request.f_id.encode()),
                        ("i", request.input),
                        ("c", u64le(request.c_vrf)),
                        ("sig", request.sigma_vrf.data),
                        ("scheme", request.sigma_vrf.scheme_id.encode()),
                    ],
                )
                wire = request.to_wire()
                for spec in channel_attacks:
                    if spec.kind not in (
                        ATTACK_TAMPER_REQUEST,
                        ATTACK_REPLAY_REQUEST,
                        ATTACK_FORGE_REQUEST,
                    ):
                        continue
                    wire = apply_attack(
                        spec,
                        wire,
                        adversary_key=adversary_key,
                        previous_wire=last_request_wire.get(device_index),
                    )
                    recorder.tamper(device_index, spec)

                abort_reason = ""
                response: Optional[PoSXResponse] = None
                try:
                    delivered = PoSXRequest.from_wire(wire)
                except WireFormatError:
                    # a request the gate cannot even parse is refused like
                    # one carrying a bad tag
                    abort_reason = "bad_request_tag"
                else:
                    outcome = device.execute(delivered)
                    if outcome.ok:
                        response_wire: Optional[bytes] = outcome.response.to_wire()
                        for spec in channel_attacks:
                            if spec.kind not in (ATTACK_TAMPER_OUTPUT, ATTACK_DROP_RESPONSE):
                                continue
                            if response_wire is not None:
                                response_wire = apply_attack(spec, response_wire)
                            recorder.tamper(device_index, spec)
                        if response_wire is not None:
                            response = PoSXResponse.from_wire(response_wire)
                    else:
                        abort_reason = outcome.abort_reason

                if abort_reason:
                    recorder.emit("abort", device_index, [("reason", abort_reason.encode())])
                if response is not None:
                    recorder.emit(
                        "response",
                        device_index,
                        [
                            ("f", request.f_id.encode()),
                            ("i", request.input),
                            ("c", u64le(request.c_vrf)),
                            ("o", response.output),
                            ("sig", response.sigma.data),
                            ("scheme", response.sigma.scheme_id.encode()),
                        ],
                    )
                last_request_wire[device_index] = request.to_wire()
                verdict = verifier.validate_posx(device_index, request, response)
                recorder.emit(
                    "verdict",
                    device_index,
                    [
                        ("result", b"ok" if verdict.ok else b"fail"),
                        ("cause", (verdict.failure_cause or "").encode()),
                    ],
                )
                instances.append(
                    InstanceResult(
                        phase=phase,
                        device=device_index,
                        round_index=round_index,
                        request=request,
                        abort_reason=abort_reason,
                        response=response,
                        verdict=verdict,
                    )
                )
                if verdict.ok:
                    if cfg.app == "ldp" and phase == PHASE_COLLECT:
                        accepted_reports.append(unpack_bits(response.output, cfg.ldp.domain_size))
                    elif cfg.app == "fl" and phase == PHASE_TRAIN:
                        accepted_updates.append(ModelWeights.deserialize(response.output))
                else:
                    summary.ok = False
                    summary.failed_phase = phase
                    summary.failure_cause = verdict.failure_cause or ""
                    summary.abort_reason = abort_reason
                    break

    result = ScenarioResult(
        config=cfg,
        records=recorder.records,
        instances=instances,
        devices=summaries,
        ldp_reports=accepted_reports,
        fl_base=base_weights,
        fl_updates=accepted_updates,
    )
    if cfg.app == "ldp" and accepted_reports:
        result.ldp_counts = report_counts(accepted_reports)
        result.ldp_estimate = estimate_frequency(accepted_reports, cfg.ldp)
    if cfg.app == "fl" and accepted_updates:
        aggregation = AggregationConfig(eta=cfg.eta, m=len(accepted_updates))
        result.fl_global = fedavg_aggregate(base_weights, accepted_updates, aggregation)
    return result
