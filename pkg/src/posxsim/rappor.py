"""Basic RAPPOR: unary encoding, memoized permanent response, instantaneous response.

A k-bit sensor reading becomes a 2^k-bit one-hot vector, is permanently
randomized once per distinct input (and cached, which is what makes repeated
reports of the same value unlinkable over time without fresh leakage), then
instantaneously randomized on every report.  The aggregator inverts the
randomization in expectation to estimate per-value frequencies.

Bit vectors are numpy uint8 arrays of 0/1; the sampling helpers broadcast
over leading axes so Monte-Carlo checks can run as single array operations.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

MAX_K = 12


class LdpParamError(ValueError):
    pass


class EmptyReportsError(ValueError):
    pass


@dataclass(frozen=True)
class LdpParams:
    """Randomization probabilities and reading bit-width.

    The estimator additionally needs p != q and f < 1; that is checked where
    the inversion happens, since the response stages themselves are well
    defined for any probabilities (p == q simply destroys all signal).
    """

    f: float
    p: float
    q: float
    k: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.f < 1.0:
            raise LdpParamError(f"f must be in [0, 1), got {self.f}")
        for name, value in (("p", self.p), ("q", self.q)):
            if not 0.0 <= value <= 1.0:
                raise LdpParamError(f"{name} must be in [0, 1], got {value}")
        if not 1 <= self.k <= MAX_K:
            raise LdpParamError(f"k must be in [1, {MAX_K}], got {self.k}")

    @property
    def domain_size(self) -> int:
        return 1 << self.k

    def pack(self) -> bytes:
        return struct.pack("<dddB", self.f, self.p, self.q, self.k)

    @classmethod
    def unpack(cls, data: bytes) -> "LdpParams":
        if len(data) != struct.calcsize("<dddB"):
            raise LdpParamError(f"packed params must be {struct.calcsize('<dddB')} bytes")
        f, p, q, k = struct.unpack("<dddB", data)
        return cls(f=f, p=p, q=q, k=k)


def unary_encode(reading: int, k: int) -> np.ndarray:
    """One-hot 2^k-bit vector with the reading-th bit set."""
    if not 1 <= k <= MAX_K:
        raise LdpParamError(f"k must be in [1, {MAX_K}], got {k}")
    if not 0 <= reading < (1 << k):
        raise ValueError(f"reading {reading} does not fit in {k} bits")
    bits = np.zeros(1 << k, dtype=np.uint8)
    bits[reading] = 1
    return bits


def decode_unary(bits: np.ndarray) -> int:
    """Index of the single set bit; inverse of unary_encode."""
    (positions,) = np.nonzero(bits)
    if len(positions) != 1:
        raise ValueError(f"not a one-hot vector (weight {len(positions)})")
    return int(positions[0])


def prr_bit_probabilities(f: float) -> Tuple[float, float, float]:
    """Exact per-bit mass split of the permanent stage: (force-1, force-0, keep)."""
    return (f / 2.0, f / 2.0, 1.0 - f)


def prr_conditional(f: float) -> Tuple[float, float]:
    """Exact (P[out=1 | in=1], P[out=1 | in=0]) for the permanent stage."""
    force_one, _force_zero, keep = prr_bit_probabilities(f)
    return (force_one + keep, force_one)


def irr_conditional(p: float, q: float) -> Tuple[float, float]:
    """Exact (P[out=1 | in=1], P[out=1 | in=0]) for the instantaneous stage."""
    return (p, q)


def prr_sample(bits: np.ndarray, f: float, rng: np.random.Generator) -> np.ndarray:
    """One permanent-randomization draw per bit: 1 w.p. f/2, 0 w.p. f/2, else kept."""
    u = rng.random(np.shape(bits))
    forced_one = u < f / 2.0
    forced_zero = (u >= f / 2.0) & (u < f)
    out = np.where(forced_one, 1, np.where(forced_zero, 0, bits))
    return out.astype(np.uint8)


def irr_sample(bits: np.ndarray, p: float, q: float, rng: np.random.Generator) -> np.ndarray:
    """One instantaneous draw per bit: 1 w.p. p where set, w.p. q where clear."""
    u = rng.random(np.shape(bits))
    threshold = np.where(np.asarray(bits) == 1, p, q)
    return (u < threshold).astype(np.uint8)


def pack_bits(bits: np.ndarray) -> bytes:
    """Little-endian packing, bit 0 first; this is the hashed/wire form."""
    return np.packbits(np.asarray(bits, dtype=np.uint8), bitorder="little").tobytes()


def unpack_bits(data: bytes, n_bits: int) -> np.ndarray:
    expected = (n_bits + 7) // 8
    if len(data) != expected:
        raise ValueError(f"need {expected} bytes for {n_bits} bits, got {len(data)}")
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=n_bits, bitorder="little")


class PrrCache:
    """The memoized permanent-response mapping; this is the device's private state.

    Serialization is canonical -- entries sorted by the packed input vector,
    each entry the packed input followed by the packed output -- because the
    bytes are what gets committed to the secure world and hashed.
    """

    def __init__(self, k: int):
        if not 1 <= k <= MAX_K:
            raise LdpParamError(f"k must be in [1, {MAX_K}], got {k}")
        self.k = k
        self.entries: Dict[bytes, bytes] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, bits: np.ndarray) -> np.ndarray:
        key = pack_bits(bits)
        packed = self.entries.get(key)
        if packed is None:
            raise KeyError("no cached response for this input")
        return unpack_bits(packed, 1 << self.k)

    def insert(self, bits: np.ndarray, randomized: np.ndarray) -> None:
        self.entries[pack_bits(bits)] = pack_bits(randomized)

    def __contains__(self, bits) -> bool:
        return pack_bits(bits) in self.entries

    def serialize(self) -> bytes:
        return b"".join(key + self.entries[key] for key in sorted(self.entries))

    @classmethod
    def deserialize(cls, data: bytes, k: int) -> "PrrCache":
        cache = cls(k)
        vec_len = ((1 << k) + 7) // 8
        entry_len = 2 * vec_len
        if len(data) % entry_len != 0:
            raise ValueError(f"cache bytes not a multiple of entry size {entry_len}")
        for pos in range(0, len(data), entry_len):
            key = data[pos : pos + vec_len]
            value = data[pos + vec_len : pos + entry_len]
            cache.entries[bytes(key)] = bytes(value)
        return cache


def prr(
    bits: np.ndarray, params: LdpParams, cache: PrrCache, rng: np.random.Generator
) -> np.ndarray:
    """Permanent randomized response: sampled once per distinct input, then cached."""
    if len(bits) != params.domain_size:
        raise ValueError(f"vector length {len(bits)} != 2^k = {params.domain_size}")
    if bits in cache:
        return cache.lookup(bits)
    randomized = prr_sample(bits, params.f, rng)
    cache.insert(bits, randomized)
    return randomized


def irr(bits: np.ndarray, params: LdpParams, rng: np.random.Generator) -> np.ndarray:
    """Instantaneous randomized response: fresh draw every report, never cached."""
    if len(bits) != params.domain_size:
        raise ValueError(f"vector length {len(bits)} != 2^k = {params.domain_size}")
    return irr_sample(bits, params.p, params.q, rng)


def ldp_dc(
    read_sensor,
    params: LdpParams,
    cache: PrrCache,
    prr_rng: np.random.Generator,
    irr_rng: np.random.Generator,
) -> np.ndarray:
    """One full report: read, unary-encode, permanent stage, instantaneous stage.

    The permanent and instantaneous stages draw from separate streams so the
    cached mapping is reproducible regardless of how many reports were made.
    """
    reading = int(read_sensor())
    encoded = unary_encode(reading, params.k)
    permanent = prr(encoded, params, cache, prr_rng)
    return irr(permanent, params, irr_rng)


def init_state() -> bytes:
    """Serialized empty response cache; what the setup routine commits."""
    return b""


def report_counts(reports: Sequence[np.ndarray]) -> np.ndarray:
    """c_x: how many reports have bit x set."""
    if len(reports) == 0:
        raise EmptyReportsError("no reports")
    stacked = np.vstack([np.asarray(r, dtype=np.uint8) for r in reports])
    return stacked.sum(axis=0)


def estimate_frequency(reports: Sequence[np.ndarray], params: LdpParams) -> np.ndarray:
    """Unbiased per-value frequency estimates from randomized reports.

    For each value x with c_x set bits over n reports:

        estimate_x = (c_x - (q + f*p/2 - f*q/2) * n) / ((1 - f) * (p - q) * n)

    Estimates are deliberately unclipped; values outside [0, 1] are
    informative about noise and must be preserved by callers that aggregate
    further.
    """
    if params.p == params.q:
        raise LdpParamError("estimator undefined for p == q")
    counts = report_counts(reports)
    n = len(reports)
    baseline = (params.q + 0.5 * params.f * params.p - 0.5 * params.f * params.q) * n
    denominator = (1.0 - params.f) * (params.p - params.q) * n
    return (counts - baseline) / denominator


def estimate_standard_errors(
    true_frequencies: Sequence[float], params: LdpParams, n: int
) -> np.ndarray:
    """Binomial standard error of each estimate, propagated through the inversion.

    c_x is Binomial(n, P_x) with P_x the marginal set-probability of bit x
    under the two randomization stages, so the estimate's standard error is
    sqrt(P_x (1 - P_x) / n) divided by the inversion denominator.
    """
    given_one, given_zero = marginal_bit_probability(params)
    t = np.asarray(true_frequencies, dtype=float)
    p_set = t * given_one + (1.0 - t) * given_zero
    denominator = (1.0 - params.f) * (params.p - params.q)
    return np.sqrt(p_set * (1.0 - p_set) / n) / denominator


def marginal_bit_probability(params: LdpParams) -> Tuple[float, float]:
    """Exact (P[report bit = 1 | true bit = 1], P[... | true bit = 0])."""
    prr_one, prr_zero = prr_conditional(params.f)
    return (
        params.p * prr_one + params.q * (1.0 - prr_one),
        params.p * prr_zero + params.q * (1.0 - prr_zero),
    )


def read_report_file(lines: Sequence[str], k: int) -> List[np.ndarray]:
    """Parse hex-packed report lines; raises ValueError naming the bad line."""
    n_bits = 1 << k
    reports = []
    for index, line in enumerate(lines, start=1):
        text = line.strip()
        if not text:
            continue
        try:
            reports.append(unpack_bits(bytes.fromhex(text), n_bits))
        except ValueError as exc:
            raise ValueError(f"line {index}: {exc}") from None
    return reports
