"""Wire codec and digest recipe tests."""

import pytest

from posxsim import crypto
from posxsim.messages import (
    PoSXRequest,
    PoSXResponse,
    WireFormatError,
    pmem_measurement,
    proof_digest,
    request_digest,
    u64le,
)


def test_u64_range():
    assert u64le(0) == b"\x00" * 8
    assert u64le(2**64 - 1) == b"\xff" * 8
    with pytest.raises(ValueError):
        u64le(2**64)
    with pytest.raises(ValueError):
        u64le(-1)


def test_request_wire_round_trip():
    key = crypto.generate_keypair("mac", b"\x01" * 32)
    digest = request_digest("fn", b"input", 42)
    request = PoSXRequest("fn", b"input", 42, crypto.sign(key, digest))
    decoded = PoSXRequest.from_wire(request.to_wire())
    assert decoded == request
    assert decoded.digest() == digest


def test_response_wire_round_trip():
    response = PoSXResponse(b"output bytes", crypto.AuthTag("sig", b"\xab" * 64))
    assert PoSXResponse.from_wire(response.to_wire()) == response


def test_from_wire_rejects_garbage():
    with pytest.raises(WireFormatError):
        PoSXRequest.from_wire(b"\x00\x01\x02")
    with pytest.raises(WireFormatError):
        PoSXResponse.from_wire(b"")


def test_from_wire_rejects_reordered_fields():
    response = PoSXResponse(b"o", crypto.AuthTag("mac", b"t" * 32))
    fields = crypto.decode_canonical(response.to_wire())
    shuffled = crypto.encode_canonical(list(reversed(fields)))
    with pytest.raises(WireFormatError):
        PoSXResponse.from_wire(shuffled)


def test_digest_recipes_are_distinct_per_argument():
    base = pmem_measurement(b"\xff" * 64, "f", b"i", 1)
    assert pmem_measurement(b"\xfe" + b"\xff" * 63, "f", b"i", 1) != base
    assert pmem_measurement(b"\xff" * 64, "g", b"i", 1) != base
    assert pmem_measurement(b"\xff" * 64, "f", b"j", 1) != base
    assert pmem_measurement(b"\xff" * 64, "f", b"i", 2) != base
    assert proof_digest(base, b"out") != proof_digest(base, b"out2")
