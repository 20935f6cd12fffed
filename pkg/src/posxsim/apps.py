"""Registered function packages for the two data-collection applications.

Each application contributes a setup routine that resets its private state
and one or more worker routines that use it.  All routines follow the
required shape: authenticate the state first, commit it last, and bail out
(letting the proof step refuse) if the state check fails.
"""

from __future__ import annotations

from typing import Dict, Iterable, List

from .device import FunctionBinary, ProverDevice, StateHandle, placeholder_code
from .fltrain import Dataset, init_dataset, sense_store, train, unpack_train_input
from .rappor import LdpParams, PrrCache, init_state, ldp_dc, pack_bits
from .verifier import FunctionExpectation

LDP_INIT = "init_state"
LDP_COLLECT = "ldp_dc"
LDP_STATE = "ldp_dc"

FL_INIT = "init_dataset"
FL_SENSE = "sense_store"
FL_TRAIN = "train"
FL_STATE = "dataset"

FUNCTION_STRIDE = 0x100


def _init_behavior(fresh_state: bytes):
    def behavior(_input: bytes, handle: StateHandle) -> bytes:
        if not handle.check_state(handle.read()):
            return b""
        handle.write(fresh_state)
        handle.set_state(fresh_state)
        return b""

    return behavior


def _ldp_collect_behavior(input_bytes: bytes, handle: StateHandle) -> bytes:
    params = LdpParams.unpack(input_bytes)
    stored = handle.read()
    if not handle.check_state(stored):
        return b""
    cache = PrrCache.deserialize(stored, params.k)
    report = ldp_dc(handle.sense, params, cache, handle.rng("prr"), handle.rng("irr"))
    updated = cache.serialize()
    handle.write(updated)
    handle.set_state(updated)
    return pack_bits(report)


def _fl_sense_behavior(_input: bytes, handle: StateHandle) -> bytes:
    stored = handle.read()
    if not handle.check_state(stored):
        return b""
    dataset = Dataset.deserialize(stored)
    x, y = handle.sense()
    updated = sense_store(dataset, (x, y)).serialize()
    handle.write(updated)
    handle.set_state(updated)
    return b""


def _fl_train_behavior(input_bytes: bytes, handle: StateHandle) -> bytes:
    base_weights, config = unpack_train_input(input_bytes)
    stored = handle.read()
    if not handle.check_state(stored):
        return b""
    dataset = Dataset.deserialize(stored)
    trained = train(dataset, base_weights, config)
    # training consumes the dataset without changing it; re-commit as-is
    handle.set_state(stored)
    return trained.serialize()


def ldp_binaries() -> List[FunctionBinary]:
    return [
        FunctionBinary(
            f_id=LDP_INIT,
            code=placeholder_code(LDP_INIT),
            behavior=_init_behavior(init_state()),
            state_id=LDP_STATE,
        ),
        FunctionBinary(
            f_id=LDP_COLLECT,
            code=placeholder_code(LDP_COLLECT),
            behavior=_ldp_collect_behavior,
            state_id=LDP_STATE,
        ),
    ]


def fl_binaries() -> List[FunctionBinary]:
    return [
        FunctionBinary(
            f_id=FL_INIT,
            code=placeholder_code(FL_INIT),
            behavior=_init_behavior(init_dataset()),
            state_id=FL_STATE,
        ),
        FunctionBinary(
            f_id=FL_SENSE,
            code=placeholder_code(FL_SENSE),
            behavior=_fl_sense_behavior,
            state_id=FL_STATE,
        ),
        FunctionBinary(
            f_id=FL_TRAIN,
            code=placeholder_code(FL_TRAIN),
            behavior=_fl_train_behavior,
            state_id=FL_STATE,
        ),
    ]


def app_binaries(app: str) -> List[FunctionBinary]:
    if app == "ldp":
        return ldp_binaries()
    if app == "fl":
        return fl_binaries()
    raise ValueError(f"unknown application {app!r}")


def install(device: ProverDevice, binaries: Iterable[FunctionBinary]) -> None:
    """Register the binaries at their conventional offsets."""
    for index, fb in enumerate(binaries):
        device.register_function(fb, index * FUNCTION_STRIDE)


def expectation_of(fb: FunctionBinary) -> FunctionExpectation:
    return FunctionExpectation(
        stateful=fb.stateful,
        checkstate_first=fb.checkstate_first,
        setstate_last=fb.setstate_last,
        no_interrupt_enable=fb.no_interrupt_enable,
    )


def expectations(binaries: Iterable[FunctionBinary]) -> Dict[str, FunctionExpectation]:
    return {fb.f_id: expectation_of(fb) for fb in binaries}
