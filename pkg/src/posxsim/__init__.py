"""Desk-scale simulator for proofs of stateful execution.

A fleet of emulated trusted-hardware provers runs data-collection functions
(randomized-response privatization or local model training) under a
challenge-response protocol that binds each output to an authentic request,
the exact program image, and the untampered private state that produced it.
The adversary harness replays the catalog of poisoning attacks and records
deterministic transcripts.
"""

from .crypto import (
    AuthTag,
    CryptoConfigError,
    Digest,
    KeyMaterial,
    decode_canonical,
    encode_canonical,
    generate_keypair,
    hash_bytes,
    hash_fields,
    register_backend,
    sign,
    verify,
)
from .device import (
    AsyncEvent,
    ControlledInvocationError,
    ExecutionOutcome,
    FunctionBinary,
    NonSecureWorld,
    ProverDevice,
    RegistrationError,
    SecureWorldState,
    StateHandle,
)
from .fltrain import (
    AggregationConfig,
    Dataset,
    ModelWeights,
    TrainingConfig,
    fedavg_aggregate,
    gradient,
    init_dataset,
    mse,
    sense_store,
    train,
)
from .harness import (
    AttackSpec,
    AttackTiming,
    ScenarioConfig,
    ScenarioError,
    ScenarioResult,
    load_scenario,
    parse_scenario_text,
    run_scenario,
)
from .messages import PoSXRequest, PoSXResponse, pmem_measurement, proof_digest, request_digest
from .rappor import (
    LdpParams,
    PrrCache,
    estimate_frequency,
    init_state,
    irr,
    ldp_dc,
    prr,
    unary_encode,
)
from .verifier import FunctionExpectation, Verdict, Verifier

__version__ = "0.1.0"
