"""Canonical byte encoding, hashing, and pluggable authenticator backends.

Every multi-field value that gets hashed or signed anywhere in the simulator
goes through :func:`encode_canonical`, so digests are bit-exact and
reproducible across runs.  Authenticators are selected by a string scheme id;
two backends ship by default:

* ``"mac"`` -- HMAC-SHA256 over the digest (symmetric; public part equals the
  secret part).
* ``"sig"`` -- Ed25519 over the digest (asymmetric, deterministic signatures).

Additional schemes (e.g. a post-quantum signature) can be added through
:func:`register_backend` without touching any caller.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass
from typing import Dict, List, Protocol, Sequence, Tuple

from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

DIGEST_LEN = 32

Field = Tuple[str, bytes]


class CryptoConfigError(Exception):
    """Unknown backend identifier or unusable key material."""


class EncodingError(ValueError):
    """Byte string is not a well-formed canonical encoding."""


@dataclass(frozen=True)
class Digest:
    """A SHA-256 output; always exactly 32 bytes."""

    data: bytes

    def __post_init__(self) -> None:
        if len(self.data) != DIGEST_LEN:
            raise ValueError(f"digest must be {DIGEST_LEN} bytes, got {len(self.data)}")

    def hex(self) -> str:
        return self.data.hex()


@dataclass(frozen=True)
class AuthTag:
    """An authenticator over a digest, opaque except for its scheme id."""

    scheme_id: str
    data: bytes


@dataclass(frozen=True)
class KeyMaterial:
    """Key pair for one backend.

    Under the MAC backend the public part equals the secret part (shared
    key).  The secret part must never be written into transcripts or wire
    messages; repr omits it so it cannot leak through logging either.
    """

    scheme_id: str
    secret_part: bytes
    public_part: bytes

    def public_only(self) -> "KeyMaterial":
        return KeyMaterial(self.scheme_id, b"", self.public_part)

    def __repr__(self) -> str:
        return f"KeyMaterial(scheme_id={self.scheme_id!r}, public_part={self.public_part.hex()!r})"


def encode_canonical(fields: Sequence[Field]) -> bytes:
    """Length-prefixed field concatenation; injective over field lists.

    Each field contributes: 4-byte little-endian label length, the label
    bytes, 8-byte little-endian value length, the value bytes.
    """
    parts = []
    for label, value in fields:
        label_bytes = label.encode("utf-8")
        parts.append(struct.pack("<I", len(label_bytes)))
        parts.append(label_bytes)
        parts.append(struct.pack("<Q", len(value)))
        parts.append(value)
    return b"".join(parts)


def decode_canonical(data: bytes) -> List[Field]:
    """Inverse of :func:`encode_canonical`; raises EncodingError on malformed input."""
    fields: List[Field] = []
    pos = 0
    total = len(data)
    while pos < total:
        if pos + 4 > total:
            raise EncodingError("truncated label length")
        (label_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + label_len > total:
            raise EncodingError("truncated label")
        try:
            label = data[pos : pos + label_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise EncodingError("label is not valid UTF-8") from exc
        pos += label_len
        if pos + 8 > total:
            raise EncodingError("truncated value length")
        (value_len,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        if pos + value_len > total:
            raise EncodingError("truncated value")
        fields.append((label, bytes(data[pos : pos + value_len])))
        pos += value_len
    return fields


def hash_bytes(data: bytes) -> Digest:
    """SHA-256, pinned so transcripts are comparable across implementations."""
    return Digest(hashlib.sha256(data).digest())


def hash_fields(fields: Sequence[Field]) -> Digest:
    """Hash of the canonical encoding of a field list."""
    return hash_bytes(encode_canonical(fields))


class AuthBackend(Protocol):
    scheme_id: str

    def generate_keypair(self, seed: bytes) -> KeyMaterial: ...

    def sign(self, key: KeyMaterial, digest: Digest) -> AuthTag: ...

    def verify(self, key: KeyMaterial, tag: AuthTag, digest: Digest) -> bool: ...


class MacBackend:
    """Keyed-MAC authenticator: HMAC-SHA256 over the 32-byte digest."""

    scheme_id = "mac"

    def generate_keypair(self, seed: bytes) -> KeyMaterial:
        if len(seed) != 32:
            raise CryptoConfigError("mac backend needs a 32-byte seed")
        return KeyMaterial(self.scheme_id, seed, seed)

    def sign(self, key: KeyMaterial, digest: Digest) -> AuthTag:
        mac = hmac.new(key.secret_part, digest.data, hashlib.sha256).digest()
        return AuthTag(self.scheme_id, mac)

    def verify(self, key: KeyMaterial, tag: AuthTag, digest: Digest) -> bool:
        expected = hmac.new(key.public_part, digest.data, hashlib.sha256).digest()
        # compare_digest: constant-time, required for the MAC path
        return hmac.compare_digest(expected, tag.data)


class Ed25519Backend:
    """Digital-signature authenticator; deterministic, so reruns are byte-identical."""

    scheme_id = "sig"

    def generate_keypair(self, seed: bytes) -> KeyMaterial:
        if len(seed) != 32:
            raise CryptoConfigError("sig backend needs a 32-byte seed")
        private = Ed25519PrivateKey.from_private_bytes(seed)
        return KeyMaterial(self.scheme_id, seed, private.public_key().public_bytes_raw())

    def sign(self, key: KeyMaterial, digest: Digest) -> AuthTag:
        private = Ed25519PrivateKey.from_private_bytes(key.secret_part)
        return AuthTag(self.scheme_id, private.sign(digest.data))

    def verify(self, key: KeyMaterial, tag: AuthTag, digest: Digest) -> bool:
        try:
            public = Ed25519PublicKey.from_public_bytes(key.public_part)
            public.verify(tag.data, digest.data)
        except Exception:
            return False
        return True


_BACKENDS: Dict[str, AuthBackend] = {}


def register_backend(backend: AuthBackend) -> None:
    _BACKENDS[backend.scheme_id] = backend


def get_backend(scheme_id: str) -> AuthBackend:
    try:
        return _BACKENDS[scheme_id]
    except KeyError:
        raise CryptoConfigError(f"no authenticator backend registered as {scheme_id!r}") from None


def registered_schemes() -> Tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def generate_keypair(scheme_id: str, seed: bytes) -> KeyMaterial:
    return get_backend(scheme_id).generate_keypair(seed)


def sign(key: KeyMaterial, digest: Digest) -> AuthTag:
    return get_backend(key.scheme_id).sign(key, digest)


def verify(key: KeyMaterial, tag: AuthTag, digest: Digest) -> bool:
    """True iff tag authenticates digest under key's scheme.

    A scheme mismatch between tag and key is a verification failure, not an
    error: forged or cross-scheme tags must simply fail.
    """
    if tag.scheme_id != key.scheme_id:
        return False
    backend = _BACKENDS.get(key.scheme_id)
    if backend is None:
        return False
    try:
        return backend.verify(key, tag, digest)
    except Exception:
        return False


register_backend(MacBackend())
register_backend(Ed25519Backend())
