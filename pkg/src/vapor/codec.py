"""Canonical bytes, hashing, signatures and Merkle roots.

Every hash and signature in the protocol is taken over the output of the
``Writer`` below. The layout rules (see ``docs/wire-format.md``):

* unsigned integers are 8 bytes, big-endian;
* tags and flags are a single byte;
* byte strings and sequences carry a 4-byte big-endian length prefix;
* 32-byte digests and node ids are written raw (fixed width).

Hash is SHA-256, signatures are Ed25519. Both sit behind small functions so a
different scheme only touches this module.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Sequence, TypeVar

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

DIGEST_SIZE = 32
ZERO_DIGEST = bytes(DIGEST_SIZE)
LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"

T = TypeVar("T")


class DecodeError(ValueError):
    """Raised when bytes are not a canonical encoding of the requested type."""


class EmptyLeafSet(ValueError):
    """Raised when a Merkle root is requested for zero leaves."""


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


# --------------------------------------------------------------------------- #
# Writer / Reader
# --------------------------------------------------------------------------- #


class Writer:
    __slots__ = ("_parts",)

    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def u8(self, n: int) -> "Writer":
        if not 0 <= n < 256:
            raise ValueError(f"u8 out of range: {n}")
        self._parts.append(bytes((n,)))
        return self

    def u64(self, n: int) -> "Writer":
        if not 0 <= n < 1 << 64:
            raise ValueError(f"u64 out of range: {n}")
        self._parts.append(struct.pack(">Q", n))
        return self

    def fixed(self, data: bytes, size: int = DIGEST_SIZE) -> "Writer":
        if len(data) != size:
            raise ValueError(f"expected {size} bytes, got {len(data)}")
        self._parts.append(bytes(data))
        return self

    def var(self, data: bytes) -> "Writer":
        self._parts.append(struct.pack(">I", len(data)))
        self._parts.append(bytes(data))
        return self

    def text(self, s: str) -> "Writer":
        return self.var(s.encode("utf-8"))

    def seq(self, items: Sequence[T], write_item: Callable[["Writer", T], object]) -> "Writer":
        self._parts.append(struct.pack(">I", len(items)))
        for item in items:
            write_item(self, item)
        return self

    def raw(self, data: bytes) -> "Writer":
        self._parts.append(bytes(data))
        return self

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    __slots__ = ("_buf", "_pos")

    def __init__(self, data: bytes) -> None:
        self._buf = memoryview(bytes(data))
        self._pos = 0

    def _take(self, n: int) -> bytes:
        end = self._pos + n
        if end > len(self._buf):
            raise DecodeError(f"truncated input at offset {self._pos} (need {n} bytes)")
        out = self._buf[self._pos:end].tobytes()
        self._pos = end
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def fixed(self, size: int = DIGEST_SIZE) -> bytes:
        return self._take(size)

    def var(self) -> bytes:
        (n,) = struct.unpack(">I", self._take(4))
        return self._take(n)

    def text(self) -> str:
        try:
            return self.var().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(str(exc)) from None

    def seq(self, read_item: Callable[["Reader"], T]) -> list[T]:
        (n,) = struct.unpack(">I", self._take(4))
        if n > len(self._buf) - self._pos:
            raise DecodeError(f"sequence length {n} exceeds remaining input")
        return [read_item(self) for _ in range(n)]

    def at_end(self) -> bool:
        return self._pos == len(self._buf)

    def done(self) -> None:
        if self._pos != len(self._buf):
            raise DecodeError(f"{len(self._buf) - self._pos} trailing bytes")


def canonical_encode(obj) -> bytes:
    """Canonical bytes of any protocol object (anything with ``write``)."""
    w = Writer()
    obj.write(w)
    return w.getvalue()


def canonical_decode(cls, data: bytes):
    """Inverse of :func:`canonical_encode`; rejects trailing or short input."""
    r = Reader(data)
    obj = cls.read(r)
    r.done()
    # Injectivity guard: anything that decodes must re-encode to the same bytes.
    if canonical_encode(obj) != bytes(data):
        raise DecodeError(f"non-canonical {cls.__name__} encoding")
    return obj


# --------------------------------------------------------------------------- #
# Merkle tree
# --------------------------------------------------------------------------- #


def merkle_root(leaves: Iterable[bytes]) -> bytes:
    """Root with leaf = H(0x00 || leaf), node = H(0x01 || l || r); odd nodes promote."""
    level = [digest(LEAF_PREFIX + leaf) for leaf in leaves]
    if not level:
        raise EmptyLeafSet("merkle_root needs at least one leaf")
    while len(level) > 1:
        nxt = [digest(NODE_PREFIX + level[k] + level[k + 1]) for k in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


# --------------------------------------------------------------------------- #
# Keys and signatures
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class KeyPair:
    seed: bytes
    public_key: bytes

    @classmethod
    def from_seed(cls, seed: bytes) -> "KeyPair":
        if len(seed) != 32:
            raise ValueError("Ed25519 seed must be 32 bytes")
        pk = (
            Ed25519PrivateKey.from_private_bytes(seed)
            .public_key()
            .public_bytes(Encoding.Raw, PublicFormat.Raw)
        )
        return cls(bytes(seed), pk)

    @classmethod
    def derive(cls, label: str) -> "KeyPair":
        """Deterministic key from a text label (simulation identities)."""
        return cls.from_seed(digest(b"vapor/key/" + label.encode()))

    @property
    def node_id(self) -> bytes:
        return node_id_of(self.public_key)

    def sign(self, message: bytes) -> bytes:
        return _private(self.seed).sign(message)

    def __repr__(self) -> str:  # keep seeds out of logs
        return f"KeyPair(node_id={self.node_id.hex()[:12]}...)"


@lru_cache(maxsize=4096)
def _private(seed: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(seed)


def node_id_of(public_key: bytes) -> bytes:
    return digest(public_key)


@lru_cache(maxsize=1 << 18)
def verify_signature(public_key: bytes, message: bytes, signature: bytes) -> bool:
    # Pure in its arguments, so memoising is safe; proofs re-check the same
    # abstracts many times.
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True
