"""Protocol objects and their canonical encodings.

All types are frozen dataclasses. Each one has ``write(Writer)`` and
``read(Reader)`` so :func:`vapor.codec.canonical_encode` / ``canonical_decode``
work on any of them.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import ClassVar, Union

from .codec import (
    DecodeError,
    KeyPair,
    Reader,
    Writer,
    canonical_encode,
    digest,
    merkle_root,
    node_id_of,
    verify_signature,
)

NodeId = bytes

PROOF_MAGIC = b"VPRF"
CHAIN_MAGIC = b"VCHN"
FORMAT_VERSION = 1


def short(node: bytes) -> str:
    return node.hex()[:8]


# --------------------------------------------------------------------------- #
# Values
# --------------------------------------------------------------------------- #


@dataclass(frozen=True, order=True)
class ValueId:
    """Base id plus the division path (1-based child indices)."""

    base: bytes
    path: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if len(self.base) != 32:
            raise ValueError("value base id must be 32 bytes")
        if any(k < 1 for k in self.path):
            raise ValueError("division child indices are 1-based")

    @classmethod
    def named(cls, label: str) -> "ValueId":
        return cls(digest(b"vapor/value/" + label.encode()))

    def child(self, index: int) -> "ValueId":
        return ValueId(self.base, self.path + (index,))

    @property
    def parent(self) -> "ValueId":
        if not self.path:
            raise ValueError("base value has no parent")
        return ValueId(self.base, self.path[:-1])

    @property
    def is_divided(self) -> bool:
        return bool(self.path)

    def lineage(self) -> list["ValueId"]:
        """Origin first, self last."""
        return [ValueId(self.base, self.path[:k]) for k in range(len(self.path) + 1)]

    def write(self, w: Writer) -> None:
        w.fixed(self.base).seq(self.path, Writer.u64)

    @classmethod
    def read(cls, r: Reader) -> "ValueId":
        base = r.fixed()
        path = tuple(r.seq(Reader.u64))
        try:
            return cls(base, path)
        except ValueError as exc:
            raise DecodeError(str(exc)) from None

    def __str__(self) -> str:
        return ".".join([self.base.hex()] + [str(k) for k in self.path])

    @classmethod
    def parse(cls, text: str) -> "ValueId":
        head, *rest = text.strip().split(".")
        return cls(bytes.fromhex(head), tuple(int(k) for k in rest))

    def label(self) -> str:
        return ".".join([self.base.hex()[:8]] + [str(k) for k in self.path])


# --------------------------------------------------------------------------- #
# Transaction receivers
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class Pay:
    node: NodeId
    TAG: ClassVar[int] = 0

    def write_body(self, w: Writer) -> None:
        w.fixed(self.node)

    @classmethod
    def read_body(cls, r: Reader) -> "Pay":
        return cls(r.fixed())


@dataclass(frozen=True)
class Miner:
    """Placeholder resolved to the proposer of the confirming main-chain block."""

    TAG: ClassVar[int] = 1

    def write_body(self, w: Writer) -> None:
        pass

    @classmethod
    def read_body(cls, r: Reader) -> "Miner":
        return cls()


@dataclass(frozen=True)
class Divide:
    """Split into ``len(amounts)`` children; child k gets ``amounts[k-1]``."""

    amounts: tuple[int, ...]
    TAG: ClassVar[int] = 2

    def write_body(self, w: Writer) -> None:
        w.seq(self.amounts, Writer.u64)

    @classmethod
    def read_body(cls, r: Reader) -> "Divide":
        return cls(tuple(r.seq(Reader.u64)))


@dataclass(frozen=True)
class LockFor:
    """Fast-payment deposit: the value may only go to ``beneficiary``."""

    beneficiary: NodeId
    TAG: ClassVar[int] = 3

    def write_body(self, w: Writer) -> None:
        w.fixed(self.beneficiary)

    @classmethod
    def read_body(cls, r: Reader) -> "LockFor":
        return cls(r.fixed())


@dataclass(frozen=True)
class BetLock:
    """Stake on the parity of the digest of block ``target_height``."""

    counterparty: NodeId
    target_height: int
    parity: int
    partner: ValueId
    TAG: ClassVar[int] = 4

    def write_body(self, w: Writer) -> None:
        w.fixed(self.counterparty).u64(self.target_height).u8(self.parity)
        self.partner.write(w)

    @classmethod
    def read_body(cls, r: Reader) -> "BetLock":
        counterparty, target, parity = r.fixed(), r.u64(), r.u8()
        if parity > 1:
            raise DecodeError("bet parity must be 0 or 1")
        return cls(counterparty, target, parity, ValueId.read(r))


@dataclass(frozen=True)
class FastClaim:
    """Beneficiary-side inclusion of a payer-signed off-chain transfer."""

    payer: NodeId
    payer_sn: int
    signature: bytes
    TAG: ClassVar[int] = 5

    def write_body(self, w: Writer) -> None:
        w.fixed(self.payer).u64(self.payer_sn).var(self.signature)

    @classmethod
    def read_body(cls, r: Reader) -> "FastClaim":
        return cls(r.fixed(), r.u64(), r.var())


Receiver = Union[Pay, Miner, Divide, LockFor, BetLock, FastClaim]
_RECEIVERS = {c.TAG: c for c in (Pay, Miner, Divide, LockFor, BetLock, FastClaim)}


@dataclass(frozen=True)
class Transaction:
    value: ValueId
    receiver: Receiver
    sn: int

    def write(self, w: Writer) -> None:
        self.value.write(w)
        w.u8(self.receiver.TAG)
        self.receiver.write_body(w)
        w.u64(self.sn)

    @classmethod
    def read(cls, r: Reader) -> "Transaction":
        value = ValueId.read(r)
        tag = r.u8()
        if tag not in _RECEIVERS:
            raise DecodeError(f"unknown receiver tag {tag}")
        receiver = _RECEIVERS[tag].read_body(r)
        return cls(value, receiver, r.u64())


def fast_transfer_message(value: ValueId, beneficiary: NodeId, payer_sn: int) -> bytes:
    return b"vapor/fast" + canonical_encode(Transaction(value, Pay(beneficiary), payer_sn))


def sign_fast_transfer(keys: KeyPair, value: ValueId, beneficiary: NodeId, payer_sn: int) -> FastClaim:
    sig = keys.sign(fast_transfer_message(value, beneficiary, payer_sn))
    return FastClaim(keys.node_id, payer_sn, sig)


# --------------------------------------------------------------------------- #
# Transaction blocks and abstracts
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class TransactionBlock:
    """b_i(x): ``creator``'s batch confirmed by the abstract in main-chain block ``height``."""

    creator: NodeId
    height: int
    transactions: tuple[Transaction, ...]

    @property
    def key(self) -> tuple[int, NodeId]:
        return (self.height, self.creator)

    @cached_property
    def root(self) -> bytes:
        return merkle_root(canonical_encode(tx) for tx in self.transactions)

    @cached_property
    def encoded(self) -> bytes:
        return canonical_encode(self)

    def txs_of(self, value: ValueId) -> list[Transaction]:
        return [tx for tx in self.transactions if tx.value == value]

    def write(self, w: Writer) -> None:
        w.fixed(self.creator).u64(self.height).seq(self.transactions, lambda w_, tx: tx.write(w_))

    @classmethod
    def read(cls, r: Reader) -> "TransactionBlock":
        return cls(r.fixed(), r.u64(), tuple(r.seq(Transaction.read)))


@dataclass(frozen=True)
class Abstract:
    """a(x) = [x, H(pk_x), Sig_x(x | H(pk_x) | MR(b))]."""

    node: NodeId
    key_hash: bytes
    signature: bytes

    def write(self, w: Writer) -> None:
        w.fixed(self.node).fixed(self.key_hash).var(self.signature)

    @classmethod
    def read(cls, r: Reader) -> "Abstract":
        return cls(r.fixed(), r.fixed(), r.var())

    @cached_property
    def digest(self) -> bytes:
        return digest(canonical_encode(self))


def abstract_message(node: NodeId, key_hash: bytes, root: bytes) -> bytes:
    return Writer().fixed(node).fixed(key_hash).fixed(root).getvalue()


def sign_abstract(keys: KeyPair, node: NodeId, transactions) -> Abstract:
    """Abstract over the Merkle root of ``transactions`` (or a block holding them)."""
    txs = transactions.transactions if isinstance(transactions, TransactionBlock) else transactions
    root = merkle_root(canonical_encode(tx) for tx in txs)
    key_hash = node_id_of(keys.public_key)
    return Abstract(node, key_hash, keys.sign(abstract_message(node, key_hash, root)))


def verify_abstract(abstract: Abstract, public_key: bytes, block: TransactionBlock) -> bool:
    if not block.transactions or block.creator != abstract.node:
        return False
    key_hash = node_id_of(public_key)
    if key_hash != abstract.key_hash or key_hash != abstract.node:
        return False
    return verify_signature(public_key, abstract_message(abstract.node, key_hash, block.root), abstract.signature)


# --------------------------------------------------------------------------- #
# Main-chain statements
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class AddValue:
    value: ValueId
    amount: int
    owner: NodeId
    TAG: ClassVar[int] = 0

    def write_body(self, w: Writer) -> None:
        self.value.write(w)
        w.u64(self.amount).fixed(self.owner)

    @classmethod
    def read_body(cls, r: Reader) -> "AddValue":
        return cls(ValueId.read(r), r.u64(), r.fixed())


@dataclass(frozen=True)
class DeleteValue:
    value: ValueId
    TAG: ClassVar[int] = 1

    def write_body(self, w: Writer) -> None:
        self.value.write(w)

    @classmethod
    def read_body(cls, r: Reader) -> "DeleteValue":
        return cls(ValueId.read(r))


def unlock_message(value: ValueId, owner: NodeId) -> bytes:
    return b"vapor/unlock" + canonical_encode(value) + owner


@dataclass(frozen=True)
class Unlock:
    value: ValueId
    owner: NodeId
    public_key: bytes
    signature: bytes
    TAG: ClassVar[int] = 2

    @classmethod
    def create(cls, keys: KeyPair, value: ValueId) -> "Unlock":
        return cls(value, keys.node_id, keys.public_key, keys.sign(unlock_message(value, keys.node_id)))

    def is_authentic(self) -> bool:
        return node_id_of(self.public_key) == self.owner and verify_signature(
            self.public_key, unlock_message(self.value, self.owner), self.signature
        )

    def write_body(self, w: Writer) -> None:
        self.value.write(w)
        w.fixed(self.owner).var(self.public_key).var(self.signature)

    @classmethod
    def read_body(cls, r: Reader) -> "Unlock":
        return cls(ValueId.read(r), r.fixed(), r.var(), r.var())


@dataclass(frozen=True)
class Objection:
    """Publishes the payer-signed fast transfer to void a pending unlock."""

    value: ValueId
    beneficiary: NodeId
    payer_sn: int
    signature: bytes
    TAG: ClassVar[int] = 3

    def write_body(self, w: Writer) -> None:
        self.value.write(w)
        w.fixed(self.beneficiary).u64(self.payer_sn).var(self.signature)

    @classmethod
    def read_body(cls, r: Reader) -> "Objection":
        return cls(ValueId.read(r), r.fixed(), r.u64(), r.var())


def bet_confirm_message(value_a: ValueId, value_b: ValueId, target_height: int) -> bytes:
    return b"vapor/betconfirm" + canonical_encode(value_a) + canonical_encode(value_b) + target_height.to_bytes(8, "big")


@dataclass(frozen=True)
class BetConfirm:
    value_a: ValueId
    value_b: ValueId
    node: NodeId
    target_height: int
    public_key: bytes
    signature: bytes
    TAG: ClassVar[int] = 4

    @classmethod
    def create(cls, keys: KeyPair, value_a: ValueId, value_b: ValueId, target_height: int) -> "BetConfirm":
        sig = keys.sign(bet_confirm_message(value_a, value_b, target_height))
        return cls(value_a, value_b, keys.node_id, target_height, keys.public_key, sig)

    def is_authentic(self) -> bool:
        return node_id_of(self.public_key) == self.node and verify_signature(
            self.public_key, bet_confirm_message(self.value_a, self.value_b, self.target_height), self.signature
        )

    def write_body(self, w: Writer) -> None:
        self.value_a.write(w)
        self.value_b.write(w)
        w.fixed(self.node).u64(self.target_height).var(self.public_key).var(self.signature)

    @classmethod
    def read_body(cls, r: Reader) -> "BetConfirm":
        return cls(ValueId.read(r), ValueId.read(r), r.fixed(), r.u64(), r.var(), r.var())


@dataclass(frozen=True)
class RegisterVerifier:
    algorithm_id: str
    spec_digest: bytes
    TAG: ClassVar[int] = 5

    def write_body(self, w: Writer) -> None:
        w.text(self.algorithm_id).fixed(self.spec_digest)

    @classmethod
    def read_body(cls, r: Reader) -> "RegisterVerifier":
        return cls(r.text(), r.fixed())


Statement = Union[AddValue, DeleteValue, Unlock, Objection, BetConfirm, RegisterVerifier]
_STATEMENTS = {c.TAG: c for c in (AddValue, DeleteValue, Unlock, Objection, BetConfirm, RegisterVerifier)}


def write_statement(w: Writer, st: Statement) -> None:
    w.u8(st.TAG)
    st.write_body(w)


def read_statement(r: Reader) -> Statement:
    tag = r.u8()
    if tag not in _STATEMENTS:
        raise DecodeError(f"unknown statement tag {tag}")
    return _STATEMENTS[tag].read_body(r)


@dataclass(frozen=True)
class StatementEnvelope:
    """Wrapper so a bare statement can go through canonical_encode."""

    statement: Statement

    def write(self, w: Writer) -> None:
        write_statement(w, self.statement)

    @classmethod
    def read(cls, r: Reader) -> "StatementEnvelope":
        return cls(read_statement(r))


# --------------------------------------------------------------------------- #
# Main-chain block
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class MainChainBlock:
    height: int
    prev_hash: bytes
    proposer: NodeId
    abstracts: tuple[Abstract, ...] = ()
    statements: tuple[Statement, ...] = ()

    @cached_property
    def payload_hash(self) -> bytes:
        w = Writer()
        w.seq(self.abstracts, lambda w_, a: a.write(w_))
        w.seq(self.statements, write_statement)
        return digest(w.getvalue())

    @cached_property
    def encoded(self) -> bytes:
        return canonical_encode(self)

    @cached_property
    def digest(self) -> bytes:
        return digest(self.encoded)

    @cached_property
    def abstract_by_node(self) -> dict[NodeId, Abstract]:
        return {a.node: a for a in self.abstracts}

    def write(self, w: Writer) -> None:
        w.u64(self.height).fixed(self.prev_hash).fixed(self.proposer)
        w.seq(self.abstracts, lambda w_, a: a.write(w_))
        w.seq(self.statements, write_statement)
        w.fixed(self.payload_hash)

    @classmethod
    def read(cls, r: Reader) -> "MainChainBlock":
        height, prev, proposer = r.u64(), r.fixed(), r.fixed()
        abstracts = tuple(r.seq(Abstract.read))
        statements = tuple(r.seq(read_statement))
        payload = r.fixed()
        block = cls(height, prev, proposer, abstracts, statements)
        if block.payload_hash != payload:
            raise DecodeError(f"payload hash mismatch in block {height}")
        return block


# --------------------------------------------------------------------------- #
# Proof
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class Proof:
    """P(v, B_i): the confirmed blocks and public keys establishing one ownership.

    ``blocks`` are kept sorted by (height, creator) and ``keys`` sorted by
    bytes, so equal proofs have equal encodings.
    """

    value: ValueId
    height: int
    blocks: tuple[TransactionBlock, ...] = ()
    keys: tuple[bytes, ...] = ()

    @classmethod
    def build(cls, value: ValueId, height: int, blocks, keys) -> "Proof":
        uniq = {b.key: b for b in blocks}
        return cls(value, height, tuple(uniq[k] for k in sorted(uniq)), tuple(sorted(set(keys))))

    @property
    def block_ids(self) -> list[tuple[int, NodeId]]:
        return [b.key for b in self.blocks]

    def write(self, w: Writer) -> None:
        self.value.write(w)
        w.u64(self.height)
        w.seq(self.blocks, lambda w_, b: b.write(w_))
        w.seq(self.keys, Writer.var)

    @classmethod
    def read(cls, r: Reader) -> "Proof":
        value, height = ValueId.read(r), r.u64()
        blocks = tuple(r.seq(TransactionBlock.read))
        keys = tuple(r.seq(Reader.var))
        ids = [b.key for b in blocks]
        if ids != sorted(set(ids)) or list(keys) != sorted(set(keys)):
            raise DecodeError("proof elements must be strictly ordered and unique")
        return cls(value, height, blocks, keys)

    def to_file_bytes(self) -> bytes:
        return PROOF_MAGIC + bytes((FORMAT_VERSION,)) + canonical_encode(self)

    @classmethod
    def from_file_bytes(cls, data: bytes) -> "Proof":
        from .codec import canonical_decode

        if data[:4] != PROOF_MAGIC:
            raise DecodeError("not a proof file (bad magic)")
        if data[4:5] != bytes((FORMAT_VERSION,)):
            raise DecodeError(f"unsupported proof format version {data[4:5].hex()}")
        return canonical_decode(cls, data[5:])


__all__ = [
    "Abstract",
    "AddValue",
    "BetConfirm",
    "BetLock",
    "DeleteValue",
    "Divide",
    "FastClaim",
    "LockFor",
    "MainChainBlock",
    "Miner",
    "NodeId",
    "Objection",
    "Pay",
    "Proof",
    "Receiver",
    "RegisterVerifier",
    "Statement",
    "StatementEnvelope",
    "Transaction",
    "TransactionBlock",
    "Unlock",
    "ValueId",
    "sign_abstract",
    "verify_abstract",
]
