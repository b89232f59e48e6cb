"""Proof extraction and ownership verification.

One walker drives everything. It starts at a value's creation (or at the
division that produced it) and steps through the main chain, reading the
confirmed block of whoever can currently move the value. Where the blocks
come from decides the mode:

* ``_ProofSource``: blocks and keys come from a proof, every element must be
  used exactly as the walk needs it (verification);
* ``_StoreSource``: blocks come from a node's store and are collected
  (extraction).

Algorithm families (base, division, fastpay, bet) switch on individual
transaction kinds; anything outside the enabled families makes the value NA.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable

from .codec import node_id_of, verify_signature
from .ledger import ConfirmedBlockStore, Entry, Status
from .mainchain import (
    ALL_ALGORITHMS,
    BASE_ALGORITHM,
    BET_ALGORITHM,
    DIVISION_ALGORITHM,
    FASTPAY_ALGORITHM,
    Chain,
)
from .model import (
    BetLock,
    Divide,
    FastClaim,
    LockFor,
    Miner,
    NodeId,
    Pay,
    Proof,
    TransactionBlock,
    ValueId,
    fast_transfer_message,
    verify_abstract,
)

NA = Status.NA


class Fail:
    """Failed verification. Falsy; ``reason`` is diagnostic only."""

    __slots__ = ("reason",)

    def __init__(self, reason: str = "") -> None:
        self.reason = reason

    def __bool__(self) -> bool:
        return False

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Fail)

    def __hash__(self) -> int:
        return hash(Fail)

    def __repr__(self) -> str:
        return f"Fail({self.reason!r})"


class IncompleteStore(LookupError):
    def __init__(self, node: NodeId, height: int, what: str = "block") -> None:
        super().__init__(f"store lacks {what} of {node.hex()[:8]} at height {height}")
        self.node = node
        self.height = height


class _Fail(Exception):
    pass


# --------------------------------------------------------------------------- #
# Block sources
# --------------------------------------------------------------------------- #


class _ProofSource:
    def __init__(self, proof: Proof) -> None:
        self.blocks = {b.key: b for b in proof.blocks}
        self.keys = {node_id_of(pk): pk for pk in proof.keys}
        self.used_blocks: set[tuple[int, NodeId]] = set()
        self.used_keys: set[NodeId] = set()

    def fetch(self, height: int, node: NodeId, chain: Chain) -> TransactionBlock:
        block = self.blocks.get((height, node))
        pk = self.keys.get(node)
        if block is None or pk is None:
            raise _Fail(f"b_{height}({node.hex()[:8]}) or its public key not in proof")
        if not verify_abstract(chain.abstract(height, node), pk, block):
            raise _Fail(f"Merkle root and signature do not match for b_{height}({node.hex()[:8]})")
        self.used_blocks.add(block.key)
        self.used_keys.add(node)
        return block

    def key(self, node: NodeId) -> bytes | None:
        return self.keys.get(node)

    def check_consumed(self) -> None:
        extra = set(self.blocks) - self.used_blocks
        if extra:
            h, n = min(extra)
            raise _Fail(f"{len(extra)} unchecked block(s) in proof, e.g. b_{h}({n.hex()[:8]})")
        if set(self.keys) - self.used_keys:
            raise _Fail("proof carries public keys no block needed")


class _StoreSource:
    def __init__(self, store: ConfirmedBlockStore) -> None:
        self.store = store
        self.blocks: dict[tuple[int, NodeId], TransactionBlock] = {}
        self.keys: dict[NodeId, bytes] = {}

    def fetch(self, height: int, node: NodeId, chain: Chain) -> TransactionBlock:
        block = self.store.get(height, node)
        if block is None:
            raise IncompleteStore(node, height)
        pk = self.store.keys.get(node)
        if pk is None:
            raise IncompleteStore(node, height, "public key")
        if not verify_abstract(chain.abstract(height, node), pk, block):
            raise _Fail("stored block does not match abstract")
        self.blocks[block.key] = block
        self.keys[node] = pk
        return block

    def key(self, node: NodeId) -> bytes | None:
        return self.store.keys.get(node)


# --------------------------------------------------------------------------- #
# Walker
# --------------------------------------------------------------------------- #


@dataclass
class _Walker:
    chain: Chain
    source: object
    families: frozenset[str]

    def allowed(self, family: str, height: int) -> bool:
        return family in self.families and (
            family == BASE_ALGORITHM or family in self.chain.algorithms_at(height)
        )

    def walk(self, value: ValueId, height: int) -> Entry | None:
        """State of ``value`` at ``height``; None if it does not exist then."""
        chain = self.chain
        if value.is_divided:
            if DIVISION_ALGORITHM not in self.families:
                return None
            parent = self.walk(value.parent, height)
            if parent is None or parent.status is not Status.DIVIDED:
                return None
            amounts = parent.divide.amounts
            k = value.path[-1]
            if k > len(amounts):
                return None
            state = Entry(Status.OWNED, parent.owner, parent.since, amounts[k - 1])
        else:
            created = chain.created.get(value)
            if created is None or created[0] > height:
                return None
            k, add = created
            state = Entry(Status.OWNED, add.owner, k, add.amount)
        return self._advance(value, state, height)

    def _advance(self, v: ValueId, e: Entry, height: int) -> Entry:
        chain = self.chain
        deleted_at = chain.deleted.get(v)
        unlocks = chain.unlocks.get(v, ())
        objections = chain.objections.get(v, ())
        for h in range(e.since + 1, height + 1):
            if e.status is Status.LOCKED:
                window = chain.objection_window(h)
                if (
                    window is not None
                    and e.unlocks == 1
                    and not e.voided
                    and e.unlock_at is not None
                    and h == e.unlock_at + window + 1
                ):
                    e = Entry(Status.OWNED, e.owner, h, e.amount)
                    continue
                for uh, st in unlocks:
                    if uh == h and st.owner == e.owner:
                        e = replace(e, unlocks=e.unlocks + 1, unlock_at=h if e.unlocks == 0 else e.unlock_at)
                for oh, st in objections:
                    if oh != h or window is None or e.unlock_at is None:
                        continue
                    pk = self.source.key(e.owner)
                    if (
                        e.unlock_at < h <= e.unlock_at + window
                        and st.beneficiary == e.beneficiary
                        and pk is not None
                        and verify_signature(pk, fast_transfer_message(v, st.beneficiary, st.payer_sn), st.signature)
                    ):
                        e = replace(e, voided=True)
                if chain.abstract(h, e.beneficiary) is None:
                    continue
                block = self.source.fetch(h, e.beneficiary, chain)
                claims = [tx for tx in block.txs_of(v) if self._valid_claim(tx.receiver, v, e)]
                if len(claims) == 1:
                    e = Entry(Status.OWNED, e.beneficiary, h, e.amount)
                elif claims:
                    return Entry(Status.NA, None, h, e.amount)
                continue

            if e.status is Status.BET_LOCKED:
                if h == e.bet.target_height:
                    e = Entry(Status.OWNED, self._resolve_bet(v, e, h), h, e.amount)
                continue

            # OWNED
            if deleted_at == h:
                return Entry(Status.DELETED, e.owner, h, e.amount)
            if chain.abstract(h, e.owner) is None:
                continue
            block = self.source.fetch(h, e.owner, chain)
            txs = block.txs_of(v)
            if not txs:
                continue
            if len(txs) > 1:
                return Entry(Status.NA, None, h, e.amount)
            rc = txs[0].receiver
            na = Entry(Status.NA, None, h, e.amount)
            if isinstance(rc, Pay):
                e = Entry(Status.OWNED, rc.node, h, e.amount)
            elif isinstance(rc, Miner):
                e = Entry(Status.OWNED, chain.resolve_miner(h), h, e.amount)
            elif isinstance(rc, Divide):
                if (
                    self.allowed(DIVISION_ALGORITHM, h)
                    and rc.amounts
                    and min(rc.amounts) > 0
                    and sum(rc.amounts) == e.amount
                ):
                    return Entry(Status.DIVIDED, e.owner, h, e.amount, divide=rc)
                return na
            elif isinstance(rc, LockFor):
                if not self.allowed(FASTPAY_ALGORITHM, h):
                    return na
                e = Entry(Status.LOCKED, e.owner, h, e.amount, beneficiary=rc.beneficiary)
            elif isinstance(rc, BetLock):
                if not (self.allowed(BET_ALGORITHM, h) and rc.target_height > h):
                    return na
                e = Entry(Status.BET_LOCKED, e.owner, h, e.amount, bet=rc)
            else:
                return na
        return e

    def _valid_claim(self, rc, v: ValueId, e: Entry) -> bool:
        if not isinstance(rc, FastClaim) or rc.payer != e.owner:
            return False
        pk = self.source.key(e.owner)
        return pk is not None and verify_signature(
            pk, fast_transfer_message(v, e.beneficiary, rc.payer_sn), rc.signature
        )

    def _resolve_bet(self, v: ValueId, e: Entry, h: int) -> NodeId:
        bet = e.bet
        confirms = [
            (ch, c) for ch, c in self.chain.bet_confirmations(v, bet.partner, h) if e.since < ch <= h
        ]
        if not confirms:
            return e.owner
        partner = self.walk(bet.partner, h - 1)
        matched = (
            partner is not None
            and partner.status is Status.BET_LOCKED
            and partner.owner == bet.counterparty
            and partner.amount == e.amount
            and partner.bet.counterparty == e.owner
            and partner.bet.partner == v
            and partner.bet.target_height == h
            and partner.bet.parity == 1 - bet.parity
        )
        if not matched:
            return e.owner
        after = max(e.since, partner.since)
        if not any(after < ch and c.node in (e.owner, partner.owner) for ch, c in confirms):
            return e.owner
        lsb = self.chain.get_block(h).digest[-1] & 1
        return e.owner if lsb == bet.parity else partner.owner


# --------------------------------------------------------------------------- #
# Public API
# --------------------------------------------------------------------------- #


def _verdict(entry: Entry | None, lockable: bool) -> NodeId | Status | Fail:
    if entry is None:
        return Fail("value does not exist at this height")
    if entry.status is Status.OWNED:
        return entry.owner
    if entry.status in (Status.LOCKED, Status.BET_LOCKED) and lockable:
        return NA
    return Fail(f"value is {entry.status.value} (no provable owner)")


def _run(value: ValueId, height: int, proof: Proof, chain: Chain, families: Iterable[str], lockable: bool):
    if proof.value != value or proof.height != height:
        return Fail("proof targets a different (value, height)")
    if height > chain.height:
        return Fail("chain view does not reach the queried height")
    src = _ProofSource(proof)
    walker = _Walker(chain, src, frozenset(families))
    try:
        verdict = _verdict(walker.walk(value, height), lockable)
        if isinstance(verdict, Fail):
            return verdict
        src.check_consumed()
    except _Fail as exc:
        return Fail(str(exc))
    return verdict


def get_owner(value: ValueId, height: int, proof: Proof, chain: Chain) -> NodeId | Fail:
    """Base verifier: plain transfers and miner fees only."""
    return _run(value, height, proof, chain, (BASE_ALGORITHM,), lockable=False)


def get_owner_dv(value: ValueId, height: int, proof: Proof, chain: Chain) -> NodeId | Fail:
    """Division verifier; a base id gives the same verdict as :func:`get_owner`."""
    return _run(value, height, proof, chain, (BASE_ALGORITHM, DIVISION_ALGORITHM), lockable=False)


def get_owner_fp(value: ValueId, height: int, proof: Proof, chain: Chain) -> NodeId | Status | Fail:
    """Fast-payment verifier; NA while a value sits locked for a beneficiary."""
    return _run(value, height, proof, chain, (BASE_ALGORITHM, FASTPAY_ALGORITHM), lockable=True)


def get_owner_bet(
    values: tuple[ValueId, ValueId], height: int, proof: Proof, chain: Chain
) -> tuple[NodeId, NodeId] | Fail:
    """Owners of both staked values at the bet's target height.

    ``proof`` must cover both values (its ``value`` field names the first).
    """
    a, b = values
    if proof.value != a or proof.height != height or height > chain.height:
        return Fail("proof targets a different (value, height)")
    src = _ProofSource(proof)
    walker = _Walker(chain, src, frozenset((BASE_ALGORITHM, BET_ALGORITHM)))
    try:
        owners = []
        for v in (a, b):
            entry = walker.walk(v, height)
            verdict = _verdict(entry, lockable=False)
            if isinstance(verdict, Fail):
                return verdict
            owners.append(verdict)
        src.check_consumed()
    except _Fail as exc:
        return Fail(str(exc))
    return owners[0], owners[1]


def verified_state(
    value: ValueId, height: int, proof: Proof, chain: Chain, families: Iterable[str] = ALL_ALGORITHMS
) -> Entry | Fail:
    """Full walker state (owner, amount, lock details) for a fully consumed proof."""
    if proof.value != value or proof.height != height or height > chain.height:
        return Fail("proof targets a different (value, height)")
    src = _ProofSource(proof)
    try:
        entry = _Walker(chain, src, frozenset(families)).walk(value, height)
        if entry is None:
            return Fail("value does not exist at this height")
        src.check_consumed()
    except _Fail as exc:
        return Fail(str(exc))
    return entry


def verify_owner(value: ValueId, height: int, proof: Proof, chain: Chain) -> NodeId | Status | Fail:
    """Judge with every algorithm registered on-chain (the node-side verifier)."""
    return _run(value, height, proof, chain, ALL_ALGORITHMS, lockable=True)


def extract_proof(
    value: ValueId,
    height: int,
    store: ConfirmedBlockStore,
    chain: Chain,
    families: Iterable[str] = ALL_ALGORITHMS,
) -> Proof:
    """Collect P(value, B_height) from ``store``; raises IncompleteStore on gaps."""
    src = _StoreSource(store)
    walker = _Walker(chain, src, frozenset(families))
    try:
        walker.walk(value, height)
    except _Fail:
        pass
    return Proof.build(value, height, src.blocks.values(), src.keys.values())


def extract_bet_proof(values: tuple[ValueId, ValueId], height: int, store: ConfirmedBlockStore, chain: Chain) -> Proof:
    src = _StoreSource(store)
    walker = _Walker(chain, src, frozenset((BASE_ALGORITHM, BET_ALGORITHM)))
    try:
        for v in values:
            walker.walk(v, height)
    except _Fail:
        pass
    return Proof.build(values[0], height, src.blocks.values(), src.keys.values())


class VerifierRegistry:
    """Algorithm id -> verification procedure, as registered on the chain."""

    PROCEDURES = {
        BASE_ALGORITHM: get_owner,
        DIVISION_ALGORITHM: get_owner_dv,
        FASTPAY_ALGORITHM: get_owner_fp,
    }

    def __init__(self, chain: Chain) -> None:
        self.chain = chain

    def registered(self, height: int) -> dict[str, str]:
        return self.chain.algorithms_at(height)

    def verify(self, value: ValueId, height: int, proof: Proof) -> NodeId | Status | Fail:
        algs = self.registered(height)
        if BASE_ALGORITHM not in algs:
            return Fail("no verifier registered at this height")
        if value.is_divided and DIVISION_ALGORITHM not in algs:
            return Fail("division verifier not registered")
        return verify_owner(value, height, proof, self.chain)
