"""Confirmed-block store and the ownership table derived from it.

``derive_ownership`` is a global forward replay: it walks heights one by one
and moves every known value according to its current owner's confirmed
block. It shares no code with the proof verifier, which makes it usable as an
independent oracle for it.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterator, Mapping

from .codec import canonical_decode, canonical_encode, node_id_of, verify_signature
from .mainchain import BET_ALGORITHM, DIVISION_ALGORITHM, FASTPAY_ALGORITHM, Chain
from .model import (
    AddValue,
    BetLock,
    DeleteValue,
    Divide,
    FastClaim,
    LockFor,
    MainChainBlock,
    Miner,
    NodeId,
    Objection,
    Pay,
    TransactionBlock,
    Unlock,
    ValueId,
    fast_transfer_message,
    verify_abstract,
)


class StoreError(ValueError):
    pass


class NoMatchingAbstract(StoreError):
    pass


class MerkleMismatch(StoreError):
    pass


class BadSignature(StoreError):
    pass



class ConfirmedBlockStore:
    """A node's subset of CB, keyed by (height, creator), plus public keys."""

    def __init__(self) -> None:
        self.blocks: dict[tuple[int, NodeId], TransactionBlock] = {}
        self.keys: dict[NodeId, bytes] = {}

    def __len__(self) -> int:
        return len(self.blocks)

    def __contains__(self, key: tuple[int, NodeId]) -> bool:
        return key in self.blocks

    def get(self, height: int, node: NodeId) -> TransactionBlock | None:
        return self.blocks.get((height, node))

    def ids(self) -> set[tuple[int, NodeId]]:
        return set(self.blocks)

    def add_key(self, public_key: bytes) -> NodeId:
        node = node_id_of(public_key)
        self.keys[node] = public_key
        return node

    def store_block(self, block: TransactionBlock, chain: Chain, public_key: bytes | None = None) -> bool:
        """Verify ``block`` against its on-chain abstract and keep it.

        Returns True when the block was new. With a key whose hash matches the
        abstract, a failing signature can only mean the content differs from
        what was signed, which is reported as ``MerkleMismatch``.
        """
        if public_key is not None:
            self.add_key(public_key)
        existing = self.blocks.get(block.key)
        if existing == block:
            return False
        abstract = chain.abstract(block.height, block.creator)
        if abstract is None:
            raise NoMatchingAbstract(f"no abstract from {block.creator.hex()[:8]} at height {block.height}")
        pk = self.keys.get(block.creator)
        if pk is None or node_id_of(pk) != abstract.key_hash:
            raise BadSignature(f"no public key matching abstract of {block.creator.hex()[:8]}")
        if not verify_abstract(abstract, pk, block):
            raise MerkleMismatch(f"block ({block.height}, {block.creator.hex()[:8]}) does not match its abstract")
        self.blocks[block.key] = block
        return True

    def discard(self, key: tuple[int, NodeId]) -> None:
        self.blocks.pop(key, None)

    # -- persistence -----------------------------------------------------

    def save_dir(self, path: str | Path) -> None:
        root = Path(path)
        root.mkdir(parents=True, exist_ok=True)
        for (height, node), block in sorted(self.blocks.items()):
            (root / f"{height:08d}_{node.hex()}.blk").write_bytes(canonical_encode(block))
        (root / "keys.txt").write_text("".join(pk.hex() + "\n" for pk in sorted(self.keys.values())))

    @classmethod
    def load_dir(cls, path: str | Path, chain: Chain) -> "ConfirmedBlockStore":
        root = Path(path)
        store = cls()
        keys_file = root / "keys.txt"
        if keys_file.exists():
            for line in keys_file.read_text().split():
                store.add_key(bytes.fromhex(line))
        for f in sorted(root.glob("*.blk")):
            store.store_block(canonical_decode(TransactionBlock, f.read_bytes()), chain)
        return store


# --------------------------------------------------------------------------- #
# Ownership table
# --------------------------------------------------------------------------- #


class Status(str, Enum):
    OWNED = "owned"
    NA = "na"  # double spend, invalid transaction, or locked
    LOCKED = "locked"
    BET_LOCKED = "bet_locked"
    DIVIDED = "divided"
    DELETED = "deleted"
    UNKNOWN = "unknown"


LIVE = {Status.OWNED, Status.NA, Status.LOCKED, Status.BET_LOCKED, Status.UNKNOWN}


@dataclass(frozen=True)
class Entry:
    status: Status
    owner: NodeId | None  # current owner; locker / staker while locked
    since: int
    amount: int
    beneficiary: NodeId | None = None
    unlock_at: int | None = None
    unlocks: int = 0
    voided: bool = False
    bet: BetLock | None = None
    divide: Divide | None = None

    @property
    def known_owner(self) -> NodeId | None:
        return self.owner if self.status is Status.OWNED else None


class OwnershipTable:
    """value -> Entry at one state of the chain."""

    def __init__(self, height: int, entries: Mapping[ValueId, Entry] | None = None) -> None:
        self.height = height
        self.entries: dict[ValueId, Entry] = dict(entries or {})

    def __getitem__(self, value: ValueId) -> Entry:
        return self.entries[value]

    def __contains__(self, value: ValueId) -> bool:
        return value in self.entries

    def owner(self, value: ValueId) -> NodeId | Status | None:
        """Owner id, or a Status for values without one, or None if absent."""
        e = self.entries.get(value)
        if e is None:
            return None
        if e.status is Status.OWNED:
            return e.owner
        if e.status in (Status.LOCKED, Status.BET_LOCKED):
            return Status.NA
        return e.status

    def owned_by(self, node: NodeId) -> list[ValueId]:
        return sorted(v for v, e in self.entries.items() if e.status is Status.OWNED and e.owner == node)

    def live_total(self) -> int:
        return sum(e.amount for e in self.entries.values() if e.status in LIVE)

    def copy(self, height: int | None = None) -> "OwnershipTable":
        return OwnershipTable(self.height if height is None else height, self.entries)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["value_id", "owner", "amount", "since_height"])
        for v in sorted(self.entries):
            e = self.entries[v]
            if e.status not in LIVE:
                continue
            owner = self.owner(v)
            w.writerow([str(v), owner.hex() if isinstance(owner, bytes) else "NA" if owner is Status.NA else owner.value.upper(), e.amount, e.since])
        return buf.getvalue()


def apply_statements(
    table: OwnershipTable,
    block: MainChainBlock,
    objection_window: int | None = None,
    keys: Mapping[NodeId, bytes] | None = None,
) -> OwnershipTable:
    """Apply the main-chain statements of ``block`` (plus expiring unlocks).

    Values whose state changed at this height (``since == height``) ignore
    statements of the same height.
    """
    h = block.height
    out = table.copy(h)
    entries = out.entries
    keys = keys or {}

    if objection_window is not None:
        for v, e in list(entries.items()):
            if (
                e.status is Status.LOCKED
                and e.unlocks == 1
                and not e.voided
                and e.unlock_at is not None
                and h == e.unlock_at + objection_window + 1
            ):
                entries[v] = Entry(Status.OWNED, e.owner, h, e.amount)

    for st in block.statements:
        if isinstance(st, AddValue):
            entries[st.value] = Entry(Status.OWNED, st.owner, h, st.amount)
            continue
        if not isinstance(st, (DeleteValue, Unlock, Objection)):
            continue
        e = entries.get(st.value)
        # Anyone may post statements; ones about values not (yet) in the
        # table have no effect.
        if e is None or e.since >= h:
            continue
        if isinstance(st, DeleteValue):
            # Deleting locked values is not allowed; the statement has no effect.
            if e.status in (Status.OWNED, Status.NA):
                entries[st.value] = replace(e, status=Status.DELETED, since=h)
        elif isinstance(st, Unlock):
            if e.status is Status.LOCKED and st.owner == e.owner:
                entries[st.value] = replace(
                    e, unlocks=e.unlocks + 1, unlock_at=h if e.unlocks == 0 else e.unlock_at
                )
        elif e.status is Status.LOCKED and objection_window is not None:
            pk = keys.get(e.owner)
            if (
                e.unlock_at is not None
                and e.unlock_at < h <= e.unlock_at + objection_window
                and st.beneficiary == e.beneficiary
                and pk is not None
                and verify_signature(pk, fast_transfer_message(st.value, st.beneficiary, st.payer_sn), st.signature)
            ):
                entries[st.value] = replace(e, voided=True)
    return out


def _valid_claim(tx_receiver, value: ValueId, locker: NodeId, beneficiary: NodeId, keys) -> bool:
    if not isinstance(tx_receiver, FastClaim) or tx_receiver.payer != locker:
        return False
    pk = keys.get(locker)
    return pk is not None and verify_signature(
        pk, fast_transfer_message(value, beneficiary, tx_receiver.payer_sn), tx_receiver.signature
    )


def _lineage_unknown(value: ValueId, entries: Mapping[ValueId, Entry]) -> bool:
    for anc in reversed(value.lineage()[:-1]):
        if anc in entries:
            return entries[anc].status is Status.UNKNOWN
    return False


def replay(store: ConfirmedBlockStore, chain: Chain, up_to: int | None = None) -> Iterator[OwnershipTable]:
    """Yield the ownership table at every height 1..up_to."""
    up_to = chain.height if up_to is None else min(up_to, chain.height)
    table = OwnershipTable(0)
    for h in range(1, up_to + 1):
        block = chain.get_block(h)
        algs = chain.algorithms_at(h)
        before = table.entries
        table = apply_statements(table, block, chain.objection_window(h), store.keys)
        entries = table.entries

        # Bets resolve at their target height against the partner's prior state.
        for v, e in list(entries.items()):
            if e.status is not Status.BET_LOCKED or e.bet.target_height != h:
                continue
            bet = e.bet
            partner = before.get(bet.partner)
            if (partner is None and _lineage_unknown(bet.partner, before)) or (
                partner is not None and partner.status is Status.UNKNOWN
            ):
                entries[v] = Entry(Status.UNKNOWN, None, h, e.amount)
                continue
            winner = e.owner
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
            if matched:
                after = max(e.since, partner.since)
                confirmed = any(
                    after < ch <= h and c.node in (e.owner, partner.owner)
                    for ch, c in chain.bet_confirmations(v, bet.partner, h)
                )
                if confirmed:
                    lsb = block.digest[-1] & 1
                    winner = e.owner if lsb == bet.parity else partner.owner
            entries[v] = Entry(Status.OWNED, winner, h, e.amount)

        for v, e in list(entries.items()):
            if e.since >= h:
                continue
            if e.status is Status.OWNED:
                mover = e.owner
            elif e.status is Status.LOCKED:
                mover = e.beneficiary
            else:
                continue
            if chain.abstract(h, mover) is None:
                continue
            tb = store.get(h, mover)
            if tb is None:
                entries[v] = Entry(Status.UNKNOWN, None, h, e.amount)
                continue
            txs = tb.txs_of(v)
            if e.status is Status.LOCKED:
                claims = [tx for tx in txs if _valid_claim(tx.receiver, v, e.owner, e.beneficiary, store.keys)]
                if len(claims) == 1:
                    entries[v] = Entry(Status.OWNED, e.beneficiary, h, e.amount)
                elif claims:
                    entries[v] = Entry(Status.NA, None, h, e.amount)
                continue
            if not txs:
                continue
            if len(txs) > 1:
                entries[v] = Entry(Status.NA, None, h, e.amount)
                continue
            rc = txs[0].receiver
            na = Entry(Status.NA, None, h, e.amount)
            if isinstance(rc, Pay):
                entries[v] = Entry(Status.OWNED, rc.node, h, e.amount)
            elif isinstance(rc, Miner):
                entries[v] = Entry(Status.OWNED, block.proposer, h, e.amount)
            elif isinstance(rc, Divide):
                if DIVISION_ALGORITHM in algs and rc.amounts and min(rc.amounts) > 0 and sum(rc.amounts) == e.amount:
                    entries[v] = Entry(Status.DIVIDED, e.owner, h, e.amount, divide=rc)
                    for k, amount in enumerate(rc.amounts, start=1):
                        entries[v.child(k)] = Entry(Status.OWNED, e.owner, h, amount)
                else:
                    entries[v] = na
            elif isinstance(rc, LockFor):
                entries[v] = (
                    Entry(Status.LOCKED, e.owner, h, e.amount, beneficiary=rc.beneficiary)
                    if FASTPAY_ALGORITHM in algs
                    else na
                )
            elif isinstance(rc, BetLock):
                entries[v] = (
                    Entry(Status.BET_LOCKED, e.owner, h, e.amount, bet=rc)
                    if BET_ALGORITHM in algs and rc.target_height > h
                    else na
                )
            else:
                entries[v] = na
        yield table


def derive_ownership(store: ConfirmedBlockStore, chain: Chain, up_to_height: int | None = None) -> OwnershipTable:
    table = OwnershipTable(0)
    for table in replay(store, chain, up_to_height):
        pass
    return table
