"""Per-node agents: honest RVO behaviour plus adversarial variants.

An honest agent keeps its own confirmed blocks and every block it was handed
as proof, tracks the values it owns with a pointer to the proof blocks, sends
proofs for every value it spends, and checks proofs for every value it
receives.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .codec import KeyPair, node_id_of, verify_signature
from .ledger import ConfirmedBlockStore, StoreError, Status
from .mainchain import Chain
from .model import (
    Abstract,
    BetConfirm,
    BetLock,
    Divide,
    FastClaim,
    LockFor,
    MainChainBlock,
    Miner,
    NodeId,
    Objection,
    Pay,
    Proof,
    Statement,
    Transaction,
    TransactionBlock,
    Unlock,
    ValueId,
    fast_transfer_message,
    sign_abstract,
    sign_fast_transfer,
)
from .verifier import Fail, IncompleteStore, extract_proof, verified_state

log = logging.getLogger(__name__)

BlockId = tuple[int, NodeId]

KEEP_SPENT = "keep-spent-proofs"
DROP_SPENT = "drop-spent-proofs"


class InsufficientFunds(ValueError):
    pass


@dataclass(frozen=True)
class TransferEnvelope:
    """Everything a receiver needs to check one transfer (or lock) of a value.

    ``blocks`` is only the part of the proofs the sender believed the
    receiver lacks; the id lists say which blocks make up each proof.
    """

    kind: str  # transfer | deposit | bet | restore
    value: ValueId
    height: int
    sender: NodeId
    receiver: NodeId
    prior_ids: tuple[BlockId, ...]
    receipt_ids: tuple[BlockId, ...]
    keys: tuple[bytes, ...]
    blocks: tuple[TransactionBlock, ...]
    trace_id: int = 0
    full: bool = False

    @property
    def size(self) -> int:
        return sum(len(b.encoded) for b in self.blocks) + sum(len(k) for k in self.keys) + 40 * (
            len(self.prior_ids) + len(self.receipt_ids)
        )


@dataclass(frozen=True)
class FastPayment:
    value: ValueId
    payer: NodeId
    beneficiary: NodeId
    claim: FastClaim


@dataclass
class Held:
    since: int
    amount: int
    proof_ids: frozenset[BlockId]


@dataclass
class Metrics:
    blocks_acquired: set[BlockId] = field(default_factory=set)
    bytes_sent: int = 0
    bytes_received: int = 0
    envelopes_sent: int = 0
    envelopes_rejected: int = 0


class NodeAgent:
    honest = True

    def __init__(
        self,
        keys: KeyPair,
        strategy: str = "least_delta",
        dedup: bool = True,
        retain: str = KEEP_SPENT,
    ) -> None:
        self.keys = keys
        self.node_id = keys.node_id
        self.store = ConfirmedBlockStore()
        self.store.add_key(keys.public_key)
        self.owned: dict[ValueId, Held] = {}
        self.strategy = strategy
        self.dedup = dedup
        self.retain = retain
        self.sn = 0
        self.pending: list[Transaction] = []
        self.outstanding: tuple[Transaction, ...] | None = None
        self.outstanding_abstract: Abstract | None = None
        self.spending: set[ValueId] = set()
        self.own_heights: list[int] = []
        self.deposits_out: dict[ValueId, tuple[NodeId, int]] = {}
        self.deposits_in: dict[ValueId, tuple[NodeId, int]] = {}
        self.claims: dict[ValueId, FastClaim] = {}
        self.bets: dict[ValueId, tuple[BetLock, int]] = {}
        self.partner_bets: set[ValueId] = set()
        self.statements: list[Statement] = []
        self.confirm_bets = True
        self.trace: dict[tuple[ValueId, int], int] = {}
        self.processed: set[tuple[str, ValueId, int]] = set()
        self.metrics = Metrics()
        # Set by the simulator: node id -> that node's advertised holdings.
        self.holdings_of: Callable[[NodeId], frozenset[BlockId]] = lambda node: frozenset()

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.node_id.hex()[:8]})"

    # -- bookkeeping -------------------------------------------------------

    def next_sn(self) -> int:
        self.sn += 1
        return self.sn

    def add_block(self, block: TransactionBlock, chain: Chain) -> None:
        if self.store.store_block(block, chain) or block.key not in self.metrics.blocks_acquired:
            self.metrics.blocks_acquired.add(block.key)

    def spendable(self) -> list[ValueId]:
        return sorted(v for v in self.owned if v not in self.spending)

    def balance(self) -> int:
        return sum(h.amount for h in self.owned.values())

    def advertise_holdings(self) -> frozenset[BlockId]:
        return frozenset(self.store.ids())

    def retain_policy(self, mode: str) -> None:
        if mode not in (KEEP_SPENT, DROP_SPENT):
            raise ValueError(f"unknown retain policy {mode!r}")
        self.retain = mode

    def proof_ids_now(self, value: ValueId, height: int) -> set[BlockId]:
        held = self.owned[value]
        ids = set(held.proof_ids)
        ids.update((h, self.node_id) for h in self.own_heights if held.since < h <= height)
        return ids

    # -- sending -----------------------------------------------------------

    def initiate_transfer(
        self, receiver: NodeId, amount: int | None, chain: Chain, trace_id: int = 0
    ) -> list[Transaction]:
        """Queue transactions paying ``amount`` (one whole value when None) to ``receiver``."""
        candidates = self.spendable()
        if not candidates:
            raise InsufficientFunds("no spendable values")
        height = chain.height
        holdings = self.holdings_of(receiver) if self.strategy == "least_delta" else frozenset()

        def delta(v: ValueId) -> int:
            return len(self.proof_ids_now(v, height) - holdings)

        if amount is None:
            if self.strategy == "least_delta":
                chosen = min(candidates, key=lambda v: (delta(v), v))
            else:
                chosen = candidates[0]
            return [self._queue(Transaction(chosen, Pay(receiver), self.next_sn()), trace_id)]

        if sum(self.owned[v].amount for v in candidates) < amount:
            raise InsufficientFunds(f"need {amount}, hold {sum(self.owned[v].amount for v in candidates)}")
        enough = [v for v in candidates if self.owned[v].amount >= amount]
        if enough:
            if self.strategy == "least_delta":
                key = lambda v: (delta(v), self.owned[v].amount != amount, v)  # noqa: E731
            else:
                key = lambda v: (self.owned[v].amount != amount, v)  # noqa: E731
            chosen = min(enough, key=key)
            return self._pay_or_split(chosen, amount, receiver, trace_id)

        order = sorted(candidates, key=lambda v: (delta(v), v)) if self.strategy == "least_delta" else candidates
        planned, remaining = [], amount
        for v in order:
            if remaining <= 0:
                break
            take = min(remaining, self.owned[v].amount)
            planned += self._pay_or_split(v, take, receiver, trace_id)
            remaining -= take
        return planned

    def _pay_or_split(self, value: ValueId, amount: int, receiver: NodeId, trace_id: int) -> list[Transaction]:
        have = self.owned[value].amount
        if have == amount:
            return [self._queue(Transaction(value, Pay(receiver), self.next_sn()), trace_id)]
        tx = self._queue(Transaction(value, Divide((amount, have - amount)), self.next_sn()), trace_id)
        self._after_divide.setdefault(value, []).append((value.child(1), receiver, trace_id))
        return [tx]

    @property
    def _after_divide(self) -> dict:
        if not hasattr(self, "_deferred"):
            self._deferred: dict[ValueId, list] = {}
        return self._deferred

    def _queue(self, tx: Transaction, trace_id: int = 0) -> Transaction:
        self.pending.append(tx)
        self.spending.add(tx.value)
        self.trace[(tx.value, tx.sn)] = trace_id
        return tx

    def lock_for(self, value: ValueId, beneficiary: NodeId) -> Transaction:
        return self._queue(Transaction(value, LockFor(beneficiary), self.next_sn()))

    def place_bet(self, value: ValueId, counterparty: NodeId, target: int, parity: int, partner: ValueId) -> Transaction:
        return self._queue(Transaction(value, BetLock(counterparty, target, parity, partner), self.next_sn()))

    def pay_fee(self, value: ValueId) -> Transaction:
        return self._queue(Transaction(value, Miner(), self.next_sn()))

    def fast_pay(self, value: ValueId) -> FastPayment:
        beneficiary, _ = self.deposits_out[value]
        claim = sign_fast_transfer(self.keys, value, beneficiary, self.next_sn())
        return FastPayment(value, self.node_id, beneficiary, claim)

    def unlock(self, value: ValueId) -> Unlock:
        st = Unlock.create(self.keys, value)
        self.statements.append(st)
        return st

    def close_block(self) -> list[Abstract]:
        """Sign the pending batch when nothing is awaiting confirmation."""
        if self.outstanding is not None or not self.pending:
            return []
        txs, self.pending = tuple(self.pending), []
        self.outstanding = txs
        self.outstanding_abstract = sign_abstract(self.keys, self.node_id, txs)
        return [self.outstanding_abstract]

    def take_statements(self) -> list[Statement]:
        out, self.statements = self.statements, []
        return out

    # -- confirmations -----------------------------------------------------

    def on_block_confirmed(self, block: MainChainBlock, chain: Chain) -> list[TransferEnvelope]:
        envelopes: list[TransferEnvelope] = []
        h = block.height
        mine = block.abstract_by_node.get(self.node_id)
        if mine is not None and self.outstanding is not None and mine == self.outstanding_abstract:
            tb = TransactionBlock(self.node_id, h, self.outstanding)
            self.outstanding = self.outstanding_abstract = None
            self.add_block(tb, chain)
            self.own_heights.append(h)
            for tx in tb.transactions:
                envelopes += self._apply_own(tx, h, chain)
        envelopes += self._watch_chain(block, chain)
        if self.retain == DROP_SPENT and envelopes:
            self.prune(chain)
        return envelopes

    def _apply_own(self, tx: Transaction, h: int, chain: Chain) -> list[TransferEnvelope]:
        v, rc = tx.value, tx.receiver
        self.spending.discard(v)
        trace_id = self.trace.pop((v, tx.sn), 0)
        if isinstance(rc, FastClaim):
            self.claims.pop(v, None)
            self.deposits_in.pop(v, None)
            self._take(v, h, chain)
            return []
        held = self.owned.pop(v, None)
        if held is None:
            return []
        if isinstance(rc, (Pay, Miner)):
            receiver = rc.node if isinstance(rc, Pay) else chain.resolve_miner(h)
            if receiver == self.node_id:
                self._take(v, h, chain)
                return []
            return self._send("transfer", v, h, receiver, chain, trace_id)
        if isinstance(rc, Divide):
            for k in range(1, len(rc.amounts) + 1):
                self._take(v.child(k), h, chain)
            for child, receiver, tid in self._after_divide.pop(v, []):
                self._queue(Transaction(child, Pay(receiver), self.next_sn()), tid)
            return []
        if isinstance(rc, LockFor):
            self.deposits_out[v] = (rc.beneficiary, h)
            return self._send("deposit", v, h, rc.beneficiary, chain, trace_id)
        if isinstance(rc, BetLock):
            self.bets[v] = (rc, h)
            out = self._send("bet", v, h, rc.counterparty, chain, trace_id)
            self._maybe_confirm_bet(v)
            return out
        return []

    def _take(self, value: ValueId, height: int, chain: Chain) -> bool:
        """Adopt ``value`` if our own store proves we own it at ``height``."""
        try:
            proof = extract_proof(value, height, self.store, chain)
        except IncompleteStore:
            return False
        state = verified_state(value, height, proof, chain)
        if isinstance(state, Fail) or state.status is not Status.OWNED or state.owner != self.node_id:
            return False
        self.owned[value] = Held(height, state.amount, frozenset(proof.block_ids))
        return True

    def _watch_chain(self, block: MainChainBlock, chain: Chain) -> list[TransferEnvelope]:
        h = block.height
        out: list[TransferEnvelope] = []
        for st in block.statements:
            if isinstance(st, Unlock) and st.value in self.claims and st.value in self.deposits_in:
                claim = self.claims[st.value]
                self.statements.append(Objection(st.value, self.node_id, claim.payer_sn, claim.signature))
        # Deposits handed back to the payer after an unopposed unlock.
        for v, (payer, _) in list(self.deposits_in.items()):
            if not chain.unlocks.get(v):
                continue
            try:
                proof = extract_proof(v, h, self.store, chain)
            except IncompleteStore:
                continue
            state = verified_state(v, h, proof, chain)
            if not isinstance(state, Fail) and state.status is Status.OWNED and state.owner == payer:
                del self.deposits_in[v]
                self.claims.pop(v, None)
                out += self._send("restore", v, state.since, payer, chain)
        for v, (payer, _) in list(self.deposits_out.items()):
            if v not in self.owned and chain.unlocks.get(v) and self._take(v, h, chain):
                del self.deposits_out[v]
        for v, (bet, _) in list(self.bets.items()):
            if bet.target_height == h:
                del self.bets[v]
                self._take(v, h, chain)
                self._take(bet.partner, h, chain)
                self.partner_bets.discard(bet.partner)
        return out

    def _maybe_confirm_bet(self, value: ValueId) -> None:
        if value in self.bets:
            bet, _ = self.bets[value]
            if self.confirm_bets and bet.partner in self.partner_bets and self.node_id < bet.counterparty:
                self.statements.append(BetConfirm.create(self.keys, value, bet.partner, bet.target_height))

    # -- envelopes ---------------------------------------------------------

    def make_envelope(
        self, kind: str, value: ValueId, height: int, receiver: NodeId, chain: Chain, trace_id: int = 0, full: bool = False
    ) -> TransferEnvelope:
        receipt = extract_proof(value, height, self.store, chain)
        prior = extract_proof(value, height - 1, self.store, chain) if kind == "transfer" else None
        blocks = {b.key: b for b in receipt.blocks}
        keys = set(receipt.keys)
        if prior is not None:
            blocks.update((b.key, b) for b in prior.blocks)
            keys.update(prior.keys)
        if self.dedup and not full:
            have = self.holdings_of(receiver)
            blocks = {k: b for k, b in blocks.items() if k not in have}
        return TransferEnvelope(
            kind,
            value,
            height,
            self.node_id,
            receiver,
            tuple(prior.block_ids) if prior is not None else (),
            tuple(receipt.block_ids),
            tuple(sorted(keys)),
            tuple(blocks[k] for k in sorted(blocks)),
            trace_id,
            full,
        )

    def _send(self, kind: str, value: ValueId, height: int, receiver: NodeId, chain: Chain, trace_id: int = 0):
        try:
            env = self.make_envelope(kind, value, height, receiver, chain, trace_id)
        except IncompleteStore as exc:
            # Only reachable for agents that took a value without its proof.
            log.info("%r cannot prove %s: %s", self, value, exc)
            return []
        return self.emit(env)

    def emit(self, env: TransferEnvelope) -> list[TransferEnvelope]:
        self.metrics.bytes_sent += env.size
        self.metrics.envelopes_sent += 1
        return [env]

    def resend_full(self, env: TransferEnvelope, chain: Chain) -> TransferEnvelope | None:
        try:
            return self.make_envelope(env.kind, env.value, env.height, env.receiver, chain, env.trace_id, full=True)
        except IncompleteStore:
            return None

    def on_envelope(self, env: TransferEnvelope, chain: Chain) -> tuple[bool, str]:
        """Check an envelope; returns (accepted, reason)."""
        if env.receiver != self.node_id:
            return False, "misaddressed"
        tag = (env.kind, env.value, env.height)
        if tag in self.processed:
            return True, "duplicate"
        self.metrics.bytes_received += env.size
        if env.height > chain.height:
            return False, "chain view behind"
        supplied = {b.key: b for b in env.blocks}
        keys = {node_id_of(pk): pk for pk in env.keys}
        keys.update(self.store.keys)

        def rebuild(ids, height):
            blocks = []
            for bid in ids:
                b = supplied.get(bid) or self.store.blocks.get(bid)
                if b is None:
                    return None
                blocks.append(b)
            needed = {bid[1] for bid in ids}
            if not needed <= set(keys):
                return None
            return Proof.build(env.value, height, blocks, [keys[n] for n in needed])

        receipt = rebuild(env.receipt_ids, env.height)
        prior = rebuild(env.prior_ids, env.height - 1) if env.kind == "transfer" else None
        if receipt is None or (env.kind == "transfer" and prior is None):
            self.metrics.envelopes_rejected += 1
            return False, "reconstruction gap"

        reason = self.check_envelope(env, prior, receipt, chain)
        if reason:
            self.metrics.envelopes_rejected += 1
            return False, reason
        for p in (prior, receipt):
            if p is None:
                continue
            for pk in p.keys:
                self.store.add_key(pk)
            for b in p.blocks:
                self.add_block(b, chain)
        self.processed.add(tag)
        self._accept(env, receipt, chain)
        return True, "ok"

    def check_envelope(self, env: TransferEnvelope, prior: Proof | None, receipt: Proof, chain: Chain) -> str:
        state = verified_state(env.value, env.height, receipt, chain)
        if isinstance(state, Fail):
            return f"bad receipt proof: {state.reason}"
        if env.kind == "transfer":
            before = verified_state(env.value, env.height - 1, prior, chain)
            if isinstance(before, Fail) or before.status is not Status.OWNED or before.owner != env.sender:
                return f"bad prior-owner proof: {getattr(before, 'reason', before.status)}"
        if env.kind in ("transfer", "restore"):
            ok = state.status is Status.OWNED and state.owner == self.node_id
        elif env.kind == "deposit":
            ok = state.status is Status.LOCKED and state.owner == env.sender and state.beneficiary == self.node_id
        elif env.kind == "bet":
            ok = state.status is Status.BET_LOCKED and state.owner == env.sender and state.bet.counterparty == self.node_id
        else:
            return f"unknown envelope kind {env.kind}"
        return "" if ok else "bad receipt proof: receipt does not name this node"

    def _accept(self, env: TransferEnvelope, receipt: Proof, chain: Chain) -> None:
        v = env.value
        if env.kind in ("transfer", "restore"):
            state = verified_state(v, env.height, receipt, chain)
            if v not in self.owned:
                self.owned[v] = Held(env.height, state.amount, frozenset(receipt.block_ids))
            self._reconcile(v, chain)
        elif env.kind == "deposit":
            self.deposits_in[v] = (env.sender, env.height)
        elif env.kind == "bet":
            self.partner_bets.add(v)
            bet = verified_state(v, env.height, receipt, chain).bet
            self._maybe_confirm_bet(bet.partner)

    def _reconcile(self, value: ValueId, chain: Chain) -> None:
        # A late envelope can arrive after our own later blocks already moved
        # the value on; keep the table consistent with the current state.
        held = self.owned[value]
        if any(held.since < h for h in self.own_heights):
            if not self._take(value, chain.height, chain):
                self.owned.pop(value, None)

    def on_fast_payment(self, msg: FastPayment, chain: Chain) -> bool:
        if msg.beneficiary != self.node_id or msg.value not in self.deposits_in:
            return False
        payer, _ = self.deposits_in[msg.value]
        pk = self.store.keys.get(payer)
        if payer != msg.payer or pk is None:
            return False
        if not verify_signature(pk, fast_transfer_message(msg.value, self.node_id, msg.claim.payer_sn), msg.claim.signature):
            return False
        self.claims[msg.value] = msg.claim
        self._queue(Transaction(msg.value, msg.claim, self.next_sn()))
        return True

    # -- storage -----------------------------------------------------------

    def needed_blocks(self, chain: Chain) -> set[BlockId]:
        needed: set[BlockId] = set()
        for v in list(self.owned) + list(self.deposits_in) + list(self.bets):
            try:
                needed.update(extract_proof(v, chain.height, self.store, chain).block_ids)
            except IncompleteStore:
                continue
        return needed

    def prune(self, chain: Chain) -> None:
        needed = self.needed_blocks(chain)
        for bid in list(self.store.ids()):
            if bid not in needed and bid[1] != self.node_id:
                self.store.discard(bid)

    def storage_bytes(self) -> int:
        return sum(len(b.encoded) for b in self.store.blocks.values())

    def provable(self, chain: Chain, height: int | None = None) -> dict[ValueId, bool]:
        """For each believed-owned value: can our own store prove it right now?"""
        height = chain.height if height is None else height
        out = {}
        for v in self.owned:
            try:
                proof = extract_proof(v, height, self.store, chain)
            except IncompleteStore:
                out[v] = False
                continue
            state = verified_state(v, height, proof, chain)
            out[v] = not isinstance(state, Fail) and state.status is Status.OWNED and state.owner == self.node_id
        return out

    def snapshot(self) -> dict:
        return {
            "node": self.node_id.hex(),
            "kind": type(self).__name__,
            "sn": self.sn,
            "owned": [
                {"value": str(v), "amount": h.amount, "since": h.since, "proof_blocks": len(h.proof_ids)}
                for v, h in sorted(self.owned.items())
            ],
            "store": [[height, node.hex()] for height, node in sorted(self.store.ids())],
            "metrics": {
                "blocks_acquired": len(self.metrics.blocks_acquired),
                "bytes_sent": self.metrics.bytes_sent,
                "bytes_received": self.metrics.bytes_received,
                "bytes_stored": self.storage_bytes(),
            },
        }


# --------------------------------------------------------------------------- #
# Adversaries
# --------------------------------------------------------------------------- #


class WithholdingAgent(NodeAgent):
    """Spends values but never hands the proofs over."""

    honest = False

    def __init__(self, *args, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.withheld: list[tuple[ValueId, int, NodeId]] = []

    def emit(self, env: TransferEnvelope) -> list[TransferEnvelope]:
        self.withheld.append((env.value, env.height, env.receiver))
        return []


class DoubleSpendAgent(NodeAgent):
    """Pays the same value twice: inside one block, or via two abstracts in one round."""

    honest = False

    def __init__(self, *args, mode: str = "same_block", victims: Iterable[NodeId] = (), **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.mode = mode
        self.victims = list(victims)
        self.shadow: tuple[Transaction, ...] | None = None
        self.shadow_abstract: Abstract | None = None

    def _second_receiver(self, first: NodeId) -> NodeId | None:
        others = [n for n in self.victims if n not in (first, self.node_id)]
        return others[0] if others else None

    def initiate_transfer(self, receiver, amount, chain, trace_id=0):
        planned = super().initiate_transfer(receiver, None, chain, trace_id)
        tx = planned[0]
        other = self._second_receiver(receiver)
        if other is not None and self.mode == "same_block":
            self.pending.append(Transaction(tx.value, Pay(other), self.next_sn()))
        return planned

    def close_block(self) -> list[Abstract]:
        out = super().close_block()
        if self.mode != "equivocate" or not out:
            return out
        alt = []
        for tx in self.outstanding:
            other = self._second_receiver(tx.receiver.node) if isinstance(tx.receiver, Pay) else None
            alt.append(Transaction(tx.value, Pay(other), tx.sn) if other else tx)
        self._planned = self.outstanding
        self.shadow = tuple(alt)
        self.shadow_abstract = sign_abstract(self.keys, self.node_id, self.shadow)
        return out + [self.shadow_abstract]

    def on_block_confirmed(self, block, chain):
        mine = block.abstract_by_node.get(self.node_id)
        if mine is not None and self.shadow is not None and mine == self.shadow_abstract:
            # The conflicting variant won; pretend it was the plan all along.
            self.outstanding, self.outstanding_abstract = self.shadow, self.shadow_abstract
        losing = None
        if mine is not None and self.shadow is not None:
            losing = self.shadow if mine != self.shadow_abstract else self._planned
        envelopes = super().on_block_confirmed(block, chain)
        if losing is not None:
            envelopes += self._losing_envelopes(losing, block.height, chain)
            self.shadow = self.shadow_abstract = None
        return envelopes

    def _apply_own(self, tx, h, chain):
        # Second payment of a value in the same block: we already popped it, so
        # send the receiver a proof anyway.
        if tx.value not in self.owned and isinstance(tx.receiver, Pay) and tx.receiver.node != self.node_id:
            try:
                return self.emit(self.make_envelope("transfer", tx.value, h, tx.receiver.node, chain))
            except IncompleteStore:
                return []
        return super()._apply_own(tx, h, chain)

    def _losing_envelopes(self, txs, h, chain) -> list[TransferEnvelope]:
        # Hand the unconfirmed variant's receivers a proof built on it anyway.
        fake = TransactionBlock(self.node_id, h, txs)
        out = []
        for tx in txs:
            if not isinstance(tx.receiver, Pay) or tx.receiver.node == self.node_id:
                continue
            try:
                prior = extract_proof(tx.value, h - 1, self.store, chain)
            except IncompleteStore:
                continue
            ids = tuple(prior.block_ids)
            env = TransferEnvelope(
                "transfer", tx.value, h, self.node_id, tx.receiver.node, ids,
                tuple(sorted(ids + ((h, self.node_id),))), tuple(prior.keys) or (self.keys.public_key,),
                tuple(prior.blocks) + (fake,), full=True,
            )
            out += self.emit(env)
        return out


class ForgingAgent(NodeAgent):
    """Rewrites the transactions inside the proof blocks it sends."""

    honest = False

    def emit(self, env: TransferEnvelope) -> list[TransferEnvelope]:
        forged = []
        for b in env.blocks:
            if b.creator == self.node_id and b.transactions:
                tx = b.transactions[0]
                b = TransactionBlock(b.creator, b.height, (Transaction(tx.value, Pay(env.receiver), tx.sn + 1),) + b.transactions[1:])
            forged.append(b)
        env = TransferEnvelope(
            env.kind, env.value, env.height, env.sender, env.receiver, env.prior_ids, env.receipt_ids,
            env.keys, tuple(forged), env.trace_id, full=True,
        )
        return super().emit(env)

    def resend_full(self, env, chain):
        return None


class SilentReceiver(NodeAgent):
    """Takes every envelope at face value."""

    honest = False

    def on_envelope(self, env: TransferEnvelope, chain: Chain) -> tuple[bool, str]:
        if env.receiver != self.node_id:
            return False, "misaddressed"
        for b in env.blocks:
            try:
                self.add_block(b, chain)
            except StoreError:
                continue
        if env.kind == "transfer" and env.value not in self.owned:
            amount = chain.created[env.value][1].amount if env.value in chain.created else 0
            self.owned[env.value] = Held(env.height, amount, frozenset(env.receipt_ids))
        return True, "accepted unchecked"


ADVERSARIES = {
    "withholder": WithholdingAgent,
    "double_spender": DoubleSpendAgent,
    "equivocator": DoubleSpendAgent,
    "forger": ForgingAgent,
    "silent_receiver": SilentReceiver,
}
