"""The agreed main chain and a deterministic round-based consensus engine.

The engine is a stand-in for any algorithm with asynchronous consistency and
synchronous liveness: every honest view reads the same ``Chain`` object, and a
message submitted before ``advance_round`` is in the next block whenever a
quorum of nodes is reachable.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import yaml

from .codec import ZERO_DIGEST, DecodeError, Reader, Writer, canonical_decode, digest, node_id_of
from .model import (
    CHAIN_MAGIC,
    FORMAT_VERSION,
    Abstract,
    AddValue,
    BetConfirm,
    DeleteValue,
    MainChainBlock,
    NodeId,
    Objection,
    RegisterVerifier,
    Statement,
    Unlock,
    ValueId,
)

log = logging.getLogger(__name__)

# Rounds between submit() and inclusion when the network is synchronous.
ENGINE_BOUND = 1
DEFAULT_OBJECTION_WINDOW = 8
DEFAULT_TAU = 1

BASE_ALGORITHM = "base"
DIVISION_ALGORITHM = "division"
FASTPAY_ALGORITHM = "fastpay"
BET_ALGORITHM = "bet"
ALL_ALGORITHMS = (BASE_ALGORITHM, DIVISION_ALGORITHM, FASTPAY_ALGORITHM, BET_ALGORITHM)


class HeightNotReached(LookupError):
    pass


class MalformedMessage(ValueError):
    pass


class ChainIntegrityError(ValueError):
    pass


def register_statement(algorithm: str, objection_window: int = DEFAULT_OBJECTION_WINDOW) -> RegisterVerifier:
    # The fast-payment objection window travels inside the algorithm id so the
    # verifier reads it from the chain rather than from local configuration.
    alg = f"{algorithm}:T={objection_window}" if algorithm == FASTPAY_ALGORITHM else algorithm
    return RegisterVerifier(alg, digest(b"vapor/verifier/" + alg.encode()))


@dataclass
class GenesisConfig:
    public_keys: list[bytes]
    values: list[tuple[ValueId, int, NodeId]] = field(default_factory=list)
    objection_window: int = DEFAULT_OBJECTION_WINDOW
    tau: int = DEFAULT_TAU
    verifiers: Sequence[str] = ALL_ALGORITHMS

    @property
    def nodes(self) -> list[NodeId]:
        return [node_id_of(pk) for pk in self.public_keys]

    def genesis_block(self) -> MainChainBlock:
        statements: list[Statement] = [AddValue(v, amount, owner) for v, amount, owner in self.values]
        statements += [register_statement(a, self.objection_window) for a in self.verifiers]
        return MainChainBlock(1, ZERO_DIGEST, self.nodes[0], (), tuple(statements))

    # -- genesis file ------------------------------------------------------

    def to_yaml(self) -> str:
        doc = {
            "format": "vapor-genesis/1",
            "objection_window": self.objection_window,
            "tau": self.tau,
            "verifiers": list(self.verifiers),
            "nodes": [pk.hex() for pk in self.public_keys],
            "values": [
                {"id": str(v), "amount": amount, "owner": owner.hex()} for v, amount, owner in self.values
            ],
        }
        return yaml.safe_dump(doc, sort_keys=False)

    @classmethod
    def from_yaml(cls, text: str) -> "GenesisConfig":
        doc = yaml.safe_load(text)
        if not isinstance(doc, dict) or doc.get("format") != "vapor-genesis/1":
            raise MalformedMessage("not a vapor-genesis/1 document")
        return cls(
            public_keys=[bytes.fromhex(pk) for pk in doc["nodes"]],
            values=[
                (ValueId.parse(e["id"]), int(e["amount"]), bytes.fromhex(e["owner"])) for e in doc.get("values", [])
            ],
            objection_window=int(doc.get("objection_window", DEFAULT_OBJECTION_WINDOW)),
            tau=int(doc.get("tau", DEFAULT_TAU)),
            verifiers=tuple(doc.get("verifiers", ALL_ALGORITHMS)),
        )


class Chain:
    """Append-only sequence B_1, B_2, ... with the lookups verifiers need."""

    def __init__(self, genesis: MainChainBlock) -> None:
        if genesis.height != 1 or genesis.prev_hash != ZERO_DIGEST:
            raise ChainIntegrityError("genesis must be height 1 with a zero prev_hash")
        self.blocks: list[MainChainBlock] = []
        self.created: dict[ValueId, tuple[int, AddValue]] = {}
        self.deleted: dict[ValueId, int] = {}
        self.unlocks: dict[ValueId, list[tuple[int, Unlock]]] = defaultdict(list)
        self.objections: dict[ValueId, list[tuple[int, Objection]]] = defaultdict(list)
        self.bet_confirms: dict[tuple[ValueId, ValueId, int], list[tuple[int, BetConfirm]]] = defaultdict(list)
        self.registered: dict[str, int] = {}
        self.append(genesis)

    @property
    def height(self) -> int:
        return len(self.blocks)

    @property
    def genesis(self) -> MainChainBlock:
        return self.blocks[0]

    def append(self, block: MainChainBlock) -> None:
        expected_prev = self.blocks[-1].digest if self.blocks else ZERO_DIGEST
        if block.height != self.height + 1 or block.prev_hash != expected_prev:
            raise ChainIntegrityError(f"block {block.height} does not extend chain of height {self.height}")
        self.blocks.append(block)
        h = block.height
        for st in block.statements:
            if isinstance(st, AddValue):
                self.created[st.value] = (h, st)
            elif isinstance(st, DeleteValue):
                self.deleted.setdefault(st.value, h)
            elif isinstance(st, Unlock):
                self.unlocks[st.value].append((h, st))
            elif isinstance(st, Objection):
                self.objections[st.value].append((h, st))
            elif isinstance(st, BetConfirm):
                self.bet_confirms[_bet_key(st.value_a, st.value_b, st.target_height)].append((h, st))
            elif isinstance(st, RegisterVerifier):
                self.registered.setdefault(st.algorithm_id, h)

    def get_block(self, height: int) -> MainChainBlock:
        if not 1 <= height <= self.height:
            raise HeightNotReached(f"height {height} not reached (chain height {self.height})")
        return self.blocks[height - 1]

    def abstract(self, height: int, node: NodeId) -> Abstract | None:
        if not 1 <= height <= self.height:
            return None
        return self.blocks[height - 1].abstract_by_node.get(node)

    def resolve_miner(self, height: int) -> NodeId:
        return self.get_block(height).proposer

    def algorithms_at(self, height: int) -> dict[str, str]:
        """Registered algorithm family -> full id (with parameters) at ``height``."""
        out = {}
        for alg, h in self.registered.items():
            if h <= height:
                out.setdefault(alg.split(":", 1)[0], alg)
        return out

    def objection_window(self, height: int) -> int | None:
        alg = self.algorithms_at(height).get(FASTPAY_ALGORITHM)
        if alg is None:
            return None
        params = dict(p.split("=", 1) for p in alg.split(":")[1:])
        return int(params.get("T", DEFAULT_OBJECTION_WINDOW))

    def bet_confirmations(self, value_a: ValueId, value_b: ValueId, target: int) -> list[tuple[int, BetConfirm]]:
        return self.bet_confirms.get(_bet_key(value_a, value_b, target), [])

    def verify_integrity(self) -> None:
        prev = ZERO_DIGEST
        for k, block in enumerate(self.blocks, start=1):
            if block.height != k or block.prev_hash != prev:
                raise ChainIntegrityError(f"hash link broken at height {k}")
            prev = block.digest

    # -- persistence ---------------------------------------------------------

    def to_bytes(self) -> bytes:
        w = Writer().raw(CHAIN_MAGIC).u8(FORMAT_VERSION)
        for block in self.blocks:
            w.var(block.encoded)
        return w.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Chain":
        if data[:4] != CHAIN_MAGIC:
            raise DecodeError("not a chain file (bad magic)")
        r = Reader(data[4:])
        if r.u8() != FORMAT_VERSION:
            raise DecodeError("unsupported chain format version")
        blocks = []
        while not r.at_end():
            blocks.append(canonical_decode(MainChainBlock, r.var()))
        if not blocks:
            raise DecodeError("chain file holds no blocks")
        try:
            chain = cls(blocks[0])
            for block in blocks[1:]:
                chain.append(block)
        except ChainIntegrityError as exc:
            raise DecodeError(str(exc)) from None
        return chain

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "Chain":
        return cls.from_bytes(Path(path).read_bytes())


def _bet_key(a: ValueId, b: ValueId, target: int) -> tuple[ValueId, ValueId, int]:
    lo, hi = sorted((a, b))
    return (lo, hi, target)


class SimulatedEngine:
    """Deterministic round-robin engine.

    Equivocation (several abstracts from one node in a round) keeps the
    abstract with the smallest digest. A round makes a block only when more
    than two thirds of the nodes are reachable; otherwise the height stalls.
    """

    def __init__(self, config: GenesisConfig) -> None:
        self.config = config
        self.nodes = config.nodes
        self._known = set(self.nodes)
        self.chain = Chain(config.genesis_block())
        self._queue: list[Abstract | Statement] = []

    @property
    def height(self) -> int:
        return self.chain.height

    def get_block(self, height: int) -> MainChainBlock:
        return self.chain.get_block(height)

    def resolve_miner(self, height: int) -> NodeId:
        return self.chain.resolve_miner(height)

    def proposer_for(self, height: int) -> NodeId:
        return self.nodes[(height - 1) % len(self.nodes)]

    def submit(self, message: Abstract | Statement) -> bool:
        if isinstance(message, Abstract):
            if len(message.node) != 32 or len(message.key_hash) != 32 or len(message.signature) != 64:
                raise MalformedMessage("abstract fields have wrong widths")
        elif not isinstance(message, (AddValue, DeleteValue, Unlock, Objection, BetConfirm, RegisterVerifier)):
            raise MalformedMessage(f"unsupported message type {type(message).__name__}")
        self._queue.append(message)
        return True

    def advance_round(self, reachable: Iterable[NodeId] | None = None) -> MainChainBlock | None:
        if reachable is not None:
            reachable = set(reachable)
            if 3 * len(reachable & self._known) <= 2 * len(self.nodes):
                return None
        queue, self._queue = self._queue, []
        height = self.height + 1

        best: dict[NodeId, Abstract] = {}
        statements: list[Statement] = []
        added = set(self.chain.created)
        deleted = set(self.chain.deleted)
        registered = set(self.chain.registered)
        for msg in queue:
            if isinstance(msg, Abstract):
                if msg.node not in self._known or msg.key_hash != msg.node:
                    continue
                cur = best.get(msg.node)
                if cur is None or msg.digest < cur.digest:
                    best[msg.node] = msg
            elif self._statement_ok(msg, added, deleted, registered):
                statements.append(msg)

        abstracts = tuple(best[n] for n in sorted(best))
        block = MainChainBlock(height, self.chain.blocks[-1].digest, self.proposer_for(height), abstracts, tuple(statements))
        self.chain.append(block)
        return block

    def _statement_ok(self, st: Statement, added: set, deleted: set, registered: set) -> bool:
        if isinstance(st, AddValue):
            if st.value.is_divided or st.value in added or st.amount <= 0 or st.owner not in self._known:
                return False
            added.add(st.value)
            return True
        if isinstance(st, DeleteValue):
            if st.value not in added or st.value in deleted:
                return False
            deleted.add(st.value)
            return True
        if isinstance(st, (Unlock, BetConfirm)):
            return st.is_authentic()
        if isinstance(st, Objection):
            return len(st.signature) == 64
        if isinstance(st, RegisterVerifier):
            if st.algorithm_id in registered:
                return False
            registered.add(st.algorithm_id)
            return True
        return False
