"""Shared fixtures: a hand-driven world (engine + global block store)."""

from __future__ import annotations

import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vapor.codec import KeyPair
from vapor.ledger import ConfirmedBlockStore
from vapor.mainchain import ALL_ALGORITHMS, GenesisConfig, SimulatedEngine
from vapor.model import (
    BetConfirm,
    BetLock,
    DeleteValue,
    Divide,
    LockFor,
    Miner,
    Objection,
    Pay,
    Transaction,
    TransactionBlock,
    Unlock,
    ValueId,
    sign_abstract,
    sign_fast_transfer,
)


class World:
    """Drive the engine by hand and keep every confirmed block in one store."""

    def __init__(self, n=3, values=(("v", 10, 0),), objection_window=8, verifiers=ALL_ALGORITHMS, tag="w"):
        self.keys = [KeyPair.derive(f"{tag}/{i}") for i in range(n)]
        self.ids = [k.node_id for k in self.keys]
        self.v = {label: ValueId.named(f"{tag}/{label}") for label, _, _ in values}
        self.config = GenesisConfig(
            [k.public_key for k in self.keys],
            [(self.v[label], amount, self.ids[owner]) for label, amount, owner in values],
            objection_window=objection_window,
            verifiers=verifiers,
        )
        self.engine = SimulatedEngine(self.config)
        self.chain = self.engine.chain
        self.store = ConfirmedBlockStore()
        for k in self.keys:
            self.store.add_key(k.public_key)
        self.sn = 0

    def tx(self, value, receiver) -> Transaction:
        self.sn += 1
        return Transaction(value, receiver, self.sn)

    def pay(self, value, to: int) -> Transaction:
        return self.tx(value, Pay(self.ids[to]))

    def round(self, blocks=None, statements=()):
        blocks = blocks or {}
        for i, txs in blocks.items():
            self.engine.submit(sign_abstract(self.keys[i], self.ids[i], tuple(txs)))
        for st in statements:
            self.engine.submit(st)
        block = self.engine.advance_round()
        for i, txs in blocks.items():
            self.store.store_block(TransactionBlock(self.ids[i], block.height, tuple(txs)), self.chain)
        return block

    @property
    def height(self) -> int:
        return self.chain.height


@pytest.fixture
def world():
    return World()


def random_world(rng: random.Random, families: str = "all") -> tuple[World, list[ValueId]]:
    """A small world driven by random (often invalid) activity.

    ``families="base"`` restricts activity to plain payments and fees.
    """
    n = rng.randint(2, 8)
    nvals = rng.randint(1, 3)
    w = World(
        n,
        [(f"x{k}", rng.choice((4, 6, 10)), rng.randrange(n)) for k in range(nvals)],
        objection_window=rng.randint(1, 4),
        tag=f"rw{rng.getrandbits(32)}",
    )
    values = list(w.v.values())
    for _ in range(rng.randint(1, 20)):
        blocks: dict[int, list[Transaction]] = {}
        statements = []
        for i in range(n):
            if rng.random() < 0.5:
                continue
            txs = []
            for _ in range(rng.randint(1, 2)):
                v = rng.choice(values) if rng.random() < 0.85 else ValueId.named(f"noise{rng.random()}")
                kind = rng.random()
                if families == "base" or kind < 0.55:
                    rc = Pay(w.ids[rng.randrange(n)]) if rng.random() < 0.85 else Miner()
                elif kind < 0.7:
                    k = rng.choice((2, 3))
                    parts = [rng.randint(1, 5) for _ in range(k)]
                    rc = Divide(tuple(parts))
                    values += [v.child(j) for j in range(1, k + 1) if v.child(j) not in values]
                elif kind < 0.8:
                    rc = LockFor(w.ids[rng.randrange(n)])
                elif kind < 0.9:
                    rc = sign_fast_transfer(w.keys[i], v, w.ids[rng.randrange(n)], rng.randint(1, 3))
                else:
                    partner = rng.choice(values)
                    rc = BetLock(w.ids[rng.randrange(n)], w.height + rng.randint(1, 4), rng.randint(0, 1), partner)
                txs.append(w.tx(v, rc))
            if rng.random() < 0.15:
                txs.append(txs[0])  # same value twice in one block
            blocks[i] = txs
        if families != "base" and rng.random() < 0.3:
            v, i = rng.choice(values), rng.randrange(n)
            roll = rng.random()
            if roll < 0.4:
                statements.append(Unlock.create(w.keys[i], v))
            elif roll < 0.7:
                c = sign_fast_transfer(w.keys[i], v, w.ids[rng.randrange(n)], rng.randint(1, 3))
                statements.append(Objection(v, w.ids[rng.randrange(n)], c.payer_sn, c.signature))
            elif roll < 0.85 and len(values) > 1:
                a, b = rng.sample(values, 2)
                statements.append(BetConfirm.create(w.keys[i], a, b, w.height + rng.randint(1, 4)))
            elif not v.is_divided:
                statements.append(DeleteValue(v))
        w.round(blocks, statements)
    return w, values


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
