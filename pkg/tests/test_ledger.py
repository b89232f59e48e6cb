import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import World, random_world
from vapor.ledger import (
    BadSignature,
    ConfirmedBlockStore,
    MerkleMismatch,
    NoMatchingAbstract,
    Status,
    derive_ownership,
    replay,
)
from vapor.mainchain import BASE_ALGORITHM
from vapor.model import (
    DeleteValue,
    Divide,
    LockFor,
    Miner,
    TransactionBlock,
    Unlock,
    sign_abstract,
    sign_fast_transfer,
)


def owner_at(w, v, h=None):
    return derive_ownership(w.store, w.chain, h).owner(v)


# -- store -------------------------------------------------------------------


def test_store_accepts_confirmed_block_once(world):
    tx = world.pay(world.v["v"], 1)
    world.engine.submit(sign_abstract(world.keys[0], world.ids[0], (tx,)))
    world.engine.advance_round()
    store = ConfirmedBlockStore()
    block = TransactionBlock(world.ids[0], 2, (tx,))
    assert store.store_block(block, world.chain, world.keys[0].public_key)
    assert not store.store_block(block, world.chain)
    assert store.get(2, world.ids[0]) == block


def test_store_rejections(world):
    tx = world.pay(world.v["v"], 1)
    world.engine.submit(sign_abstract(world.keys[0], world.ids[0], (tx,)))
    world.engine.advance_round()
    store = ConfirmedBlockStore()
    with pytest.raises(BadSignature):
        store.store_block(TransactionBlock(world.ids[0], 2, (tx,)), world.chain)  # no key yet
    with pytest.raises(BadSignature):
        store.store_block(TransactionBlock(world.ids[0], 2, (tx,)), world.chain, world.keys[1].public_key)
    store.add_key(world.keys[0].public_key)
    with pytest.raises(NoMatchingAbstract):
        store.store_block(TransactionBlock(world.ids[0], 3, (tx,)), world.chain)
    with pytest.raises(MerkleMismatch):
        store.store_block(TransactionBlock(world.ids[0], 2, (world.pay(world.v["v"], 2),)), world.chain)


def test_store_directory_round_trip(world, tmp_path):
    world.round({0: [world.pay(world.v["v"], 1)]})
    world.round({1: [world.pay(world.v["v"], 2)]})
    world.store.save_dir(tmp_path)
    loaded = ConfirmedBlockStore.load_dir(tmp_path, world.chain)
    assert loaded.blocks == world.store.blocks
    assert derive_ownership(loaded, world.chain).owner(world.v["v"]) == world.ids[2]


# -- derivation --------------------------------------------------------------


def test_transfer_chain(world):
    v = world.v["v"]
    world.round({0: [world.pay(v, 1)]})
    world.round({2: [world.pay(world.v["v"], 0)]})  # node 2 does not own it: no effect
    world.round({1: [world.pay(v, 2)]})
    assert [owner_at(world, v, h) for h in range(1, 5)] == [world.ids[0], world.ids[1], world.ids[1], world.ids[2]]


def test_two_transactions_of_one_value_make_it_na(world):
    v = world.v["v"]
    world.round({0: [world.pay(v, 1), world.pay(v, 2)]})
    for _ in range(3):
        world.round({1: [world.pay(v, 0)], 2: [world.pay(v, 0)]})
    for h in range(2, world.height + 1):
        assert owner_at(world, v, h) is Status.NA


def test_fee_goes_to_proposer(world):
    v = world.v["v"]
    world.round({0: [world.tx(v, Miner())]})
    assert owner_at(world, v) == world.chain.resolve_miner(2) == world.ids[1]


def test_missing_block_makes_value_unknown(world):
    v = world.v["v"]
    tx = world.pay(v, 1)
    world.engine.submit(sign_abstract(world.keys[0], world.ids[0], (tx,)))
    world.engine.advance_round()  # block never stored
    assert owner_at(world, v) is Status.UNKNOWN


def test_division_conserves_and_rejects_bad_sums():
    w = World(3, [("a", 10, 0), ("b", 10, 0)])
    a, b = w.v["a"], w.v["b"]
    w.round({0: [w.tx(a, Divide((7, 3))), w.tx(b, Divide((7, 4)))]})
    t = derive_ownership(w.store, w.chain)
    assert t[a].status is Status.DIVIDED
    assert [t[a.child(k)].amount for k in (1, 2)] == [7, 3]
    assert t.owner(a.child(1)) == w.ids[0]
    assert t.owner(b) is Status.NA and b.child(1) not in t
    w.round({0: [w.pay(a.child(1), 2)]})
    assert owner_at(w, a.child(1)) == w.ids[2]


def test_division_needs_registered_verifier():
    w = World(3, verifiers=(BASE_ALGORITHM,))
    w.round({0: [w.tx(w.v["v"], Divide((5, 5)))]})
    assert owner_at(w, w.v["v"]) is Status.NA


def test_delete(world):
    v = world.v["v"]
    world.round(statements=[DeleteValue(v)])
    world.round({0: [world.pay(v, 1)]})
    assert owner_at(world, v) is Status.DELETED


def test_lock_unlock_restores_after_window():
    w = World(3, objection_window=3)
    v = w.v["v"]
    w.round({0: [w.tx(v, LockFor(w.ids[1]))]})  # h=2
    w.round(statements=[Unlock.create(w.keys[0], v)])  # u=3
    for _ in range(4):
        w.round()
    assert owner_at(w, v, 6) is Status.NA  # still locked at u+T
    assert owner_at(w, v, 7) == w.ids[0]  # restored at u+T+1


def test_claim_inside_lock_goes_to_beneficiary():
    w = World(3)
    v = w.v["v"]
    w.round({0: [w.tx(v, LockFor(w.ids[1]))]})
    claim = sign_fast_transfer(w.keys[0], v, w.ids[1], 1)
    w.round({1: [w.tx(v, claim)]})
    assert owner_at(w, v) == w.ids[1]


def test_csv_export(world):
    world.round({0: [world.pay(world.v["v"], 1)]})
    text = derive_ownership(world.store, world.chain).to_csv()
    lines = text.splitlines()
    assert lines[0] == "value_id,owner,amount,since_height"
    assert lines[1] == f"{world.v['v']},{world.ids[1].hex()},10,2"


# -- invariants ----------------------------------------------------------------


@given(st.integers(0, 2**32))
@settings(max_examples=40, deadline=None)
def test_live_total_never_grows_and_divisions_conserve(seed):
    w, values = random_world(random.Random(seed))
    prev_total = None
    for table in replay(w.store, w.chain):
        total = table.live_total()
        if prev_total is not None:
            assert total <= prev_total
        prev_total = total
        # Each entry names at most one owner by construction; divided parents
        # hand their whole amount to the children.
        for v, e in table.entries.items():
            if e.status is Status.DIVIDED and e.divide is not None:
                kids = [table.entries.get(v.child(k)) for k in range(1, len(e.divide.amounts) + 1)]
                assert sum(k.amount for k in kids if k is not None) == e.amount


@given(st.integers(0, 2**32))
@settings(max_examples=25, deadline=None)
def test_replay_is_a_pure_function_of_store_and_chain(seed):
    w, _ = random_world(random.Random(seed))
    a = [t.to_csv() for t in replay(w.store, w.chain)]
    b = [t.to_csv() for t in replay(w.store, w.chain)]
    assert a == b
