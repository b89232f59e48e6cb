import hashlib

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vapor.codec import (
    DecodeError,
    EmptyLeafSet,
    KeyPair,
    Reader,
    Writer,
    canonical_decode,
    canonical_encode,
    merkle_root,
    verify_signature,
)
from vapor.model import (
    Abstract,
    AddValue,
    BetConfirm,
    BetLock,
    DeleteValue,
    Divide,
    FastClaim,
    LockFor,
    MainChainBlock,
    Miner,
    Objection,
    Pay,
    Proof,
    RegisterVerifier,
    StatementEnvelope,
    Transaction,
    TransactionBlock,
    Unlock,
    ValueId,
    sign_abstract,
)

ids = st.binary(min_size=32, max_size=32)
u64s = st.integers(0, 2**64 - 1)
sigs = st.binary(min_size=64, max_size=64)
values = st.builds(ValueId, ids, st.lists(st.integers(1, 5), max_size=3).map(tuple))
receivers = st.one_of(
    st.builds(Pay, ids),
    st.just(Miner()),
    st.builds(Divide, st.lists(st.integers(1, 100), min_size=2, max_size=4).map(tuple)),
    st.builds(LockFor, ids),
    st.builds(BetLock, ids, u64s, st.integers(0, 1), values),
    st.builds(FastClaim, ids, u64s, sigs),
)
transactions = st.builds(Transaction, values, receivers, u64s)
tx_blocks = st.builds(TransactionBlock, ids, u64s, st.lists(transactions, min_size=1, max_size=4).map(tuple))
statements = st.one_of(
    st.builds(AddValue, values, u64s, ids),
    st.builds(DeleteValue, values),
    st.builds(Unlock, values, ids, ids, sigs),
    st.builds(Objection, values, ids, u64s, sigs),
    st.builds(BetConfirm, values, values, ids, u64s, ids, sigs),
    st.builds(RegisterVerifier, st.text(max_size=20), ids),
)
abstracts = st.builds(Abstract, ids, ids, sigs)
chain_blocks = st.builds(
    MainChainBlock,
    u64s,
    ids,
    ids,
    st.lists(abstracts, max_size=3).map(tuple),
    st.lists(statements, max_size=3).map(tuple),
)


@st.composite
def proofs(draw):
    blocks = draw(st.lists(tx_blocks, max_size=3))
    keys = draw(st.lists(ids, max_size=3))
    return Proof.build(draw(values), draw(u64s), blocks, keys)


ENCODABLE = [
    (ValueId, values),
    (Transaction, transactions),
    (TransactionBlock, tx_blocks),
    (Abstract, abstracts),
    (StatementEnvelope, statements.map(StatementEnvelope)),
    (MainChainBlock, chain_blocks),
    (Proof, proofs()),
]


@pytest.mark.parametrize("cls,strategy", ENCODABLE, ids=[c.__name__ for c, _ in ENCODABLE])
def test_round_trip(cls, strategy):
    @given(strategy)
    @settings(max_examples=60, deadline=None)
    def check(obj):
        assert canonical_decode(cls, canonical_encode(obj)) == obj

    check()


@given(transactions, transactions)
def test_encoding_is_injective(a, b):
    if a != b:
        assert canonical_encode(a) != canonical_encode(b)


@given(chain_blocks, chain_blocks)
@settings(deadline=None)
def test_block_encoding_is_injective(a, b):
    if a != b:
        assert canonical_encode(a) != canonical_encode(b)


@given(tx_blocks, st.data())
@settings(max_examples=200, deadline=None)
def test_mutated_bytes_never_decode_to_the_same_object(block, data):
    raw = bytearray(canonical_encode(block))
    pos = data.draw(st.integers(0, len(raw) - 1))
    raw[pos] ^= data.draw(st.integers(1, 255))
    try:
        other = canonical_decode(TransactionBlock, bytes(raw))
    except (DecodeError, ValueError):
        return
    assert other != block


@given(tx_blocks, st.data())
@settings(deadline=None)
def test_truncation_and_trailing_bytes_are_rejected(block, data):
    raw = canonical_encode(block)
    cut = data.draw(st.integers(0, len(raw) - 1))
    with pytest.raises(DecodeError):
        canonical_decode(TransactionBlock, raw[:cut])
    with pytest.raises(DecodeError):
        canonical_decode(TransactionBlock, raw + b"\x00")


def test_unknown_tags_are_rejected():
    v = ValueId.named("x")
    raw = bytearray(canonical_encode(Transaction(v, Miner(), 1)))
    raw[36] = 99  # receiver tag follows the 32-byte base and empty path
    with pytest.raises(DecodeError):
        canonical_decode(Transaction, bytes(raw))


def test_writer_rejects_out_of_range():
    with pytest.raises(ValueError):
        Writer().u64(-1)
    with pytest.raises(ValueError):
        Writer().u64(2**64)
    with pytest.raises(ValueError):
        Writer().fixed(b"short")
    with pytest.raises(DecodeError):
        Reader(b"\x00\x00\x00\xff").seq(Reader.u8)


# -- Merkle ----------------------------------------------------------------


def reference_root(leaves):
    """Recursive builder: split at the largest power of two below n.

    With odd-node promotion, the bottom-up tree has the same shape as this
    split, so the two must agree.
    """
    def h(b):
        return hashlib.sha256(b).digest()

    def build(nodes):
        if len(nodes) == 1:
            return nodes[0]
        k = 1
        while k * 2 < len(nodes):
            k *= 2
        return h(b"\x01" + build(nodes[:k]) + build(nodes[k:]))

    return build([h(b"\x00" + leaf) for leaf in leaves])


@given(st.lists(st.binary(max_size=40), min_size=1, max_size=40))
def test_merkle_matches_reference(leaves):
    assert merkle_root(leaves) == reference_root(leaves)


@given(st.lists(st.binary(max_size=8), min_size=1, max_size=12), st.data())
def test_merkle_detects_leaf_change(leaves, data):
    k = data.draw(st.integers(0, len(leaves) - 1))
    changed = list(leaves)
    changed[k] = changed[k] + b"!"
    assert merkle_root(changed) != merkle_root(leaves)


def test_merkle_leaf_and_node_domains_differ():
    # A two-leaf tree must not equal a single leaf holding the concatenated children.
    a, b = b"a", b"b"
    inner = hashlib.sha256(b"\x00" + a).digest() + hashlib.sha256(b"\x00" + b).digest()
    assert merkle_root([a, b]) != merkle_root([inner])


def test_merkle_empty_is_an_error():
    with pytest.raises(EmptyLeafSet):
        merkle_root([])


# -- keys and vectors --------------------------------------------------------


def test_signatures():
    kp = KeyPair.derive("alice")
    sig = kp.sign(b"msg")
    assert verify_signature(kp.public_key, b"msg", sig)
    assert not verify_signature(kp.public_key, b"msg2", sig)
    assert not verify_signature(KeyPair.derive("bob").public_key, b"msg", sig)
    assert "seed" not in repr(kp)


def test_published_vectors():
    alice, bob = KeyPair.derive("alice"), KeyPair.derive("bob")
    coin = ValueId.named("coin")
    assert alice.public_key.hex() == "b371863576284af698aafd2044002d150d4474581c78d78b9b73f10e2d6bf4d1"
    assert alice.node_id.hex() == "f561b0d315c855bd9de942e20a2d6521eabd923a2fdd9c00b853c753e5afa828"
    assert bob.node_id.hex() == "9917448e1069bc1708e7e1dfd2c53b59986f452bc52d9ccfe7e8356e80fc9a69"
    assert canonical_encode(coin.child(2)).hex() == (
        "984426fbac3bcff22474a3458c6168d6f99bbcb03d529d009633328d029727fc000000010000000000000002"
    )
    tx = Transaction(coin, Pay(bob.node_id), 1)
    assert canonical_encode(tx).hex() == (
        "984426fbac3bcff22474a3458c6168d6f99bbcb03d529d009633328d029727fc00000000"
        "00" "9917448e1069bc1708e7e1dfd2c53b59986f452bc52d9ccfe7e8356e80fc9a69" "0000000000000001"
    )
    block = TransactionBlock(alice.node_id, 2, (tx,))
    assert block.root.hex() == "7ebb0250ca2f1b75693407f704c567f092abc8dd6204f6f204c22c2b77d47fa6"
    assert merkle_root([b"a"]).hex() == "022a6979e6dab7aa5ae4c3e5e45f7e977112a7e63593820dbec1ec738a24f93c"
    assert merkle_root([b"a", b"b"]).hex() == "b137985ff484fb600db93107c77b0365c80d78f5b429ded0fd97361d077999eb"
    assert merkle_root([b"a", b"b", b"c"]).hex() == "36642e73c2540ab121e3a6bf9545b0a24982cd830eb13d3cd19de3ce6c021ec1"
    ab = sign_abstract(alice, alice.node_id, (tx,))
    assert ab.signature.hex() == (
        "be59051bab064efb66e3f33b7a4b1c8770ddcc88d5bdcd01af0901c43af8bb4d"
        "42b9503abe7210bbd1817115d39f822774a18fc61737db504078d2c6dcd8650e"
    )


def test_value_id_text_round_trip():
    v = ValueId.named("coin").child(1).child(3)
    assert ValueId.parse(str(v)) == v
    assert v.parent == ValueId.named("coin").child(1)
    assert v.lineage()[0] == ValueId.named("coin")
    with pytest.raises(ValueError):
        ValueId(b"short")
    with pytest.raises(ValueError):
        ValueId.named("coin").child(0)
