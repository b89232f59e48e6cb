"""Compare the proof verifiers against full-ledger replay."""

from __future__ import annotations

from vapor.ledger import Status, replay
from vapor.verifier import NA, Fail, extract_proof, get_owner, verify_owner

FAIL = "fail"


def expected_verdict(table, value):
    e = table.entries.get(value)
    if e is None:
        return FAIL
    if e.status is Status.OWNED:
        return e.owner
    if e.status in (Status.LOCKED, Status.BET_LOCKED):
        return NA
    return FAIL


def observed_verdict(verdict):
    return FAIL if isinstance(verdict, Fail) else verdict


def mismatches(world, values, base_only=False):
    """(value, height, oracle, verifier) for every disagreement."""
    verify = get_owner if base_only else verify_owner
    out = []
    for table in replay(world.store, world.chain, world.chain.height):
        for v in values:
            proof = extract_proof(v, table.height, world.store, world.chain)
            want = expected_verdict(table, v)
            if base_only and want is NA:
                want = FAIL
            got = observed_verdict(verify(v, table.height, proof, world.chain))
            if want != got:
                out.append((v, table.height, want, got))
    return out


def mutate(proof, world):
    """Every single-element mutation of ``proof``: (label, mutated proof or None).

    None stands for a mutation whose bytes no longer decode, which a verifier
    never gets to see.
    """
    import random

    from vapor.codec import DecodeError, canonical_decode, canonical_encode
    from vapor.model import Miner, Proof, Transaction, TransactionBlock

    rng = random.Random(canonical_encode(proof))
    blocks, keys = list(proof.blocks), list(proof.keys)
    out = []
    for k in range(len(blocks)):
        out.append((f"drop block {k}", Proof(proof.value, proof.height, tuple(blocks[:k] + blocks[k + 1:]), proof.keys)))
    for k in range(len(keys)):
        out.append((f"drop key {k}", Proof(proof.value, proof.height, proof.blocks, tuple(keys[:k] + keys[k + 1:]))))
    foreign = [b for key, b in sorted(world.store.blocks.items()) if key not in set(proof.block_ids)]
    if not foreign:
        foreign = [TransactionBlock(world.ids[0], 1, (Transaction(proof.value, Miner(), 1),))]
    out.append(("add foreign block", Proof.build(proof.value, proof.height, blocks + [rng.choice(foreign)], keys)))
    spare = [pk for pk in (k.public_key for k in world.keys) if pk not in keys]
    if spare:
        out.append(("add foreign key", Proof.build(proof.value, proof.height, blocks, keys + [spare[0]])))
    for k, b in enumerate(blocks):
        raw = bytearray(canonical_encode(b))
        raw[rng.randrange(len(raw))] ^= 1 << rng.randrange(8)
        try:
            nb = canonical_decode(TransactionBlock, bytes(raw))
        except (DecodeError, ValueError):
            out.append((f"flip byte in block {k}", None))
            continue
        out.append((f"flip byte in block {k}", Proof(proof.value, proof.height, tuple(blocks[:k] + [nb] + blocks[k + 1:]), proof.keys)))
    for k, pk in enumerate(keys):
        raw = bytearray(pk)
        raw[rng.randrange(len(raw))] ^= 1 << rng.randrange(8)
        out.append((f"flip byte in key {k}", Proof(proof.value, proof.height, proof.blocks, tuple(keys[:k] + [bytes(raw)] + keys[k + 1:]))))
    return out


def correct_proofs(world, values):
    """(value, height, proof, verdict) for every query with a verified owner."""
    out = []
    for v in values:
        for h in range(1, world.chain.height + 1):
            p = extract_proof(v, h, world.store, world.chain)
            verdict = verify_owner(v, h, p, world.chain)
            if not isinstance(verdict, Fail) and verdict is not NA:
                out.append((v, h, p, verdict))
    return out
