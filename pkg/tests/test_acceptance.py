"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict in ``RESULTS``; ``conftest`` prints them
in the terminal summary. Running this file directly prints the same lines.
"""

import random
import sys
import time
from collections import Counter
from dataclasses import replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

from conftest import World, random_world  # noqa: E402
from oracle_check import correct_proofs, mismatches, mutate  # noqa: E402
from vapor.cli import template  # noqa: E402
from vapor.ledger import Status, replay  # noqa: E402
from vapor.model import BetConfirm, BetLock, Divide, LockFor, Objection, Proof, Unlock, sign_fast_transfer  # noqa: E402
from vapor.simnet import Adversary, DelayModel, Scenario, run  # noqa: E402
from vapor.verifier import NA, Fail, VerifierRegistry, extract_bet_proof, extract_proof, get_owner_bet, get_owner_fp  # noqa: E402

RESULTS: list[str] = []


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


# -- 1: validity matrix ----------------------------------------------------------

SEEDS_1 = range(50)


def _suite(make) -> tuple[list, float]:
    out, slowest = [], 0.0
    for seed in SEEDS_1:
        t = time.perf_counter()
        out.append(run(make(seed)))
        slowest = max(slowest, time.perf_counter() - t)
    return out, slowest


def test_1a_all_honest():
    runs, slowest = _suite(lambda s: Scenario(seed=s, nodes=16, rounds=50, split_rate=0.2))
    props = ("ownership", "liquidity", "authenticity")
    bad = sum(len(r.probes[p].violations) for r in runs for p in props)
    checked = sum(r.probes[p].checked for r in runs for p in props)
    ok = bad == 0 and slowest < 10 and all(r.probes[p].checked for r in runs for p in props)
    record(1, ok, f"(a) honest: {bad} violations over {checked} checks in {len(runs)} runs, slowest {slowest:.2f}s")


def test_1b_withholder():
    runs, slowest = _suite(lambda s: Scenario(seed=s, nodes=16, rounds=50, adversaries=[Adversary(3, "withholder")]))
    exact = sum(r.unproven == r.withheld for r in runs)
    withheld = sum(len(r.withheld) for r in runs)
    others = sum(len(r.probes[p].violations) for r in runs for p in ("liquidity", "authenticity", "ownership"))
    ok = exact == len(runs) and withheld > 0 and others == 0 and slowest < 10
    record(1, ok, f"(b) withholder: unproven == withheld in {exact}/{len(runs)} runs ({withheld} withheld), "
                  f"{others} other violations, slowest {slowest:.2f}s")


def test_1c_adversarial():
    def make(s):
        return Scenario(
            seed=s, nodes=16, rounds=50, split_rate=0.2, delay=DelayModel("adversarial", 1, 10),
            adversaries=[Adversary(1, "double_spender"), Adversary(2, "equivocator")],
        )

    runs, slowest = _suite(make)
    held = sum(r.probes["authenticity"].ok and r.probes["consistency"].ok for r in runs)
    ok = held == len(runs) and slowest < 10
    record(1, ok, f"(c) adversarial: authenticity held in {held}/{len(runs)} runs, slowest {slowest:.2f}s")


# -- 2: oracle equivalence -------------------------------------------------------


def test_2_oracle_equivalence():
    t = time.perf_counter()
    bad = []
    for seed in range(1000):
        w, values = random_world(random.Random(seed), "all" if seed % 4 else "base")
        bad += mismatches(w, values, base_only=seed % 4 == 0)
    took = time.perf_counter() - t
    record(2, not bad and took < 60, f"1000 random worlds, {len(bad)} disagreements, {took:.1f}s")


# -- 3: proof soundness ----------------------------------------------------------


def test_3_mutations():
    proofs, tried, accepted = 0, 0, []
    seed = 0
    while proofs < 200:
        w, values = random_world(random.Random(10_000 + seed))
        seed += 1
        reg = VerifierRegistry(w.chain)
        for v, h, p, _ in correct_proofs(w, values):
            proofs += 1
            for label, mutated in mutate(p, w):
                tried += 1
                if mutated is not None and not isinstance(reg.verify(v, h, mutated), Fail):
                    accepted.append((str(v), h, label))
    record(3, not accepted, f"{proofs} proofs, {tried} single mutations, {len(accepted)} accepted")


# -- 4: double spend -------------------------------------------------------------


def test_4_double_spend():
    cases, wrong, runs = 0, [], 0
    for seed in range(20):
        r = run(Scenario(seed=seed, nodes=8, rounds=20, tx_rate=0.5, adversaries=[Adversary(1, "double_spender")]))
        runs += 1
        store, chain = r.global_store(), r.chain
        tables = list(replay(store, chain, chain.height))
        reg = VerifierRegistry(chain)
        for (h, creator), block in store.blocks.items():
            counts = Counter(tx.value for tx in block.transactions)
            for v, n in counts.items():
                if n < 2 or tables[h - 2].owner(v) != creator:
                    continue
                cases += 1
                for table in tables[h - 1:]:
                    verdict = reg.verify(v, table.height, extract_proof(v, table.height, store, chain))
                    if table.owner(v) is not Status.NA or not isinstance(verdict, Fail):
                        wrong.append((seed, str(v), table.height))
    record(4, cases > 0 and not wrong, f"{cases} double spends over {runs} runs, {len(wrong)} heights not NA/Fail")


# -- 5: spontaneous sharding -----------------------------------------------------


def test_5_sharding():
    sc = template("clustered")
    t = time.perf_counter()
    least = run(sc)
    took = time.perf_counter() - t
    base = run(replace(sc, strategy="full_replication", dedup=False, probe_every=0, oracle=False))
    b, b0, rate = least.metrics.mean_b, base.metrics.mean_b, least.metrics.cluster_block_rate
    ok = b <= 0.5 * b0 and rate / 2 <= b <= 2 * rate and took < 60 and least.ok
    record(5, ok, f"mean b {b:.2f} vs baseline {b0:.2f} (ratio {b / b0:.2f}), cluster block rate {rate:.2f}, {took:.1f}s")


# -- 6: division conservation ----------------------------------------------------


def test_6_division():
    lineages, broken, tampered, tamper_accepted = 0, [], 0, []
    for seed in range(20):
        r = run(Scenario(seed=seed, nodes=8, rounds=20, split_rate=0.5))
        store, chain = r.global_store(), r.chain
        reg = VerifierRegistry(chain)
        final = list(replay(store, chain, chain.height))[-1]
        for v, e in final.entries.items():
            if e.status is Status.DIVIDED and e.divide is not None:
                lineages += 1
                kids = [final.entries.get(v.child(k)) for k in range(1, len(e.divide.amounts) + 1)]
                if None in kids or sum(k.amount for k in kids) != e.amount:
                    broken.append((seed, str(v)))
        for (h, creator), block in store.blocks.items():
            for i, tx in enumerate(block.transactions):
                if not isinstance(tx.receiver, Divide):
                    continue
                child = tx.value.child(1)
                proof = extract_proof(child, chain.height, store, chain)
                if isinstance(reg.verify(child, chain.height, proof), Fail):
                    continue
                amounts = (tx.receiver.amounts[0] + 1,) + tx.receiver.amounts[1:]
                txs = list(block.transactions)
                txs[i] = replace(tx, receiver=Divide(amounts))
                forged = replace(block, transactions=tuple(txs))
                blocks = tuple(forged if b.key == block.key else b for b in proof.blocks)
                tampered += 1
                if not isinstance(reg.verify(child, chain.height, Proof(child, chain.height, blocks, proof.keys)), Fail):
                    tamper_accepted.append((seed, str(child)))
    # a properly signed division whose parts do not add up is never honoured
    committed_bad = 0
    rng = random.Random(6)
    for k in range(50):
        amount = rng.randint(2, 50)
        part = rng.randint(1, amount - 1)
        w = World(3, [("a", amount, 0)], tag=f"div{k}")
        a = w.v["a"]
        w.round({0: [w.tx(a, Divide((part, amount - part + rng.choice((-1, 1)))))]})
        proof = extract_proof(a.child(1), w.height, w.store, w.chain)
        if isinstance(VerifierRegistry(w.chain).verify(a.child(1), w.height, proof), Fail):
            committed_bad += 1
    ok = lineages > 0 and not broken and tampered > 0 and not tamper_accepted and committed_bad == 50
    record(6, ok, f"{lineages} lineages, {len(broken)} unbalanced; {tampered} child-amount flips, "
                  f"{len(tamper_accepted)} accepted; {committed_bad}/50 unbalanced divisions rejected")


# -- 7: fast payment -------------------------------------------------------------

T = 8


def _locked(tag):
    w = World(3, objection_window=T, tag=tag)
    v = w.v["v"]
    w.round({0: [w.tx(v, LockFor(w.ids[1]))]})
    return w, v


def _fp(w, v, h):
    return get_owner_fp(v, h, extract_proof(v, h, w.store, w.chain), w.chain)


def test_7_fast_payment():
    # (i) unopposed unlock
    w, v = _locked("fp-i")
    w.round(statements=[Unlock.create(w.keys[0], v)])
    u = w.height
    for _ in range(T + 2):
        w.round()
    ok_i = all(_fp(w, v, h) is NA for h in range(u, u + T + 1)) and _fp(w, v, u + T + 1) == w.ids[0]

    # (ii) an objection at any round up to u+T voids the unlock
    voided = 0
    for offset in range(1, T + 2):
        w, v = _locked(f"fp-ii-{offset}")
        w.round(statements=[Unlock.create(w.keys[0], v)])
        u = w.height
        claim = sign_fast_transfer(w.keys[0], v, w.ids[1], 1)
        for k in range(1, T + 3):
            w.round(statements=[Objection(v, w.ids[1], claim.payer_sn, claim.signature)] if k == offset else [])
        voided += (_fp(w, v, u + T + 1) is NA) == (offset <= T)
    ok_ii = voided == T + 1

    # (iii) a claim included by the beneficiary
    w, v = _locked("fp-iii")
    claim = sign_fast_transfer(w.keys[0], v, w.ids[1], 1)
    w.round({1: [w.tx(v, claim)]})
    ok_iii = _fp(w, v, w.height) == w.ids[1]

    # the same flow through agents
    r = run(template("fastpay"))
    ok_sim = r.ok

    record(7, ok_i and ok_ii and ok_iii and ok_sim,
           f"T={T}: (i) {ok_i}, (ii) {voided}/{T + 1} offsets exact, (iii) {ok_iii}, agents {ok_sim}")


# -- 8: betting ------------------------------------------------------------------


def test_8_betting():
    exact, total, winners = 0, 0, Counter()
    for seed in range(60):
        r = run(template("betting", seed=seed))
        reg = VerifierRegistry(r.chain)
        for bet in r.bets:
            total += 1
            a, b = r.agents[bet["a"]], r.agents[bet["b"]]
            x, y, target = bet["value_a"], bet["value_b"], bet["target"]
            if bet["confirm"]:
                lsb = r.chain.get_block(target).digest[-1] & 1
                winner = a if lsb == 0 else b
                winners[lsb] += 1
                expected = {x: winner, y: winner}
            else:
                expected = {x: a, y: b}
            good = all(v in agent.owned for v, agent in expected.items())
            for v, agent in expected.items():
                verdict = reg.verify(v, r.chain.height, extract_proof(v, r.chain.height, agent.store, r.chain))
                good = good and verdict == agent.node_id
            exact += good
    # the ledger-level resolution agrees on independently built worlds
    for k in range(40):
        confirm = k % 2 == 0
        w = World(3, [("a", 5, 0), ("b", 5, 1)], tag=f"bet{k}")
        a, b = w.v["a"], w.v["b"]
        target = w.height + 5
        w.round({0: [w.tx(a, BetLock(w.ids[1], target, 0, b))], 1: [w.tx(b, BetLock(w.ids[0], target, 1, a))]})
        w.round(statements=[BetConfirm.create(w.keys[0], a, b, target)] if confirm else [])
        while w.height < target:
            w.round()
        lsb = w.chain.get_block(target).digest[-1] & 1
        want = (w.ids[lsb], w.ids[lsb]) if confirm else (w.ids[0], w.ids[1])
        total += 1
        exact += get_owner_bet((a, b), target, extract_bet_proof((a, b), target, w.store, w.chain), w.chain) == want
    ok = total >= 100 and exact == total and len(winners) == 2
    record(8, ok, f"{exact}/{total} bets exact (confirmed outcomes by LSB: {dict(sorted(winners.items()))})")


# -- 9: determinism --------------------------------------------------------------


def test_9_determinism():
    names = ["uniform", "partition", "adversary-suite", "fastpay", "betting"]
    scenarios = [template(n, seed=3) for n in names] + [template("clustered", nodes=16, rounds=40, seed=3)]
    same = 0
    for sc in scenarios:
        a, b = run(sc), run(Scenario.from_yaml(sc.to_yaml()))
        same += (a.transcript_jsonl(), a.metrics.to_csv(), a.report()) == (b.transcript_jsonl(), b.metrics.to_csv(), b.report())
    record(9, same == len(scenarios), f"{same}/{len(scenarios)} scenarios byte-identical on rerun")


if __name__ == "__main__":
    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            try:
                fn()
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)
