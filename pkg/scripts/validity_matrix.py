#!/usr/bin/env python3
"""Run the honest / withholder / adversarial suites over many seeds and tabulate probe failures."""

import argparse
import json
import time
from concurrent.futures import ProcessPoolExecutor

from vapor.simnet import Adversary, DelayModel, Scenario, run

SUITES = {
    "honest": dict(split_rate=0.2),
    "withholder": dict(adversaries=[Adversary(3, "withholder")]),
    "adversarial": dict(
        split_rate=0.2,
        delay=DelayModel("adversarial", 1, 10),
        adversaries=[Adversary(1, "double_spender"), Adversary(2, "equivocator")],
    ),
}


def one(job):
    suite, seed, nodes, rounds = job
    t = time.perf_counter()
    r = run(Scenario(seed=seed, nodes=nodes, rounds=rounds, **SUITES[suite]))
    return {
        "suite": suite,
        "seed": seed,
        "seconds": round(time.perf_counter() - t, 3),
        "violations": {k: len(p.violations) for k, p in r.probes.items()},
        "withheld": len(r.withheld),
        "withheld_match": r.withheld == r.unproven,
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=50)
    ap.add_argument("--nodes", type=int, default=16)
    ap.add_argument("--rounds", type=int, default=50)
    ap.add_argument("--parallel", type=int, default=4)
    ap.add_argument("--suite", choices=sorted(SUITES), action="append")
    args = ap.parse_args(argv)

    jobs = [(s, k, args.nodes, args.rounds) for s in (args.suite or SUITES) for k in range(args.seeds)]
    with ProcessPoolExecutor(args.parallel) as pool:
        rows = list(pool.map(one, jobs))
    for suite in args.suite or SUITES:
        mine = [r for r in rows if r["suite"] == suite]
        totals = {}
        for r in mine:
            for k, n in r["violations"].items():
                totals[k] = totals.get(k, 0) + n
        row = {"suite": suite, "runs": len(mine), "slowest_s": max(r["seconds"] for r in mine), "violations": totals}
        if suite == "withholder":
            # only withheld values should lack a proof at their receiver
            row["withheld"] = sum(r["withheld"] for r in mine)
            row["withheld_match"] = all(r["withheld_match"] for r in mine)
        print(json.dumps(row, sort_keys=True))


if __name__ == "__main__":
    main()
