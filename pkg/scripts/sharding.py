#!/usr/bin/env python3
"""Sweep cluster counts and seeds; print mean b for least-delta vs full replication.

    python3 scripts/sharding.py --nodes 64 --rounds 200 --clusters 1 2 4 8 --seeds 3
"""

import argparse
import csv
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from statistics import mean

from vapor.cli import template
from vapor.simnet import run


def one(job):
    nodes, rounds, k, seed, baseline = job
    sc = replace(template("clustered", nodes, rounds, k, seed), probe_every=0, oracle=False)
    if baseline:
        sc = replace(sc, strategy="full_replication", dedup=False)
    m = run(sc).metrics
    return k, seed, baseline, m.mean_b, m.cluster_block_rate


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=64)
    ap.add_argument("--rounds", type=int, default=200)
    ap.add_argument("--clusters", type=int, nargs="+", default=[1, 2, 4, 8])
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--parallel", type=int, default=4)
    args = ap.parse_args(argv)

    jobs = [(args.nodes, args.rounds, k, s, base) for k in args.clusters for s in range(args.seeds) for base in (False, True)]
    with ProcessPoolExecutor(args.parallel) as pool:
        rows = list(pool.map(one, jobs))

    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["clusters", "mean_b", "baseline_b", "ratio", "cluster_block_rate"])
    for k in args.clusters:
        b = mean(r[3] for r in rows if r[0] == k and not r[2])
        b0 = mean(r[3] for r in rows if r[0] == k and r[2])
        rate = mean(r[4] for r in rows if r[0] == k and not r[2])
        out.writerow([k, f"{b:.3f}", f"{b0:.3f}", f"{b / b0:.3f}" if b0 else "", f"{rate:.3f}"])


if __name__ == "__main__":
    main()
