"""Command line entry point: ``vapor <subcommand>``.

Exit codes: 0 success, 2 malformed input (scenario, chain, proof, template),
3 invariant violation during ``run``, 4 ``verify`` did not establish an owner.
Logs go to stderr; verbosity comes from ``VAPOR_LOG`` (DEBUG, INFO, ...).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .codec import DecodeError
from .ledger import Status
from .mainchain import Chain, ChainIntegrityError
from .model import Proof, ValueId
from .simnet import (
    Action,
    Adversary,
    DelayModel,
    Partition,
    Scenario,
    ScenarioInvalid,
    Simulation,
)
from .verifier import Fail, VerifierRegistry, extract_proof

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INVARIANT = 3
EXIT_FAIL = 4

log = logging.getLogger("vapor")

TEMPLATES = ("uniform", "clustered", "partition", "adversary-suite", "fastpay", "betting")


def template(name: str, nodes: int | None = None, rounds: int | None = None, clusters: int | None = None, seed: int = 0) -> Scenario:
    if name == "uniform":
        sc = Scenario(seed=seed, nodes=nodes or 16, rounds=rounds or 50, pattern="uniform", split_rate=0.2)
    elif name == "clustered":
        sc = Scenario(
            seed=seed, nodes=nodes or 64, rounds=rounds or 200, pattern="clustered", clusters=clusters or 4,
            cross_rate=0.02, probe_every=10,
        )
    elif name == "partition":
        n = nodes or 16
        r = rounds or 40
        sc = Scenario(
            seed=seed, nodes=n, rounds=r, pattern="uniform",
            partitions=[Partition([0, 1], r // 4, r // 2)],
        )
    elif name == "adversary-suite":
        sc = Scenario(
            seed=seed, nodes=nodes or 16, rounds=rounds or 50, pattern="uniform",
            delay=DelayModel("adversarial", 1, 6),
            adversaries=[
                Adversary(1, "withholder"),
                Adversary(2, "double_spender"),
                Adversary(3, "equivocator"),
                Adversary(4, "forger"),
                Adversary(5, "silent_receiver"),
            ],
        )
    elif name == "fastpay":
        sc = Scenario(
            seed=seed, nodes=nodes or 4, rounds=rounds or 24, pattern="none", objection_window=8,
            actions=[
                Action(2, "lock", 0, 1),
                Action(2, "lock", 2, 3),
                Action(4, "fast_pay", 0, 1),
                Action(4, "unlock", 2, 3),
            ],
        )
    elif name == "betting":
        sc = Scenario(
            seed=seed, nodes=nodes or 4, rounds=rounds or 16, pattern="none",
            actions=[Action(2, "bet", 0, 1, offset=4, confirm=True), Action(2, "bet", 2, 3, offset=4, confirm=False)],
        )
    else:
        raise ScenarioInvalid(f"unknown template {name!r}; choose from {', '.join(TEMPLATES)}")
    return sc.validate()


# --------------------------------------------------------------------------- #
# Subcommands
# --------------------------------------------------------------------------- #


def _run_one(sc: Scenario, out: Path, export_proofs: bool) -> dict:
    sim = Simulation(sc)
    result = sim.run()
    result.write(out)
    sim.chain.save(out / "chain.vchn")
    (out / "genesis.yaml").write_text(sim.genesis.to_yaml())
    if export_proofs:
        proofs = out / "proofs"
        proofs.mkdir(exist_ok=True)
        h = sim.chain.height
        for i, agent in enumerate(sim.agents):
            if not agent.honest:
                continue
            for v in sorted(agent.owned):
                proof = extract_proof(v, h, agent.store, sim.chain)
                (proofs / f"{v}@{h}.vprf").write_bytes(proof.to_file_bytes())
    return {
        "seed": sc.seed,
        "ok": result.ok,
        "height": sim.chain.height,
        "mean_b": round(result.metrics.mean_b, 6),
        "violations": {k: p.violations for k, p in sorted(result.probes.items()) if p.violations},
    }


def cmd_run(args) -> int:
    try:
        sc = Scenario.load(args.scenario)
    except (OSError, ScenarioInvalid) as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    seeds = [sc.seed if args.seed is None else args.seed]
    if args.repeat > 1:
        seeds = [seeds[0] + k for k in range(args.repeat)]
    out = Path(args.out)
    jobs = [(replace(sc, seed=s), out if len(seeds) == 1 else out / f"seed-{s}", args.export_proofs) for s in seeds]
    if args.parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(args.parallel) as pool:
            summaries = list(pool.map(_run_one, *zip(*jobs)))
    else:
        summaries = [_run_one(*job) for job in jobs]

    if args.format == "csv":
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["seed", "ok", "height", "mean_b", "violations"])
        for s in summaries:
            w.writerow([s["seed"], s["ok"], s["height"], s["mean_b"], sum(len(v) for v in s["violations"].values())])
    else:
        for s in summaries:
            print(json.dumps(s, sort_keys=True))
    bad = [s for s in summaries if not s["ok"]]
    for s in bad:
        for probe, items in s["violations"].items():
            for item in items[:5]:
                log.error("seed %s %s: %s", s["seed"], probe, item)
    return EXIT_INVARIANT if bad else EXIT_OK


def cmd_verify(args) -> int:
    try:
        chain = Chain.load(args.chain)
        proof = Proof.from_file_bytes(Path(args.proof).read_bytes())
        value = ValueId.parse(args.value)
    except (OSError, DecodeError, ValueError, ChainIntegrityError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.height > chain.height or args.height < 1:
        print(f"Fail: height {args.height} outside chain (height {chain.height})")
        return EXIT_FAIL
    verdict = VerifierRegistry(chain).verify(value, args.height, proof)
    if isinstance(verdict, Fail):
        print(f"Fail: {verdict.reason}")
        return EXIT_FAIL
    if isinstance(verdict, Status):
        print(f"{verdict.value}: value has no spendable owner at height {args.height}")
        return EXIT_FAIL
    print(verdict.hex())
    return EXIT_OK


def cmd_dump_chain(args) -> int:
    try:
        chain = Chain.load(args.chain)
    except (OSError, DecodeError, ValueError, ChainIntegrityError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    rows = [
        {
            "height": b.height,
            "digest": b.digest.hex(),
            "proposer": b.proposer.hex(),
            "abstracts": len(b.abstracts),
            "statements": len(b.statements),
            "statement_kinds": ",".join(type(s).__name__ for s in b.statements),
        }
        for b in chain.blocks
    ]
    _emit(rows, args.format)
    return EXIT_OK


def cmd_dump_agent(args) -> int:
    try:
        sc = Scenario.load(args.scenario)
    except (OSError, ScenarioInvalid) as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.seed is not None:
        sc = replace(sc, seed=args.seed)
    if not 0 <= args.node < sc.nodes:
        print(f"node index {args.node} out of range", file=sys.stderr)
        return EXIT_INPUT
    sim = Simulation(sc)
    sim.run()
    snap = sim.agents[args.node].snapshot()
    if args.format == "csv":
        _emit(snap["owned"], "csv")
    else:
        print(json.dumps(snap, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_gen_scenario(args) -> int:
    try:
        sc = template(args.template, args.nodes, args.rounds, args.clusters, args.seed or 0)
    except ScenarioInvalid as exc:
        print(f"template error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    text = sc.to_yaml()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _emit(rows: list[dict], fmt: str) -> None:
    if fmt == "csv":
        if rows:
            w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    else:
        for row in rows:
            print(json.dumps(row, sort_keys=True))


# --------------------------------------------------------------------------- #


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vapor", description="Value-centric ledger simulator and proof verifier.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and write transcript, metrics and invariant report")
    r.add_argument("--scenario", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    r.add_argument("--repeat", type=int, default=1, help="run this many consecutive seeds")
    r.add_argument("--parallel", type=int, default=1, help="worker processes for independent seeds")
    r.add_argument("--format", choices=("json", "csv"), default="json", help="summary format on stdout")
    r.add_argument("--export-proofs", action="store_true", help="write final-height proofs of honest holdings")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="check a proof file against a chain file")
    v.add_argument("proof")
    v.add_argument("chain")
    v.add_argument("value")
    v.add_argument("height", type=int)
    v.set_defaults(func=cmd_verify)

    d = sub.add_parser("dump-chain", help="print main-chain blocks")
    d.add_argument("chain")
    d.add_argument("--format", choices=("json", "csv"), default="json")
    d.set_defaults(func=cmd_dump_chain)

    a = sub.add_parser("dump-agent", help="replay a scenario and print one agent's state")
    a.add_argument("--scenario", required=True)
    a.add_argument("--node", type=int, required=True)
    a.add_argument("--seed", type=int, default=None)
    a.add_argument("--format", choices=("json", "csv"), default="json")
    a.set_defaults(func=cmd_dump_agent)

    g = sub.add_parser("gen-scenario", help="write a scenario file from a template")
    g.add_argument("template")
    g.add_argument("--out")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--nodes", type=int)
    g.add_argument("--rounds", type=int)
    g.add_argument("--clusters", type=int)
    g.set_defaults(func=cmd_gen_scenario)
    return p


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("VAPOR_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
