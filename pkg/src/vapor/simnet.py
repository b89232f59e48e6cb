"""Deterministic round-based network simulator.

A run is a pure function of its :class:`Scenario`. Each round:

1. deliver messages whose delay has elapsed (partitions postpone them);
2. agents plan transfers from the traffic pattern and scripted actions;
3. agents close pending blocks and submit abstracts and statements;
4. the engine proposes a main-chain block if enough nodes are reachable;
5. agents react to the new block and queue outgoing envelopes;
6. invariant probes run.

Randomness comes from streams keyed by (seed, purpose, node, round), so
adding a probe or a node never shifts the draws of another stream.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import random
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from statistics import mean

import yaml

from .codec import KeyPair, digest
from .ledger import ConfirmedBlockStore, replay
from .mainchain import ENGINE_BOUND, GenesisConfig, SimulatedEngine
from .model import BetLock, LockFor, NodeId, Pay, ValueId
from .node import (
    ADVERSARIES,
    DROP_SPENT,
    KEEP_SPENT,
    DoubleSpendAgent,
    FastPayment,
    Held,
    InsufficientFunds,
    NodeAgent,
    TransferEnvelope,
)

log = logging.getLogger(__name__)

TRANSCRIPT_FORMAT = "vapor-transcript/1"
METRICS_COLUMNS = ("node", "blocks_acquired", "b", "bytes_sent", "bytes_stored")
PATTERNS = ("none", "uniform", "clustered", "scripted")
STRATEGIES = ("least_delta", "naive", "full_replication")


class ScenarioInvalid(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None) -> None:
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(where + message)
        self.line, self.column = line, column


@dataclass
class DelayModel:
    model: str = "bounded"  # bounded | adversarial
    tau: int = 1
    max_delay: int = 0

    def bound(self) -> int:
        return self.tau if self.model == "bounded" else max(self.tau, self.max_delay)


@dataclass
class Adversary:
    node: int
    kind: str
    mode: str = "same_block"


@dataclass
class Partition:
    nodes: list[int]
    start: int
    end: int

    def active(self, rnd: int) -> bool:
        return self.start <= rnd <= self.end


@dataclass
class Action:
    round: int
    kind: str  # transfer | lock | fast_pay | unlock | bet | double_spend
    sender: int = 0
    receiver: int = 1
    amount: int | None = None
    offset: int = 4
    confirm: bool = True


@dataclass
class Scenario:
    seed: int = 0
    nodes: int = 4
    rounds: int = 10
    pattern: str = "uniform"
    clusters: int = 1
    cross_rate: float = 0.0
    tx_rate: float = 0.3
    values_per_node: int = 2
    value_amount: int = 10
    split_rate: float = 0.0
    fee_rate: float = 0.0
    delay: DelayModel = field(default_factory=DelayModel)
    adversaries: list[Adversary] = field(default_factory=list)
    partitions: list[Partition] = field(default_factory=list)
    actions: list[Action] = field(default_factory=list)
    objection_window: int = 8
    retain: str = KEEP_SPENT
    strategy: str = "least_delta"
    dedup: bool = True
    verifier: str = "full"  # full | stub (negative control: accept everything)
    drain: int | None = None
    probe_every: int = 1
    oracle: bool = True

    def validate(self) -> "Scenario":
        problems = []
        if self.nodes < 1:
            problems.append("nodes must be positive")
        if self.rounds < 0:
            problems.append("rounds must be non-negative")
        if self.pattern not in PATTERNS:
            problems.append(f"pattern must be one of {PATTERNS}")
        if self.strategy not in STRATEGIES:
            problems.append(f"strategy must be one of {STRATEGIES}")
        if self.retain not in (KEEP_SPENT, DROP_SPENT):
            problems.append(f"retain must be {KEEP_SPENT} or {DROP_SPENT}")
        if self.delay.model not in ("bounded", "adversarial"):
            problems.append("delay.model must be bounded or adversarial")
        if self.delay.tau < 1:
            problems.append("delay.tau must be at least 1")
        if not 1 <= self.clusters <= max(1, self.nodes):
            problems.append("clusters must be between 1 and nodes")
        if self.verifier not in ("full", "stub"):
            problems.append("verifier must be full or stub")
        for adv in self.adversaries:
            if adv.kind not in ADVERSARIES:
                problems.append(f"unknown adversary kind {adv.kind!r}")
            if not 0 <= adv.node < self.nodes:
                problems.append(f"adversary node {adv.node} out of range")
        for p in self.partitions:
            if any(not 0 <= n < self.nodes for n in p.nodes) or p.start > p.end:
                problems.append(f"bad partition {p}")
        for a in self.actions:
            if not (0 <= a.sender < self.nodes and 0 <= a.receiver < self.nodes):
                problems.append(f"action node out of range: {a}")
        if problems:
            raise ScenarioInvalid("; ".join(problems))
        return self

    @property
    def drain_rounds(self) -> int:
        if self.drain is not None:
            return self.drain
        return self.delay.bound() + 4

    # -- YAML ----------------------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump({"format": "vapor-scenario/1", **self.to_dict()}, sort_keys=False)

    @classmethod
    def from_yaml(cls, text: str) -> "Scenario":
        try:
            node = yaml.compose(text, Loader=yaml.SafeLoader)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise ScenarioInvalid(str(exc), *(_mark(mark) if mark else (None, None))) from None
        if node is None or not isinstance(node, yaml.MappingNode):
            raise ScenarioInvalid("scenario must be a mapping", 1, 1)
        return _build(cls, node, top=True).validate()

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        return cls.from_yaml(Path(path).read_text())


def _mark(mark) -> tuple[int, int]:
    return mark.line + 1, mark.column + 1


_NESTED = {"delay": DelayModel, "adversaries": [Adversary], "partitions": [Partition], "actions": [Action]}


def _build(cls, node: yaml.MappingNode, top: bool = False):
    names = {f.name for f in fields(cls)}
    kwargs = {}
    for key_node, value_node in node.value:
        key = key_node.value
        if top and key == "format":
            if value_node.value != "vapor-scenario/1":
                raise ScenarioInvalid(f"unsupported format {value_node.value!r}", *_mark(value_node.start_mark))
            continue
        if key not in names:
            raise ScenarioInvalid(f"unknown field {key!r} in {cls.__name__}", *_mark(key_node.start_mark))
        nested = _NESTED.get(key) if cls is Scenario else None
        if isinstance(nested, list):
            if not isinstance(value_node, yaml.SequenceNode):
                raise ScenarioInvalid(f"{key} must be a list", *_mark(value_node.start_mark))
            items = []
            for item in value_node.value:
                if not isinstance(item, yaml.MappingNode):
                    raise ScenarioInvalid(f"{key} entries must be mappings", *_mark(item.start_mark))
                items.append(_build(nested[0], item))
            kwargs[key] = items
        elif nested is not None:
            if not isinstance(value_node, yaml.MappingNode):
                raise ScenarioInvalid(f"{key} must be a mapping", *_mark(value_node.start_mark))
            kwargs[key] = _build(nested, value_node)
        else:
            kwargs[key] = yaml.safe_load(yaml.serialize(value_node))
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ScenarioInvalid(str(exc), *_mark(node.start_mark)) from None


# --------------------------------------------------------------------------- #
# Randomness
# --------------------------------------------------------------------------- #


def stream(seed: int, purpose: str, node: int = 0, rnd: int = 0, extra: int = 0) -> random.Random:
    key = digest(f"{seed}/{purpose}/{node}/{rnd}/{extra}".encode())
    return random.Random(int.from_bytes(key[:8], "big"))


# --------------------------------------------------------------------------- #
# Results
# --------------------------------------------------------------------------- #


@dataclass
class ProbeResult:
    name: str
    checked: int = 0
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def fail(self, message: str) -> None:
        self.violations.append(message)


@dataclass
class Metrics:
    height: int
    nonempty_blocks: int
    per_node: dict[str, dict]
    mean_b: float
    cluster_block_rate: float

    @property
    def cost(self) -> float:
        # C is reported as the per-node eventually-acquired block rate.
        return self.mean_b

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        for node, row in self.per_node.items():
            w.writerow([node, row["blocks_acquired"], f"{row['b']:.6f}", row["bytes_sent"], row["bytes_stored"]])
        return buf.getvalue()


@dataclass
class RunResult:
    scenario: Scenario
    transcript: list[dict]
    metrics: Metrics
    probes: dict[str, ProbeResult]
    withheld: set[tuple[str, int]]
    unproven: set[tuple[str, int]]
    bets: list[dict]
    agents: list[NodeAgent]
    chain: object

    @property
    def ok(self) -> bool:
        return all(p.ok for p in self.probes.values())

    def global_store(self) -> ConfirmedBlockStore:
        return global_store(self.agents, self.chain)

    def transcript_jsonl(self) -> str:
        return "".join(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n" for rec in self.transcript)

    def report(self) -> dict:
        return {
            "format": "vapor-invariants/1",
            "ok": self.ok,
            "probes": {
                name: {"ok": p.ok, "checked": p.checked, "violations": p.violations}
                for name, p in sorted(self.probes.items())
            },
        }

    def write(self, out_dir: str | Path) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "transcript.jsonl", out / "metrics.csv", out / "invariants.json"]
        paths[0].write_text(self.transcript_jsonl())
        paths[1].write_text(self.metrics.to_csv())
        paths[2].write_text(json.dumps(self.report(), indent=2, sort_keys=True) + "\n")
        return paths


def global_store(agents: list[NodeAgent], chain) -> ConfirmedBlockStore:
    """Every confirmed block, taken from its producer: the full CB the oracle replays."""
    store = ConfirmedBlockStore()
    for agent in agents:
        store.add_key(agent.keys.public_key)
    for agent in agents:
        for h in agent.own_heights:
            store.store_block(agent.store.get(h, agent.node_id), chain)
    return store


def measure_b(transcript: list[dict]) -> tuple[dict[str, float], float]:
    """Per-node and mean b from the final store records of a transcript."""
    height = max((r["height"] for r in transcript if r["event"] == "block"), default=1)
    rounds = max(1, height - 1)
    per = {r["node"]: r["blocks_acquired"] / rounds for r in transcript if r["event"] == "final-store"}
    return per, (mean(per.values()) if per else 0.0)


# --------------------------------------------------------------------------- #
# Simulation
# --------------------------------------------------------------------------- #


@dataclass(order=True)
class _Queued:
    deliver_at: int
    seq: int
    message: object = field(compare=False)


class Simulation:
    def __init__(self, scenario: Scenario) -> None:
        self.sc = scenario.validate()
        n = scenario.nodes
        self.keys = [KeyPair.derive(f"sim/{scenario.seed}/node/{i}") for i in range(n)]
        self.ids: list[NodeId] = [k.node_id for k in self.keys]
        self.index = {nid: i for i, nid in enumerate(self.ids)}
        adversaries = {a.node: a for a in scenario.adversaries}
        strategy = "naive" if scenario.strategy == "full_replication" else scenario.strategy
        self.agents: list[NodeAgent] = []
        for i, kp in enumerate(self.keys):
            adv = adversaries.get(i)
            if adv is None:
                agent = NodeAgent(kp, strategy, scenario.dedup, scenario.retain)
            elif ADVERSARIES[adv.kind] is DoubleSpendAgent:
                mode = "equivocate" if adv.kind == "equivocator" else adv.mode
                agent = DoubleSpendAgent(kp, strategy, scenario.dedup, scenario.retain, mode=mode, victims=self.ids)
            else:
                agent = ADVERSARIES[adv.kind](kp, strategy, scenario.dedup, scenario.retain)
            if scenario.verifier == "stub" and agent.honest:
                agent.check_envelope = lambda *args: ""
            agent.holdings_of = self._holdings
            for other in self.keys:
                agent.store.add_key(other.public_key)
            self.agents.append(agent)

        values = []
        for i in range(n):
            for k in range(scenario.values_per_node):
                values.append((ValueId.named(f"sim/{scenario.seed}/v/{i}/{k}"), scenario.value_amount, self.ids[i]))
        self.genesis = GenesisConfig(
            [k.public_key for k in self.keys], values, objection_window=scenario.objection_window, tau=scenario.delay.tau
        )
        self.engine = SimulatedEngine(self.genesis)
        self.chain = self.engine.chain
        for v, amount, owner in values:
            self.agents[self.index[owner]].owned[v] = Held(1, amount, frozenset())

        self.round = 0
        self.transcript: list[dict] = []
        self.queue: list[_Queued] = []
        self._seq = 0
        self.unsent: dict[int, list] = {i: [] for i in range(n)}
        self.trace_counter = 0
        self.initiated: dict[int, tuple[int, int]] = {}  # trace -> (round, node)
        self.confirmed_at: dict[int, int] = {}
        self.transfers: list[dict] = []  # confirmed transfers between distinct nodes
        self.accepts: list[tuple[ValueId, int, int]] = []  # (value, height, agent index)
        self.withheld: set[tuple[str, int]] = set()
        self.bets: list[dict] = []
        self.double_held: set[ValueId] = set()
        self.probes = {
            name: ProbeResult(name)
            for name in ("authenticity", "ownership", "liquidity", "rvo_holding", "consistency", "bet_resolution")
        }

    # -- helpers -----------------------------------------------------------

    def _holdings(self, node: NodeId) -> frozenset:
        return self.agents[self.index[node]].advertise_holdings()

    def _partitioned(self, i: int, rnd: int) -> Partition | None:
        for p in self.sc.partitions:
            if i in p.nodes and p.active(rnd):
                return p
        return None

    def _reachable(self, rnd: int) -> list[NodeId]:
        return [nid for i, nid in enumerate(self.ids) if self._partitioned(i, rnd) is None]

    def short(self, node: NodeId) -> int:
        return self.index[node]

    def record(self, event: str, **data) -> None:
        self.transcript.append({"round": self.round, "event": event, **data})

    def _send(self, message, sender: int, receiver: int) -> None:
        rng = stream(self.sc.seed, "delay", sender, self.round, self._seq)
        d = self.sc.delay
        if d.model == "bounded":
            delay = rng.randint(1, d.tau)
        else:
            delay = rng.randint(1, max(1, d.max_delay))
        self._seq += 1
        self.queue.append(_Queued(self.round + delay, self._seq, message))

    # -- phases ------------------------------------------------------------

    def deliver(self) -> None:
        due = sorted(q for q in self.queue if q.deliver_at <= self.round)
        self.queue = [q for q in self.queue if q.deliver_at > self.round]
        for q in due:
            msg = q.message
            s, r = self.short(msg.sender if isinstance(msg, TransferEnvelope) else msg.payer), self.short(
                msg.receiver if isinstance(msg, TransferEnvelope) else msg.beneficiary
            )
            blocked = self._partitioned(s, self.round) or self._partitioned(r, self.round)
            if blocked is not None:
                self.queue.append(_Queued(blocked.end + 1, q.seq, msg))
                continue
            agent = self.agents[r]
            if isinstance(msg, FastPayment):
                ok = agent.on_fast_payment(msg, self.chain)
                self.record("fast-payment", value=str(msg.value), sender=s, receiver=r, accepted=ok)
                continue
            ok, reason = agent.on_envelope(msg, self.chain)
            self.record(
                "envelope", kind=msg.kind, value=str(msg.value), height=msg.height, sender=s, receiver=r,
                accepted=ok, reason=reason, bytes=msg.size, trace=msg.trace_id,
            )
            if ok and msg.kind in ("transfer", "restore") and reason != "duplicate":
                self.accepts.append((msg.value, msg.height, r))
            if not ok and reason == "reconstruction gap" and not msg.full:
                retry = self.agents[s].resend_full(msg, self.chain)
                if retry is not None:
                    self.agents[s].emit(retry)
                    self._send(retry, s, r)

    def plan(self) -> None:
        sc = self.sc
        if self.round <= sc.rounds and sc.pattern in ("uniform", "clustered"):
            for i, agent in enumerate(self.agents):
                rng = stream(sc.seed, "traffic", i, self.round)
                if rng.random() >= sc.tx_rate or not agent.spendable():
                    continue
                j = self._pick_receiver(i, rng)
                amount = None
                if sc.split_rate and rng.random() < sc.split_rate:
                    amount = rng.randint(1, max(1, agent.balance() - 1))
                fee = sc.fee_rate and rng.random() < sc.fee_rate
                self._transfer(i, j, amount, fee=bool(fee))
        for a in sc.actions:
            if a.round == self.round:
                self._act(a)

    def _pick_receiver(self, i: int, rng: random.Random) -> int:
        n, sc = self.sc.nodes, self.sc
        if sc.pattern == "clustered" and not (sc.cross_rate and rng.random() < sc.cross_rate):
            members = [j for j in range(n) if j % sc.clusters == i % sc.clusters and j != i]
        else:
            members = [j for j in range(n) if j != i]
        return rng.choice(members) if members else i

    def _transfer(self, i: int, j: int, amount: int | None, fee: bool = False) -> None:
        agent = self.agents[i]
        self.trace_counter += 1
        trace = self.trace_counter
        try:
            if fee:
                txs = [agent.pay_fee(agent.spendable()[0])]
                agent.trace[(txs[0].value, txs[0].sn)] = trace
            else:
                txs = agent.initiate_transfer(self.ids[j], amount, self.chain, trace)
        except InsufficientFunds as exc:
            self.record("transfer-skipped", sender=i, receiver=j, reason=str(exc))
            return
        self.initiated[trace] = (self.round, i)
        self.record(
            "transfer-init", trace=trace, sender=i, receiver=("miner" if fee else j), amount=amount,
            txs=[[str(t.value), type(t.receiver).__name__] for t in txs],
        )

    def _act(self, a: Action) -> None:
        sender, receiver = self.agents[a.sender], self.agents[a.receiver]
        if a.kind in ("transfer", "double_spend"):
            self._transfer(a.sender, a.receiver, a.amount)
        elif a.kind == "lock":
            values = sender.spendable()
            if values:
                sender.lock_for(values[0], receiver.node_id)
                self.record("lock", value=str(values[0]), sender=a.sender, receiver=a.receiver)
        elif a.kind == "fast_pay":
            for v, (beneficiary, _) in sorted(sender.deposits_out.items()):
                if beneficiary == receiver.node_id:
                    msg = sender.fast_pay(v)
                    self.record("fast-pay", value=str(v), sender=a.sender, receiver=a.receiver)
                    self._send(msg, a.sender, a.receiver)
                    break
        elif a.kind == "unlock":
            for v in sorted(sender.deposits_out):
                sender.unlock(v)
                self.record("unlock", value=str(v), sender=a.sender)
                break
        elif a.kind == "bet":
            va, vb = sender.spendable(), receiver.spendable()
            # Stakes must match; pick the first pair of equal amounts.
            pair = next(
                ((x, y) for x in va for y in vb if sender.owned[x].amount == receiver.owned[y].amount), None
            )
            if pair is None:
                self.record("bet-skipped", sender=a.sender, receiver=a.receiver)
                return
            x, y = pair
            target = self.chain.height + a.offset
            sender.confirm_bets = receiver.confirm_bets = a.confirm
            sender.place_bet(x, receiver.node_id, target, 0, y)
            receiver.place_bet(y, sender.node_id, target, 1, x)
            self.bets.append(
                {"a": a.sender, "b": a.receiver, "value_a": x, "value_b": y, "target": target, "confirm": a.confirm}
            )
            self.record("bet", value_a=str(x), value_b=str(y), a=a.sender, b=a.receiver, target=target)
        else:
            raise ScenarioInvalid(f"unknown action kind {a.kind!r}")

    def submit(self) -> None:
        reachable = set(self._reachable(self.round))
        for i, agent in enumerate(self.agents):
            self.unsent[i] += agent.close_block()
            self.unsent[i] += agent.take_statements()
            if self.ids[i] in reachable:
                for msg in self.unsent[i]:
                    self.engine.submit(msg)
                self.unsent[i] = []

    def advance(self) -> None:
        block = self.engine.advance_round(self._reachable(self.round))
        if block is None:
            self.record("stall", height=self.chain.height)
            return
        self.record(
            "block", height=block.height, digest=block.digest.hex(), proposer=self.short(block.proposer),
            abstracts=[self.short(a.node) for a in block.abstracts], statements=len(block.statements),
        )
        for agent in self.agents:
            before = {k: v for k, v in agent.trace.items()}
            envelopes = agent.on_block_confirmed(block, self.chain)
            for key, trace in before.items():
                if key not in agent.trace and trace:
                    self.confirmed_at.setdefault(trace, self.round)
            i = self.index[agent.node_id]
            for env in envelopes:
                self._send(env, i, self.short(env.receiver))
        self._note_transfers(block)
        if self.sc.strategy == "full_replication":
            self._replicate(block)

    def _note_transfers(self, block) -> None:
        for ab in block.abstracts:
            owner = self.agents[self.index[ab.node]]
            tb = owner.store.get(block.height, ab.node)
            if tb is None:
                continue
            for tx in tb.transactions:
                rc = tx.receiver
                target = rc.node if isinstance(rc, Pay) else None
                if target is not None and target != ab.node:
                    self.transfers.append(
                        {"value": tx.value, "height": block.height, "sender": self.index[ab.node],
                         "receiver": self.index[target], "round": self.round}
                    )

    def _replicate(self, block) -> None:
        for ab in block.abstracts:
            tb = self.agents[self.index[ab.node]].store.get(block.height, ab.node)
            if tb is None:
                continue
            for agent in self.agents:
                agent.add_block(tb, self.chain)

    # -- probes ------------------------------------------------------------

    def probe(self) -> None:
        honest = [i for i, a in enumerate(self.agents) if a.honest]
        seen: dict[ValueId, int] = {}
        auth = self.probes["authenticity"]
        for i in honest:
            for v in self.agents[i].owned:
                auth.checked += 1
                if v in seen and v not in self.double_held:
                    self.double_held.add(v)
                    auth.fail(f"round {self.round}: value {v} held by honest nodes {seen[v]} and {i}")
                seen[v] = i
        if self.sc.probe_every and self.round % self.sc.probe_every == 0:
            self._probe_holding(honest)

    def _probe_holding(self, honest: list[int]) -> None:
        rvo = self.probes["rvo_holding"]
        for i in honest:
            agent = self.agents[i]
            if self.sc.verifier == "stub":
                continue
            for v, ok in agent.provable(self.chain).items():
                rvo.checked += 1
                if not ok:
                    rvo.fail(f"round {self.round}: node {i} cannot prove {v}")

    def final_probes(self) -> set[tuple[str, int]]:
        honest = {i for i, a in enumerate(self.agents) if a.honest}
        sync = self.sc.delay.model == "bounded" and not self.sc.partitions

        live = self.probes["liquidity"]
        for trace, (rnd, i) in sorted(self.initiated.items()):
            if i not in honest:
                continue
            live.checked += 1
            done = self.confirmed_at.get(trace)
            if done is None:
                if sync:
                    live.fail(f"trace {trace} from node {i} never confirmed")
            elif sync and done > rnd + ENGINE_BOUND:
                live.fail(f"trace {trace} from node {i}: initiated round {rnd}, confirmed round {done}")

        accepted = {(v, h, r) for v, h, r in self.accepts}
        own = self.probes["ownership"]
        unproven = set()
        for t in self.transfers:
            if t["receiver"] not in honest:
                continue
            own.checked += 1
            if (t["value"], t["height"], t["receiver"]) not in accepted:
                key = (str(t["value"]), t["height"])
                unproven.add(key)
                if t["sender"] in honest:
                    own.fail(f"node {t['receiver']} never obtained proof for {t['value']} at height {t['height']}")

        self._probe_accepts(honest)
        self._probe_oracle(honest)
        self._probe_bets()
        return unproven

    def _probe_accepts(self, honest: set[int]) -> None:
        # Each honest acceptance claims an ownership interval; no two may overlap.
        auth = self.probes["authenticity"]
        spans: dict[ValueId, list[tuple[int, int, int]]] = {}
        for v, h, r in self.accepts:
            if r not in honest:
                continue
            agent = self.agents[r]
            end = next((x for x in agent.own_heights if x > h and _spent_in(agent, v, x)), self.chain.height + 1)
            spans.setdefault(v, []).append((h, end - 1, r))
        for v, items in spans.items():
            items.sort()
            for (h1, e1, r1), (h2, e2, r2) in zip(items, items[1:]):
                auth.checked += 1
                if h2 <= e1 and r1 != r2:
                    auth.fail(f"value {v}: nodes {r1} (from {h1}) and {r2} (from {h2}) both accepted ownership")

    def _probe_oracle(self, honest: set[int]) -> None:
        if not self.sc.oracle:
            return
        cons = self.probes["consistency"]
        store = global_store(self.agents, self.chain)
        claims: dict[int, list[tuple[ValueId, int]]] = {}
        for v, h, r in self.accepts:
            if r in honest:
                claims.setdefault(h, []).append((v, r))
        for table in replay(store, self.chain, self.chain.height):
            for v, r in claims.get(table.height, []):
                cons.checked += 1
                owner = table.owner(v)
                if owner != self.ids[r]:
                    cons.fail(f"node {r} accepted {v} at height {table.height}; global ledger says {_fmt(owner, self)}")

    def _probe_bets(self) -> None:
        pr = self.probes["bet_resolution"]
        for bet in self.bets:
            if bet["target"] > self.chain.height:
                continue
            pr.checked += 1
            a, b = self.agents[bet["a"]], self.agents[bet["b"]]
            x, y = bet["value_a"], bet["value_b"]
            confirmed = bool(self.chain.bet_confirmations(x, y, bet["target"]))
            if confirmed:
                lsb = self.chain.get_block(bet["target"]).digest[-1] & 1
                winner = a if lsb == 0 else b
                expected = {winner: {x, y}}
            else:
                expected = {a: {x}, b: {y}}
            bet["confirmed_on_chain"] = confirmed
            bet["winner"] = self.index[next(iter(expected)).node_id] if confirmed else None
            for agent, vals in expected.items():
                if not vals <= set(agent.owned) and not _moved_on(agent, vals, bet["target"]):
                    pr.fail(f"bet at {bet['target']}: node {self.index[agent.node_id]} lacks {sorted(map(str, vals))}")

    # -- driver ------------------------------------------------------------

    def run(self) -> RunResult:
        self.record("start", format=TRANSCRIPT_FORMAT, seed=self.sc.seed, nodes=self.sc.nodes)
        total = self.sc.rounds + self.sc.drain_rounds
        for rnd in range(1, total + 1):
            self.round = rnd
            self.deliver()
            self.plan()
            self.submit()
            self.advance()
            self.probe()
        honest = {i for i, a in enumerate(self.agents) if a.honest}
        for agent in self.agents:
            for value, height, receiver in getattr(agent, "withheld", []):
                if self.index[receiver] in honest:
                    self.withheld.add((str(value), height))
        unproven = self.final_probes()
        metrics = self.metrics()
        for node, row in metrics.per_node.items():
            self.record("final-store", node=node, blocks_acquired=row["blocks_acquired"])
        for name, p in sorted(self.probes.items()):
            self.record("probe", name=name, checked=p.checked, violations=len(p.violations))
        return RunResult(
            self.sc, self.transcript, metrics, self.probes, self.withheld, unproven, self.bets, self.agents, self.chain
        )

    def metrics(self) -> Metrics:
        rounds = max(1, self.chain.height - 1)
        per = {}
        for i, agent in enumerate(self.agents):
            acquired = len(agent.metrics.blocks_acquired)
            per[str(i)] = {
                "blocks_acquired": acquired,
                "b": acquired / rounds,
                "bytes_sent": agent.metrics.bytes_sent,
                "bytes_stored": agent.storage_bytes(),
            }
        nonempty = sum(len(b.abstracts) for b in self.chain.blocks)
        k = self.sc.clusters if self.sc.pattern == "clustered" else 1
        return Metrics(
            self.chain.height,
            nonempty,
            per,
            mean(r["b"] for r in per.values()) if per else 0.0,
            nonempty / k / rounds,
        )


def _spent_in(agent: NodeAgent, value: ValueId, height: int) -> bool:
    tb = agent.store.get(height, agent.node_id)
    return tb is not None and any(tx.value == value for tx in tb.transactions)


def _moved_on(agent: NodeAgent, values: set[ValueId], height: int) -> bool:
    return all(v in agent.owned or any(_spent_in(agent, v, h) for h in agent.own_heights if h > height) for v in values)


def _fmt(owner, sim: Simulation) -> str:
    if isinstance(owner, bytes):
        return f"node {sim.index.get(owner, owner.hex()[:8])}"
    return str(getattr(owner, "value", owner))


def run(scenario: Scenario) -> RunResult:
    return Simulation(scenario).run()


def inject_partition(scenario: Scenario, nodes: list[int], from_round: int, to_round: int) -> Scenario:
    if from_round > to_round:
        raise ScenarioInvalid("partition must end after it starts")
    scenario.partitions.append(Partition(list(nodes), from_round, to_round))
    return scenario
