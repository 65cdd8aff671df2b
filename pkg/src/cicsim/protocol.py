"""Master-contract protocol over a discrete block clock.

One deployed intensive transaction cycles through per-round phases:

    Committing (w_src blocks) -> Buffering (w_buf) -> Revealing (w_sr)
    -> consensus step -> next round, or Deciding -> Settled.

The master contract enforces the on-chain rules: queue order per contract,
escrow at deployment, nonce assignment at inclusion (never earlier),
window discipline, commit/reveal binding se = sha256(digest || sort_res),
sortition validity, per-round consensus over revealed roots, and the
settlement split driven by seed-count fractions against th1/th2. Forfeited
deposits are burned; every movement of value is an event in an append-only
log, and a whole run replays bit-exactly from its scenario.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Optional

from . import adversary, miracle
from .hashing import be8, sha256, to_word
from .merkle_state import CicState, MerkleRoot, prove_inclusion, verify_inclusion
from .randomness import NodeKeys, SortResult, SortitionOracle, check_sort, keygen, random_gen
from .rice import Digest, rice_execute
from .toy_vm import ComputeModel, Transaction, compute_data, compute_length


class ProtocolError(Exception):
    pass


class InsufficientEscrow(ProtocolError):
    pass


class QueueOrderViolation(ProtocolError):
    pass


class OutsideWindow(ProtocolError):
    pass


class NotInSP(ProtocolError):
    pass


class DuplicateCommit(ProtocolError):
    pass


class CommitMismatch(ProtocolError):
    pass


class InvalidSortition(ProtocolError):
    pass


class NoCommitment(ProtocolError):
    pass


class MissingStateWitness(ProtocolError):
    pass


DEPLOYED = "deployed"
COMMITTING = "committing"
BUFFERING = "buffering"
REVEALING = "revealing"
DECIDING = "deciding"
SETTLED = "settled"


@dataclass(frozen=True)
class SettlementPolicy:
    """Reward/forfeiture rules: within the winning root, a seed group whose
    count fraction strictly exceeds th1 is rewarded, one strictly below th2
    forfeits, anything between is left alone."""

    th1: float = 0.60
    th2: float = 0.25
    reward: int = 10
    deposit: int = 100
    d_min: int = 5

    def __post_init__(self) -> None:
        if not 0.0 < self.th2 < self.th1 <= 1.0:
            raise ValueError("thresholds must satisfy 0 < th2 < th1 <= 1")
        if self.th1 <= 0.5:
            raise ValueError("reward threshold must exceed one half")
        if min(self.reward, self.deposit, self.d_min) < 0:
            raise ValueError("amounts are non-negative")


@dataclass(frozen=True)
class WindowConfig:
    """Block-count windows; the commit window scales with the gas limit."""

    gas_per_block: int = 10_000
    w_src_slack: int = 2
    w_buf: int = 2
    w_sr: int = 4

    def w_src(self, gas_limit: int) -> int:
        return math.ceil(gas_limit / self.gas_per_block) + self.w_src_slack


@dataclass
class NodeRecord:
    node_id: int
    keys: NodeKeys
    strategy: adversary.Strategy
    deposit: int
    balance: int
    active: bool = True


@dataclass
class RoundRecord:
    round_index: int
    nonce: bytes
    commit_open: int
    commit_close: int
    reveal_open: int
    reveal_close: int
    commitments: dict = field(default_factory=dict)   # node_id -> se bytes
    commit_blocks: dict = field(default_factory=dict)
    reveals: dict = field(default_factory=dict)       # node_id -> (Digest, SortResult)
    tally: Optional[miracle.RoundTally] = None


@dataclass
class ItContext:
    tx: Transaction
    creator: str
    escrow: int
    round1_entropy: bytes
    deploy_block: int
    phase: str = DEPLOYED
    rounds: list = field(default_factory=list)
    table: miracle.LikelihoodTable = field(default_factory=miracle.LikelihoodTable)
    winning_root: Optional[bytes] = None
    decide_deadline: Optional[int] = None
    outcome: Optional[str] = None

    @property
    def round(self) -> RoundRecord:
        return self.rounds[-1]


class MasterContract:
    """On-chain rulebook and ledger. All state changes append events."""

    def __init__(self, params: miracle.ConsensusParams, policy: SettlementPolicy,
                 windows: WindowConfig, oracle: SortitionOracle,
                 experiment_seed: bytes, max_rounds: int = 100,
                 treasury: int = 0):
        self.params = params
        self.policy = policy
        self.windows = windows
        self.oracle = oracle
        self.experiment_seed = experiment_seed
        self.max_rounds = max_rounds
        self.nodes: dict = {}
        self.creators: dict = {}
        self.states: dict = {}          # cid -> CicState
        self.queues: dict = {}          # cid -> deque[Transaction]
        self.active: dict = {}          # cid -> ItContext
        self.treasury = treasury
        self.burned = 0
        self.events: list = []
        self._counter = 0

    # -- plumbing ------------------------------------------------------------

    def _beacon(self) -> bytes:
        value = random_gen(self.experiment_seed, self._counter)
        self._counter += 1
        return value

    def emit(self, block: int, kind: str, **payload) -> None:
        event = {"block": block, "type": kind}
        for key, value in payload.items():
            event[key] = value.hex() if isinstance(value, bytes) else value
        self.events.append(event)

    def total_value(self) -> int:
        total = self.treasury + self.burned
        total += sum(n.balance + n.deposit for n in self.nodes.values())
        total += sum(self.creators.values())
        total += sum(it.escrow for it in self.active.values())
        return total

    def add_node(self, node: NodeRecord) -> None:
        self.oracle.register(node.keys)
        self.nodes[node.node_id] = node

    def add_creator(self, name: str, balance: int) -> None:
        self.creators[name] = balance

    def register_cic(self, state: CicState) -> None:
        self.states[state.cid] = state
        self.queues[state.cid] = deque()

    # -- S1: deployment --------------------------------------------------------

    def enqueue(self, tx: Transaction, creator: str, block: int) -> None:
        self.queues[tx.cid].append((tx, creator))
        self.emit(block, "queued", cid=tx.cid, tid=tx.tid, creator=creator)
        if tx.cid not in self.active:
            self.deploy_it(tx, block)

    def deploy_it(self, tx: Transaction, block: int) -> ItContext:
        queue = self.queues[tx.cid]
        if not queue or queue[0][0].tid != tx.tid:
            raise QueueOrderViolation("only the queue head deploys")
        if tx.cid in self.active:
            raise QueueOrderViolation("an intensive transaction is already active")
        _, creator = queue[0]
        cost = self.policy.d_min + tx.gas_price * tx.gas_limit
        if self.creators.get(creator, 0) < cost:
            raise InsufficientEscrow(f"escrow requires {cost}")
        self.creators[creator] -= cost
        # the nonce is drawn at inclusion so sortition cannot be gamed by
        # enrolling keys after seeing it
        nonce = self._beacon()
        entropy = self._beacon()
        it = ItContext(tx=tx.with_nonce(nonce), creator=creator, escrow=cost,
                       round1_entropy=entropy, deploy_block=block)
        self.active[tx.cid] = it
        self.emit(block, "deployed", cid=tx.cid, tid=tx.tid, nonce=nonce,
                  entropy=entropy, escrow=cost)
        self._open_round(it, block + 1)
        return it

    def _open_round(self, it: ItContext, open_block: int) -> None:
        index = len(it.rounds) + 1
        nonce = it.tx.nonce if index == 1 else sha256(it.tx.nonce, be8(index))
        w_src = self.windows.w_src(it.tx.gas_limit)
        commit_close = open_block + w_src - 1
        reveal_open = commit_close + self.windows.w_buf + 1
        record = RoundRecord(round_index=index, nonce=nonce,
                             commit_open=open_block, commit_close=commit_close,
                             reveal_open=reveal_open,
                             reveal_close=reveal_open + self.windows.w_sr - 1)
        it.rounds.append(record)
        it.phase = COMMITTING
        self.emit(open_block, "round_started", cid=it.tx.cid, round=index,
                  nonce=nonce, commit_open=record.commit_open,
                  commit_close=record.commit_close, reveal_open=record.reveal_open,
                  reveal_close=record.reveal_close)

    def round_nonce(self, cid: bytes, round_index: int) -> bytes:
        it = self.active[cid]
        if round_index == 1:
            return it.tx.nonce
        return sha256(it.tx.nonce, be8(round_index))

    # -- S3: commitment and release -------------------------------------------

    def submit_commit(self, node_id: int, cid: bytes, se: bytes, block: int) -> None:
        it = self.active.get(cid)
        node = self.nodes.get(node_id)
        if node is None or not node.active:
            raise NotInSP(f"node {node_id} is not in the stake pool")
        if it is None or it.phase != COMMITTING:
            raise OutsideWindow("no commit window is open")
        rnd = it.round
        if not rnd.commit_open <= block <= rnd.commit_close:
            raise OutsideWindow(
                f"block {block} outside [{rnd.commit_open}, {rnd.commit_close}]")
        if node_id in rnd.commitments:
            raise DuplicateCommit(f"node {node_id} already committed")
        rnd.commitments[node_id] = se
        rnd.commit_blocks[node_id] = block
        self.emit(block, "commit", cid=cid, round=rnd.round_index,
                  node=node_id, se=se)

    def submit_reveal(self, node_id: int, cid: bytes, digest: Digest,
                      sort: SortResult, block: int) -> None:
        it = self.active.get(cid)
        if it is None or it.phase != REVEALING:
            raise OutsideWindow("no reveal window is open")
        rnd = it.round
        if not rnd.reveal_open <= block <= rnd.reveal_close:
            raise OutsideWindow(
                f"block {block} outside [{rnd.reveal_open}, {rnd.reveal_close}]")
        se = rnd.commitments.get(node_id)
        if se is None:
            raise NoCommitment(f"node {node_id} never committed")
        if sha256(digest.encode(), sort.encode()) != se:
            raise CommitMismatch("reveal does not match the commitment")
        node = self.nodes[node_id]
        if not self.oracle.verify(node.keys.pk, rnd.nonce, self.params.q, sort):
            raise InvalidSortition(f"sortition proof rejected for node {node_id}")
        rnd.reveals[node_id] = (digest, sort)
        self.emit(block, "reveal", cid=cid, round=rnd.round_index, node=node_id,
                  root=digest.root.value, seed=digest.seed, sort=sort.encode())

    # -- S4: one consensus round ------------------------------------------------

    def close_round(self, cid: bytes, block: int) -> miracle.Decision:
        """At the reveal deadline: forfeit silent committers, fold the round's
        reveals into the likelihood table, and step the consensus."""
        it = self.active[cid]
        rnd = it.round
        for node_id in sorted(rnd.commitments):
            if node_id not in rnd.reveals:
                self._forfeit(node_id, block, "unrevealed commitment", cid)
        counts: dict = {}
        for node_id, (digest, _) in rnd.reveals.items():
            counts[digest.root.value] = counts.get(digest.root.value, 0) + 1
        rnd.tally = miracle.RoundTally(round_index=rnd.round_index, counts=counts)
        it.table = miracle.update_likelihoods(it.table, rnd.tally)
        decision = miracle.step(it.table, self.params)
        self.emit(block, "round_closed", cid=cid, round=rnd.round_index,
                  tally={k.hex(): v for k, v in sorted(counts.items())},
                  accepted=decision.accepted,
                  winning_root=decision.root if decision.root else None)
        if decision.accepted:
            it.phase = DECIDING
            it.winning_root = decision.root
            it.decide_deadline = block + self.windows.w_sr
        elif rnd.round_index >= self.max_rounds:
            self._abort(it, block, "no convergence within the round cap")
        else:
            self._open_round(it, block + 1)
        return decision

    # -- S5: state update, rewards, cleanup --------------------------------------

    def submit_witness(self, node_id: int, cid: bytes, modified: dict,
                       proofs: list, block: int) -> bool:
        """Validate a state witness against the winning root; apply the first
        valid one. `modified` maps storage keys to post-execution values."""
        it = self.active.get(cid)
        if it is None or it.phase != DECIDING:
            raise OutsideWindow("no state update is pending")
        if node_id not in it.round.reveals:
            raise NotInSP("witnesses come from revealing set members")
        state = self.states[cid].put_many(modified)
        winning = MerkleRoot(it.winning_root)
        ok = state.root().value == it.winning_root and len(proofs) == len(modified)
        if ok:
            for proof in proofs:
                if not verify_inclusion(winning, state.cid, state.code, proof):
                    ok = False
                    break
        self.emit(block, "witness", cid=cid, node=node_id, valid=ok,
                  keys=len(modified))
        if not ok:
            return False
        self.states[cid] = state
        self.settle(cid, block)
        return True

    def witness_deadline_passed(self, cid: bytes, block: int) -> None:
        it = self.active.get(cid)
        if it is None or it.phase != DECIDING:
            return
        if block >= it.decide_deadline:
            self.emit(block, "missing_state_witness", cid=cid)
            self.settle(cid, block, allow_missing_witness=True)

    def settle(self, cid: bytes, block: int,
               allow_missing_witness: bool = False) -> None:
        """Apply the per-round reward/forfeiture split for every elapsed
        round, charge the executed gas, refund the surplus, pop the queue."""
        it = self.active[cid]
        winning = it.winning_root
        if (not allow_missing_witness and winning is not None
                and self.states[cid].root().value != winning):
            raise MissingStateWitness("no valid state witness was applied")
        policy = self.policy
        for rnd in it.rounds:
            groups: dict = {}
            for node_id, (digest, _) in sorted(rnd.reveals.items()):
                if digest.root.value != winning:
                    self._forfeit(node_id, block, "wrong root", cid,
                                  round_index=rnd.round_index)
                else:
                    groups.setdefault(digest.seed, []).append(node_id)
            total = sum(len(v) for v in groups.values())
            if not total:
                continue
            for seed_value in sorted(groups):
                members = groups[seed_value]
                fraction = len(members) / total
                if fraction > policy.th1:
                    for node_id in members:
                        self.treasury -= policy.reward
                        self.nodes[node_id].balance += policy.reward
                        self.emit(block, "reward", cid=cid, node=node_id,
                                  round=rnd.round_index, amount=policy.reward)
                elif fraction < policy.th2:
                    for node_id in members:
                        self._forfeit(node_id, block, "minority seed", cid,
                                      round_index=rnd.round_index)
        gas_fee = it.tx.gas_price * min(it.tx.gas_limit, self._executed_gas(it))
        refund = it.escrow - policy.d_min - gas_fee
        self.treasury += policy.d_min + gas_fee
        self.creators[it.creator] += refund
        it.escrow = 0
        it.phase = SETTLED
        it.outcome = "accepted"
        self.emit(block, "settled", cid=cid, tid=it.tx.tid, rounds=len(it.rounds),
                  winning_root=winning, gas_fee=gas_fee, refund=refund)
        self._cleanup(cid, block)

    def _executed_gas(self, it: ItContext) -> int:
        # unit gas per instruction; every simulated contract is an instance
        # of the iterated-update benchmark, whose length is affine in the
        # iteration count carried by the first input word
        eta = int.from_bytes(it.tx.data[:32].ljust(32, b"\0"), "big") if it.tx.data else 0
        return compute_length(eta)

    def _abort(self, it: ItContext, block: int, reason: str) -> None:
        cid = it.tx.cid
        self.creators[it.creator] += it.escrow
        it.escrow = 0
        it.phase = SETTLED
        it.outcome = "no_convergence"
        self.emit(block, "no_convergence", cid=cid, tid=it.tx.tid, reason=reason)
        self._cleanup(cid, block)

    def _cleanup(self, cid: bytes, block: int) -> None:
        queue = self.queues[cid]
        queue.popleft()
        del self.active[cid]
        if queue:
            tx, creator = queue[0]
            self.deploy_it(tx, block + 1)

    def _forfeit(self, node_id: int, block: int, reason: str, cid: bytes,
                 round_index: Optional[int] = None) -> None:
        node = self.nodes[node_id]
        if node.deposit == 0:
            return
        amount = node.deposit
        node.deposit = 0
        node.active = False
        self.burned += amount
        self.emit(block, "forfeit", cid=cid, node=node_id, amount=amount,
                  reason=reason, round=round_index)


# --- scenario-driven simulation ------------------------------------------------


@dataclass(frozen=True)
class ItSpec:
    cic_index: int = 0
    eta: int = 8
    gas_price: int = 1
    gas_margin: int = 12
    submit_block: int = 1


@dataclass(frozen=True)
class CicSpec:
    key: int = 0
    init: int = 0


@dataclass(frozen=True)
class Scenario:
    """Complete, JSON-serializable description of one protocol run."""

    seed: str = "00" * 32
    m_total: int = 24
    q: float = 0.5
    f_max: float = 0.4
    beta: float = 1e-6
    max_rounds: int = 100
    strategies: tuple = (("honest", 24),)
    cics: tuple = (CicSpec(),)
    its: tuple = (ItSpec(),)
    policy: SettlementPolicy = SettlementPolicy()
    windows: WindowConfig = WindowConfig()
    commit_jitter: int = 1
    reveal_jitter: int = 1
    node_balance: int = 50
    creator_balance: int = 1_000_000
    treasury: int = 1_000_000

    def to_json(self) -> str:
        doc = asdict(self)
        doc["strategies"] = [list(s) for s in self.strategies]
        doc["cics"] = [asdict(c) for c in self.cics]
        doc["its"] = [asdict(i) for i in self.its]
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        doc = json.loads(text)
        doc["strategies"] = tuple(tuple(s) for s in doc["strategies"])
        doc["cics"] = tuple(CicSpec(**c) for c in doc["cics"])
        doc["its"] = tuple(ItSpec(**i) for i in doc["its"])
        doc["policy"] = SettlementPolicy(**doc["policy"])
        doc["windows"] = WindowConfig(**doc["windows"])
        return cls(**doc)

    def expand_strategies(self) -> list:
        out = []
        for entry in self.strategies:
            kind, count, *rest = entry
            params = rest[0] if rest else {}
            for _ in range(count):
                out.append(adversary.Strategy(kind=kind, **params))
        if len(out) != self.m_total:
            raise ValueError(
                f"strategy counts sum to {len(out)}, pool size is {self.m_total}")
        return out


@dataclass
class RunResult:
    scenario: Scenario
    events: list
    lines: list
    conserved: bool
    settled: int
    total_blocks: int
    mc: MasterContract


def event_lines(events: list) -> list:
    return [json.dumps(e, sort_keys=True, separators=(",", ":")) for e in events]


class Simulation:
    """Deterministic event loop: nodes plan their messages when a round
    opens; inclusion happens at block boundaries in a canonical order."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.seed = bytes.fromhex(scenario.seed)
        params = miracle.ConsensusParams(scenario.m_total, scenario.f_max,
                                         scenario.q, scenario.beta)
        self.oracle = SortitionOracle()
        self.mc = MasterContract(params, scenario.policy, scenario.windows,
                                 self.oracle, sha256(b"beacon", self.seed),
                                 max_rounds=scenario.max_rounds,
                                 treasury=scenario.treasury)
        strategies = scenario.expand_strategies()
        for node_id, strategy in enumerate(strategies):
            self.mc.add_node(NodeRecord(
                node_id=node_id, keys=keygen(self.seed, node_id),
                strategy=strategy, deposit=scenario.policy.deposit,
                balance=scenario.node_balance))
        self.models: dict = {}
        for index, cic in enumerate(scenario.cics):
            model = ComputeModel(key=cic.key)
            cid = sha256(b"cid", self.seed, be8(index))
            state = CicState(cid, model.code_id)
            if cic.init:
                state = state.put(cic.key, cic.init)
            self.mc.register_cic(state)
            self.models[cid] = model
        self.cids = list(self.models)
        for i, _ in enumerate(scenario.its):
            self.mc.add_creator(f"creator{i}", scenario.creator_balance)
        self.inbox: dict = {}
        self._msg_seq = 0
        self._honest_digests: dict = {}
        self._pending_rounds_from = 0

    # -- node-side planning ----------------------------------------------------

    def _prf_value(self, *parts: bytes) -> int:
        return int.from_bytes(sha256(b"sim", self.seed, *parts), "big")

    def _post(self, block: int, kind: str, node_id: int, payload: tuple) -> None:
        order = {"enqueue": 0, "commit": 1, "reveal": 2, "witness": 3}[kind]
        self.inbox.setdefault(block, []).append(
            (order, node_id, self._msg_seq, kind, payload))
        self._msg_seq += 1

    def _honest_digest(self, cid: bytes, round_index: int):
        """Digest and post-state of a faithful execution, cached per round."""
        it = self.mc.active[cid]
        key = (cid, it.tx.tid, round_index)
        if key not in self._honest_digests:
            model = self.models[cid]
            pre = self.mc.states[cid]
            digest = rice_execute(model, pre, it.tx.data, round_index,
                                  it.round1_entropy, gas_limit=it.tx.gas_limit)
            final = model.final_state(pre, model.eta_of(it.tx.data))
            self._honest_digests[key] = (digest, final)
        return self._honest_digests[key]

    def _plan_digest(self, node: NodeRecord, cid: bytes, it: ItContext,
                     round_index: int):
        """What this node will reveal, by strategy; None plans no commit."""
        strategy = node.strategy
        tid = it.tx.tid
        honest_digest, _ = self._honest_digest(cid, round_index)
        tag = be8(node.node_id) + tid + be8(round_index)
        if strategy.kind == adversary.HONEST:
            return honest_digest, True
        if strategy.kind == adversary.SILENT:
            return honest_digest, False
        if strategy.kind == adversary.BYZ_SINGLE:
            return Digest(seed=sha256(b"byz-seed", tid, be8(round_index)),
                          root=MerkleRoot(sha256(b"byz-root", tid))), True
        if strategy.kind == adversary.BYZ_MULTI:
            slot = node.node_id % strategy.fanout
            return Digest(seed=sha256(b"byz-seed", tid, be8(round_index), be8(slot)),
                          root=MerkleRoot(sha256(b"byz-root", tid, be8(slot)))), True
        if strategy.kind == adversary.COLLUDER:
            return Digest(seed=sha256(b"collusion", tid, be8(round_index),
                                      be8(strategy.group)),
                          root=honest_digest.root), True
        # freeloader: honest work in round 1, afterwards reuse the winning
        # root and guess the seed with probability gamma
        if round_index == 1:
            return honest_digest, True
        coin = self._prf_value(b"freeload", tag) / 2.0 ** 256
        if coin < strategy.gamma:
            return honest_digest, True
        return Digest(seed=sha256(b"bad-guess", tag),
                      root=honest_digest.root), True

    def _plan_round(self, cid: bytes, record_block: int) -> None:
        it = self.mc.active[cid]
        rnd = it.round
        nonce = rnd.nonce
        for node_id in sorted(self.mc.nodes):
            node = self.mc.nodes[node_id]
            if not node.active:
                continue
            sort = check_sort(node.keys, nonce, self.scenario.q)
            if not sort.selected:
                continue
            digest, will_reveal = self._plan_digest(node, cid, it, rnd.round_index)
            se = sha256(digest.encode(), sort.encode())
            tag = be8(node_id) + cid + be8(rnd.round_index)
            span = max(1, min(self.scenario.commit_jitter,
                              rnd.commit_close - rnd.commit_open + 1))
            commit_at = rnd.commit_open + self._prf_value(b"cjit", tag) % span
            self._post(commit_at, "commit", node_id, (cid, se))
            if will_reveal:
                span = max(1, min(self.scenario.reveal_jitter,
                                  rnd.reveal_close - rnd.reveal_open + 1))
                reveal_at = rnd.reveal_open + self._prf_value(b"rjit", tag) % span
                self._post(reveal_at, "reveal", node_id, (cid, digest, sort))

    def _plan_witnesses(self, cid: bytes, block: int) -> None:
        it = self.mc.active[cid]
        _, final = self._honest_digest(cid, it.round.round_index)
        pre = self.mc.states[cid]
        modified = {k: final.get(k) for k in final.storage
                    if pre.get(k) != final.get(k)}
        for node_id in sorted(it.round.reveals):
            digest, _ = it.round.reveals[node_id]
            if digest.root.value != it.winning_root:
                continue
            if digest.root.value == final.root().value:
                proofs = [prove_inclusion(final, k) for k in sorted(modified)]
                self._post(block + 1, "witness", node_id, (cid, modified, proofs))
            else:
                # a fabricated root has no preimage; the attempt must fail
                junk = {to_word(7): sha256(b"junk", digest.root.value)}
                self._post(block + 1, "witness", node_id, (cid, junk, []))

    # -- block loop -------------------------------------------------------------

    def _deliver(self, block: int) -> None:
        for _, node_id, _, kind, payload in sorted(self.inbox.pop(block, [])):
            try:
                if kind == "enqueue":
                    tx, creator = payload
                    self.mc.enqueue(tx, creator, block)
                elif kind == "commit":
                    cid, se = payload
                    self.mc.submit_commit(node_id, cid, se, block)
                elif kind == "reveal":
                    cid, digest, sort = payload
                    self.mc.submit_reveal(node_id, cid, digest, sort, block)
                elif kind == "witness":
                    cid, modified, proofs = payload
                    self.mc.submit_witness(node_id, cid, modified, proofs, block)
            except ProtocolError as exc:
                self.mc.emit(block, "rejected", message=kind, node=node_id,
                             reason=type(exc).__name__, detail=str(exc))

    def run(self, max_blocks: int = 100_000) -> RunResult:
        scenario = self.scenario
        for index, spec in enumerate(scenario.its):
            cid = self.cids[spec.cic_index]
            eta = spec.eta
            gas_limit = compute_length(eta) + spec.gas_margin
            tx = Transaction(tid=sha256(b"tid", self.seed, be8(index)), cid=cid,
                             fun_id="compute", data=compute_data(eta),
                             gas_limit=gas_limit, gas_price=spec.gas_price)
            self._post(spec.submit_block, "enqueue", -1, (tx, f"creator{index}"))
        baseline = self.mc.total_value()
        conserved = True
        block = 0
        while block < max_blocks:
            block += 1
            seen = len(self.mc.events)
            self._deliver(block)
            for cid in list(self.mc.active):
                it = self.mc.active[cid]
                # sequential ifs so zero-width windows cascade in one block
                if it.phase == COMMITTING and block >= it.round.commit_close:
                    it.phase = BUFFERING
                    self.mc.emit(block, "buffering", cid=cid, round=it.round.round_index)
                if it.phase == BUFFERING and block >= it.round.reveal_open - 1:
                    it.phase = REVEALING
                    self.mc.emit(block, "revealing", cid=cid, round=it.round.round_index)
                if it.phase == REVEALING and block >= it.round.reveal_close:
                    decision = self.mc.close_round(cid, block)
                    if decision.accepted:
                        self._plan_witnesses(cid, block)
                elif it.phase == DECIDING:
                    self.mc.witness_deadline_passed(cid, block)
            for event in self.mc.events[seen:]:
                if event["type"] == "round_started":
                    self._plan_round(bytes.fromhex(event["cid"]), block)
            if self.mc.total_value() != baseline:
                conserved = False
                self.mc.emit(block, "conservation_violated",
                             expected=baseline, actual=self.mc.total_value())
                break
            if not self.mc.active and not self.inbox:
                break
        settled = sum(1 for e in self.mc.events if e["type"] == "settled")
        return RunResult(scenario=scenario, events=self.mc.events,
                         lines=event_lines(self.mc.events), conserved=conserved,
                         settled=settled, total_blocks=block, mc=self.mc)


def run_scenario(scenario: Scenario) -> RunResult:
    return Simulation(scenario).run()


@dataclass(frozen=True)
class ReplayReport:
    identical: bool
    first_divergence: Optional[int]
    recorded_events: int
    replayed_events: int
    lib_version_match: bool = True


def replay_check(scenario: Scenario, recorded_lines: list) -> ReplayReport:
    """Re-run a scenario from its seeds and diff the event stream."""
    fresh = run_scenario(scenario).lines
    first = None
    for i, (a, b) in enumerate(zip(recorded_lines, fresh)):
        if a != b:
            first = i
            break
    if first is None and len(recorded_lines) != len(fresh):
        first = min(len(recorded_lines), len(fresh))
    return ReplayReport(identical=first is None, first_divergence=first,
                        recorded_events=len(recorded_lines),
                        replayed_events=len(fresh))
