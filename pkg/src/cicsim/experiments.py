"""Monte Carlo harness: reproducible experiments emitting CSV.

Every experiment is fully determined by its spec and a 256-bit seed;
per-trial randomness comes from hash-derived sub-seeds so trial order and
parallel merging cannot change results. CSV artifacts carry a leading
comment line with the spec hash and seed for provenance.
"""

from __future__ import annotations

import csv
import io
import json
import math
import random
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import adversary, miracle, protocol, rice
from .hashing import be8, sha256
from .merkle_state import CicState
from .toy_vm import ComputeModel, compute_data, random_program, run_full

FORMAT_VERSION = 1
LIB_VERSION = "0.1.0"

KINDS = ("miracle_sweep", "adaptive_rounds", "es_sizing", "rice_overhead",
         "rice_unmatched", "protocol_run", "utility_surface")


class ConfigError(ValueError):
    pass


class DivergenceDetected(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    params: dict = field(default_factory=dict)
    trials: int = 1000
    seed: str = "00" * 32
    out: Optional[str] = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind: {self.kind}")
        if self.trials <= 0:
            raise ConfigError("trial count must be positive")
        try:
            raw = bytes.fromhex(self.seed)
        except ValueError as exc:
            raise ConfigError(f"seed must be hex: {exc}") from None
        if len(raw) != 32:
            raise ConfigError("seed must be 32 bytes of hex")

    def seed_bytes(self) -> bytes:
        return bytes.fromhex(self.seed)

    def canonical(self) -> str:
        return json.dumps({"kind": self.kind, "params": self.params,
                           "trials": self.trials, "seed": self.seed},
                          sort_keys=True, separators=(",", ":"))

    def spec_hash(self) -> str:
        return sha256(self.canonical().encode()).hex()


def _rng(seed: bytes, *tags: bytes) -> np.random.Generator:
    return np.random.default_rng(int.from_bytes(sha256(seed, *tags), "big"))


def trial_seed(seed: bytes, index: int) -> bytes:
    return sha256(seed, be8(index))


# --- vectorized two-root consensus Monte Carlo --------------------------------

@dataclass(frozen=True)
class SweepStats:
    f: float
    beta: float
    trials: int
    mean_rounds: float
    ci95_rounds: float
    p_wrong: float
    mean_nodes_used: float
    unconverged: int


def simulate_two_root(params: miracle.ConsensusParams, f: float, trials: int,
                      rng: np.random.Generator, max_rounds: int = 100):
    """All Byzantine nodes pool on one incorrect root; honest nodes submit
    the correct one. Returns per-trial (rounds, wrong, nodes_used, unconverged
    mask) using the exact integer score and the real-valued threshold."""
    n_byz = round(f * params.m_total)
    n_hon = params.m_total - n_byz
    gate = miracle.threshold(params)
    rounds = np.zeros(trials, dtype=np.int64)
    wrong = np.zeros(trials, dtype=bool)
    nodes_used = np.zeros(trials, dtype=np.int64)
    score_c = np.zeros(trials, dtype=np.int64)
    score_w = np.zeros(trials, dtype=np.int64)
    active = np.ones(trials, dtype=bool)
    for round_index in range(1, max_rounds + 1):
        count = int(active.sum())
        if count == 0:
            break
        nh = rng.binomial(n_hon, params.q, size=count).astype(np.int64)
        nb = (rng.binomial(n_byz, params.q, size=count).astype(np.int64)
              if n_byz else np.zeros(count, dtype=np.int64))
        totals = nh + nb
        score_c[active] += (nh - nb) * totals
        score_w[active] += (nb - nh) * totals
        nodes_used[active] += totals
        hit_c = score_c > gate
        hit_w = score_w > gate
        decided = active & (hit_c | hit_w)
        rounds[decided] = round_index
        wrong |= decided & hit_w
        active &= ~decided
    unconverged = active.copy()
    rounds[unconverged] = max_rounds
    return rounds, wrong, nodes_used, unconverged


def sweep_point(params: miracle.ConsensusParams, f: float, trials: int,
                seed: bytes, max_rounds: int = 100) -> SweepStats:
    rng = _rng(seed, b"sweep", str((params.m_total, params.q, params.beta,
                                    params.f_max, f)).encode())
    rounds, wrong, nodes, unconv = simulate_two_root(params, f, trials, rng,
                                                     max_rounds=max_rounds)
    mean = float(rounds.mean())
    half = 1.96 * float(rounds.std(ddof=1)) / math.sqrt(trials) if trials > 1 else 0.0
    return SweepStats(f=f, beta=params.beta, trials=trials, mean_rounds=mean,
                      ci95_rounds=half, p_wrong=float(wrong.mean()),
                      mean_nodes_used=float(nodes.mean()),
                      unconverged=int(unconv.sum()))


def miracle_sweep_rows(m_total: int, q: float, betas: Sequence[float],
                       f_values: Sequence[float], trials: int, seed: bytes,
                       f_max: Optional[float] = None, max_rounds: int = 100):
    """Mean rounds / error rate / node usage over a (beta, f) grid with
    f_max = f unless pinned (the worst-case design point)."""
    rows = []
    for beta in betas:
        for f in f_values:
            design = f_max if f_max is not None else f
            params = miracle.ConsensusParams(m_total, design, q, beta)
            stats = sweep_point(params, f, trials, seed, max_rounds=max_rounds)
            rows.append({"f": f, "beta": beta, "f_max": design,
                         "trials": trials, "mean_rounds": stats.mean_rounds,
                         "ci95_rounds": stats.ci95_rounds,
                         "p_wrong": stats.p_wrong,
                         "mean_nodes_used": stats.mean_nodes_used,
                         "unconverged": stats.unconverged})
    return rows


def adaptive_rows(m_total: int, beta: float, f_max: float, target_rounds: float,
                  f_values: Sequence[float], trials: int, seed: bytes):
    """Fix q so the design point runs `target_rounds` in expectation, then
    sweep the actual Byzantine fraction downwards."""
    q = miracle.solve_q_for_expected_rounds(m_total, f_max, beta, target_rounds)
    params = miracle.ConsensusParams(m_total, f_max, q, beta)
    rows = []
    for f in f_values:
        stats = sweep_point(params, f, trials, seed)
        rows.append({"f": f, "f_max": f_max, "q": q, "beta": beta,
                     "expected_es": q * m_total, "trials": trials,
                     "mean_rounds": stats.mean_rounds,
                     "ci95_rounds": stats.ci95_rounds, "p_wrong": stats.p_wrong,
                     "mean_nodes_used": stats.mean_nodes_used})
    return rows


def es_sizing_rows(m_total: int, beta: float, f_max_values: Sequence[float]):
    """One-round set sizing against the single-shot majority baseline."""
    rows = []
    for f_max in f_max_values:
        q = miracle.one_round_q(m_total, f_max, beta)
        rows.append({"f_max": f_max, "beta": beta, "q_one_round": q,
                     "es_one_round": q * m_total,
                     "ns1_size": miracle.ns1_size(f_max, m_total, beta)})
    return rows


# --- likelihood property batches (vectorized) ---------------------------------

def random_tally_batch(rng: np.random.Generator, trials: int, max_roots: int = 5,
                       max_rounds: int = 6, scale: int = 200):
    """Random per-round counts, shape (trials, rounds, roots)."""
    n_rounds = int(rng.integers(1, max_rounds + 1))
    n_roots = int(rng.integers(2, max_roots + 1))
    return rng.integers(0, scale, size=(trials, n_rounds, n_roots)).astype(np.int64)


def scores_from_counts(counts: np.ndarray) -> np.ndarray:
    """Integer scores (2 c - C) C summed over rounds, per trial and root."""
    totals = counts.sum(axis=2, keepdims=True)
    return ((2 * counts - totals) * totals).sum(axis=1)


def count_double_crossings(counts: np.ndarray, gate: float) -> int:
    """Trials where two roots' running scores exceed the gate at the same
    round (must be zero for any positive gate)."""
    totals = counts.sum(axis=2, keepdims=True)
    increments = (2 * counts - totals) * totals
    running = np.cumsum(increments, axis=1)
    return int((np.sum(running > gate, axis=2) >= 2).sum())


def merged_vs_split_margin(counts_split: np.ndarray) -> np.ndarray:
    """Per-trial margin (merged-root score) - max(split incorrect scores)
    when the first root is honest and the rest merge their counts."""
    honest = counts_split[:, :, :1]
    bad = counts_split[:, :, 1:]
    merged = np.concatenate([honest, bad.sum(axis=2, keepdims=True)], axis=2)
    split_max = scores_from_counts(counts_split)[:, 1:].max(axis=1)
    merged_score = scores_from_counts(merged)[:, 1]
    return merged_score - split_max


# --- schedule experiments ------------------------------------------------------

class SyntheticRunner:
    """Interruptible substrate whose root differs at every index: the worst
    case for anyone hoping to reuse intermediate states across rounds, and
    an O(1)-per-subarray driver for schedule studies at large T."""

    def __init__(self, total: int, salt: bytes):
        if total < 1:
            raise ValueError("total instruction count must be positive")
        self.total = total
        self.salt = salt

    def start(self, state, data: bytes = b"", gas_limit=None, fun_id=None):
        return _SyntheticCursor(runner=self, dynamic_index=0, halted=False)

    def resume(self, cursor: "_SyntheticCursor", t_i: int, t_f: int):
        if cursor.halted or t_i != cursor.dynamic_index + 1 or t_i > t_f:
            raise ValueError("invalid resume")
        last = min(t_f, self.total)
        cursor.dynamic_index = last
        cursor.halted = last == self.total
        return cursor, last


@dataclass
class _SyntheticCursor:
    runner: SyntheticRunner
    dynamic_index: int
    halted: bool

    def root_bytes(self) -> bytes:
        return sha256(b"synthetic-root", self.runner.salt,
                      be8(self.dynamic_index))


def rice_run(backend: str, total_target: int, salt: bytes, round_index: int,
             entropy: bytes):
    """One traced round on the chosen substrate; returns the trace."""
    if backend == "synthetic":
        runner = SyntheticRunner(total_target, salt)
        _, trace = rice.rice_execute_traced(runner, None, b"", round_index, entropy)
        return trace
    if backend == "model":
        eta = max((total_target - 5) // 6, 1)
        model = ComputeModel(key=int.from_bytes(salt[:2], "big"))
        state = CicState(sha256(b"cic", salt), model.code_id)
        _, trace = rice.rice_execute_traced(model, state, compute_data(eta),
                                            round_index, entropy)
        return trace
    raise ConfigError(f"unknown backend: {backend}")


def rice_overhead_rows(count: int, t_lo: int, t_hi: int, seed: bytes,
                       vm_fraction: float = 0.2, vm_t_cap: int = 20_000):
    """Schedule-bound audit over programs with log-uniform total length.

    Mixes three substrates: closed-form benchmark runs, synthetic runs, and
    (below `vm_t_cap`) randomly generated programs on the interpreter.
    """
    rng = random.Random(int.from_bytes(sha256(seed, b"rice-overhead"), "big"))
    rows = []
    for index in range(count):
        u = rng.random()
        total_target = int(round(t_lo * (t_hi / t_lo) ** u))
        salt = sha256(seed, b"salt", be8(index))
        entropy = sha256(seed, b"entropy", be8(index))
        pick = rng.random()
        if pick < vm_fraction and total_target <= vm_t_cap:
            program = random_program(rng, max_iterations=max(total_target // 12, 1))
            state = CicState(sha256(b"cic", salt), program.code_id)
            _, total = run_full(program, state, b"")
            _, trace = rice.rice_execute_traced(program, state, b"", 1, entropy)
            backend = "vm"
        else:
            backend = "model" if pick < 0.6 else "synthetic"
            trace = rice_run(backend, total_target, salt, 1, entropy)
            total = trace.total
        bound = 3.0 / (4.0 * math.log2(total))
        frac = trace.last_update_fraction()
        rows.append({
            "trial": index, "backend": backend, "total": total,
            "phi": trace.phi,
            "k_of_total": trace.terminal_exponent(),
            "k_of_last_update": trace.last_update_exponent(),
            "phi_bounds_ok": rice.check_phi_bounds(trace),
            "k_relation_ok": rice.check_total_exponent(trace),
            "last_update_fraction": frac,
            "last_fraction_bound": bound,
            "last_fraction_ok": frac is not None and frac < bound,
        })
    return rows


def fit_phi_vs_log2_squared(rows: Sequence[dict]):
    """Least-squares fit phi ~ a (log2 T)^2 + b; returns (a, b, r_squared)."""
    x = np.array([math.log2(r["total"]) ** 2 for r in rows])
    y = np.array([r["phi"] for r in rows], dtype=float)
    design = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    pred = design @ coef
    r2 = 1.0 - float(((y - pred) ** 2).sum() / ((y - y.mean()) ** 2).sum())
    return float(coef[0]), float(coef[1]), r2


def rice_unmatched_rows(k: int, trials: int, rounds: int, seed: bytes,
                        backend: str = "synthetic"):
    """Strong-unmatched counts for runs ending in a 2^k segment, across
    consecutive rounds of the same synthetic computation."""
    lo, hi = rice.group_end(k - 1) + 1, rice.group_end(k)
    rng = random.Random(int.from_bytes(sha256(seed, b"unmatched", be8(k)), "big"))
    rows = []
    for index in range(trials):
        total = rng.randint(max(lo, 3), hi)
        salt = sha256(seed, b"usalt", be8(index))
        entropy = sha256(seed, b"uent", be8(index))
        traces = [rice_run(backend, total, salt, j, entropy)
                  for j in range(1, rounds + 1)]
        report = rice.analyze_schedule(traces[0].total, traces)
        for stats in report.rounds[1:]:
            rows.append({"trial": index, "total": traces[0].total,
                         "round": stats.round_index,
                         "k_of_total": stats.terminal_exponent,
                         "phi": stats.phi,
                         "strong_unmatched": stats.strong_unmatched})
    return rows


# --- randomized protocol runs ---------------------------------------------------

def random_scenario(index: int, seed: bytes, max_parallel: int = 16) -> protocol.Scenario:
    """A small randomized protocol scenario: mixed strategies, one to
    `max_parallel` transactions, occasional shared queues and zero buffers."""
    rng = random.Random(int.from_bytes(trial_seed(seed, index), "big"))
    m = rng.randint(12, 28)
    n_byz = rng.randint(0, int(0.30 * m))
    n_free = rng.randint(0, 2)
    n_silent = rng.randint(0, 2)
    n_coll = rng.choice([0, 0, 2, 3])
    n_honest = m - n_byz - n_free - n_silent - n_coll
    if n_honest < max(3, int(0.45 * m)):
        n_byz = max(0, n_byz - (max(3, int(0.45 * m)) - n_honest))
        n_honest = m - n_byz - n_free - n_silent - n_coll
    strategies = [("honest", n_honest)]
    if n_byz:
        if rng.random() < 0.3:
            strategies.append(("byz_multi", n_byz, {"fanout": rng.randint(2, 3)}))
        else:
            strategies.append(("byz_single", n_byz))
    if n_free:
        strategies.append(("freeloader", n_free,
                           {"gamma": round(rng.uniform(0.0, 0.6), 3)}))
    if n_silent:
        strategies.append(("silent", n_silent))
    if n_coll:
        strategies.append(("colluder", n_coll, {"group": 1}))
    n_its = rng.choice([1, 1, 1, 1, 2, 2, 2, 3, 3, 4, 8, max_parallel])
    n_cics = n_its if rng.random() < 0.8 else max(1, n_its // 2)
    cics = tuple(protocol.CicSpec(key=i, init=rng.randint(0, 50))
                 for i in range(n_cics))
    its = tuple(protocol.ItSpec(cic_index=i % n_cics, eta=rng.randint(3, 10),
                                gas_price=rng.randint(1, 3),
                                submit_block=rng.randint(1, 3))
                for i in range(n_its))
    return protocol.Scenario(
        seed=trial_seed(seed, index).hex(),
        m_total=m, q=round(rng.uniform(0.35, 0.65), 3), f_max=0.4,
        beta=10.0 ** -rng.randint(3, 8), max_rounds=rng.randint(6, 10),
        strategies=tuple(strategies), cics=cics, its=its,
        windows=protocol.WindowConfig(gas_per_block=40,
                                      w_src_slack=rng.randint(1, 2),
                                      w_buf=rng.choice([0, 1, 2]),
                                      w_sr=rng.randint(2, 4)),
        commit_jitter=rng.randint(1, 3), reveal_jitter=rng.randint(1, 3))


def audit_event_log(events: Sequence[dict]) -> dict:
    """Log-level audit: window discipline and commitment/reveal binding,
    reconstructed purely from the event stream."""
    windows: dict = {}
    commits: dict = {}
    ok_windows = True
    ok_binding = True
    for event in events:
        kind = event["type"]
        if kind == "round_started":
            windows[event["cid"]] = event
        elif kind == "commit":
            w = windows[event["cid"]]
            if not (w["round"] == event["round"]
                    and w["commit_open"] <= event["block"] <= w["commit_close"]):
                ok_windows = False
            commits[(event["cid"], event["round"], event["node"])] = event["se"]
        elif kind == "reveal":
            w = windows[event["cid"]]
            if not (w["round"] == event["round"]
                    and w["reveal_open"] <= event["block"] <= w["reveal_close"]):
                ok_windows = False
            se = commits.get((event["cid"], event["round"], event["node"]))
            opening = sha256(bytes.fromhex(event["seed"]),
                             bytes.fromhex(event["root"]),
                             bytes.fromhex(event["sort"])).hex()
            if se != opening:
                ok_binding = False
    return {"window_discipline": ok_windows, "reveal_binding": ok_binding}


def protocol_batch_rows(count: int, seed: bytes, max_parallel: int = 16,
                        check_replay: bool = True):
    """Run `count` randomized scenarios; audit conservation, windows,
    binding, and bit-exact replay of every event log. `honest_forfeits`
    reports settlement punishments landing on honest nodes (possible only
    when a wrong root wins or honest seeds fall under the forfeit
    threshold, both of which the incentive design keeps rare)."""
    rows = []
    for index in range(count):
        scenario = random_scenario(index, seed, max_parallel=max_parallel)
        result = protocol.run_scenario(scenario)
        audit = audit_event_log(result.events)
        replay_ok = True
        if check_replay:
            replay_ok = protocol.replay_check(scenario, result.lines).identical
        honest_ids = {n for n, rec in result.mc.nodes.items()
                      if rec.strategy.kind == adversary.HONEST}
        honest_forfeits = sum(1 for e in result.events
                              if e["type"] == "forfeit" and e["node"] in honest_ids)
        rows.append({
            "trial": index, "m_total": scenario.m_total,
            "parallel_its": len(scenario.its), "blocks": result.total_blocks,
            "settled": result.settled, "events": len(result.events),
            "conserved": result.conserved,
            "window_discipline": audit["window_discipline"],
            "reveal_binding": audit["reveal_binding"],
            "replay_identical": replay_ok,
            "honest_forfeits": honest_forfeits,
        })
    return rows


# --- utility surface -------------------------------------------------------------

def utility_surface_rows(points: int, seed: bytes):
    """Random sweep of the incentive inequality; `agrees` records whether
    the closed-form condition matches the direct utility comparison."""
    rng = _rng(seed, b"utility")
    rows = []
    for index in range(points):
        p = adversary.UtilityParams(
            reward=float(rng.uniform(0.0, 200.0)),
            deposit=float(rng.uniform(0.0, 200.0)),
            beta=float(rng.uniform(0.0, 0.45)),
            gamma=float(rng.uniform(0.0, 0.99)),
            c1=float(rng.uniform(0.0, 60.0)),
            c2=float(rng.uniform(0.0, 60.0)),
            c3=float(rng.uniform(0.0, 80.0)))
        honest_u = adversary.utility_honest(p)
        freeload_u = adversary.utility_freeload(p)
        rows.append({"trial": index, "reward": p.reward, "deposit": p.deposit,
                     "beta": p.beta, "gamma": p.gamma, "c1": p.c1, "c2": p.c2,
                     "utility_honest": honest_u, "utility_freeload": freeload_u,
                     "nash": adversary.nash_condition(p),
                     "agrees": adversary.nash_condition(p) == (honest_u > freeload_u)})
    return rows


# --- CSV plumbing and the experiment entry point ---------------------------------

def write_csv(path: str, rows: Sequence[dict], meta: dict) -> None:
    with open(path, "w", newline="") as fh:
        _write_csv_stream(fh, rows, meta)


def render_csv(rows: Sequence[dict], meta: dict) -> str:
    buf = io.StringIO()
    _write_csv_stream(buf, rows, meta)
    return buf.getvalue()


def _write_csv_stream(fh, rows: Sequence[dict], meta: dict) -> None:
    fh.write("# " + " ".join(f"{k}={v}" for k, v in sorted(meta.items())) + "\n")
    if not rows:
        return
    writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
    writer.writeheader()
    writer.writerows(rows)


def run(spec: ExperimentSpec):
    """Execute an experiment spec; returns (rows, meta) and writes the CSV
    artifact when an output path is set."""
    seed = spec.seed_bytes()
    p = dict(spec.params)
    if spec.kind == "miracle_sweep":
        rows = miracle_sweep_rows(
            m_total=p.get("m", 1600), q=p.get("q", 0.125),
            betas=p.get("betas", [1e-10]), f_values=p.get("f_values", [0.4]),
            trials=spec.trials, seed=seed, f_max=p.get("f_max"))
    elif spec.kind == "adaptive_rounds":
        rows = adaptive_rows(
            m_total=p.get("m", 1600), beta=p.get("beta", 1e-20),
            f_max=p.get("f_max", 0.35), target_rounds=p.get("target_rounds", 5.0),
            f_values=p.get("f_values", [0.0, 0.25]), trials=spec.trials, seed=seed)
    elif spec.kind == "es_sizing":
        rows = es_sizing_rows(
            m_total=p.get("m", 1600), beta=p.get("beta", 1e-20),
            f_max_values=p.get("f_max_values",
                               [0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45]))
    elif spec.kind == "rice_overhead":
        rows = rice_overhead_rows(spec.trials, p.get("t_lo", 1000),
                                  p.get("t_hi", 10_000_000), seed)
        a, b, r2 = fit_phi_vs_log2_squared(rows)
        for row in rows:
            row["fit_a"], row["fit_b"], row["fit_r2"] = a, b, r2
    elif spec.kind == "rice_unmatched":
        rows = rice_unmatched_rows(p.get("k", 10), spec.trials,
                                   p.get("rounds", 2), seed)
    elif spec.kind == "protocol_run":
        rows = protocol_batch_rows(spec.trials, seed,
                                   max_parallel=p.get("max_parallel", 16))
    elif spec.kind == "utility_surface":
        rows = utility_surface_rows(spec.trials, seed)
    else:  # unreachable: validated at construction
        raise ConfigError(spec.kind)
    meta = {"spec": spec.spec_hash(), "seed": spec.seed, "kind": spec.kind,
            "lib": LIB_VERSION}
    if spec.out:
        write_csv(spec.out, rows, meta)
    return rows, meta


# --- protocol log files and replay ------------------------------------------------

def write_event_log(path: str, result: protocol.RunResult) -> None:
    header = {"format": FORMAT_VERSION, "lib": LIB_VERSION,
              "scenario": json.loads(result.scenario.to_json())}
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for line in result.lines:
            fh.write(line + "\n")


def replay(path: str) -> dict:
    """Re-run a logged scenario and compare event streams; raises
    DivergenceDetected on any mismatch."""
    with open(path) as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    header = json.loads(lines[0])
    scenario = protocol.Scenario.from_json(
        json.dumps(header["scenario"], sort_keys=True, separators=(",", ":")))
    report = protocol.replay_check(scenario, lines[1:])
    out = {
        "identical": report.identical,
        "first_divergence": report.first_divergence,
        "recorded_events": report.recorded_events,
        "replayed_events": report.replayed_events,
        "log_format": header.get("format"),
        "log_lib": header.get("lib"),
        "lib": LIB_VERSION,
        "version_match": header.get("lib") == LIB_VERSION,
    }
    if not report.identical:
        raise DivergenceDetected(json.dumps(out, sort_keys=True))
    return out
