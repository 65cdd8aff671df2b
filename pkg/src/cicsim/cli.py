"""Command-line entry points for the experiment harness.

Subcommands map one-to-one onto experiment kinds plus two utilities:
`rice-trace` emits a single run's update schedule as JSON lines, and
`replay` re-executes a recorded protocol log and verifies it bit-exactly.
Every run is pinned by --seed; identical invocations produce identical
artifacts. The process exits nonzero if any invariant audited by the
requested experiment fails.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import experiments, protocol, rice
from .hashing import sha256
from .merkle_state import CicState
from .toy_vm import ComputeModel, compute_data

DEFAULT_SEED = sha256(b"cicsim-default-seed").hex()


def _add_common(parser: argparse.ArgumentParser, trials: int) -> None:
    parser.add_argument("--seed", default=DEFAULT_SEED, help="hex experiment seed")
    parser.add_argument("--trials", type=int, default=trials)
    parser.add_argument("--out", default=None, help="CSV output path")
    parser.add_argument("--config", default=None,
                        help="JSON file of extra experiment parameters")


def _spec(args: argparse.Namespace, kind: str, params: dict) -> experiments.ExperimentSpec:
    if args.config:
        with open(args.config) as fh:
            params = {**params, **json.load(fh)}
    return experiments.ExperimentSpec(kind=kind, params=params,
                                      trials=args.trials, seed=args.seed,
                                      out=args.out)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cicsim", description="off-chain contract execution simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("miracle-mc", help="consensus Monte Carlo sweep")
    _add_common(p, trials=2000)
    p.add_argument("--m", type=int, default=1600)
    p.add_argument("--q", type=float, default=0.125)
    p.add_argument("--beta", type=float, action="append", default=None)
    p.add_argument("--f", type=float, action="append", default=None)
    p.add_argument("--f-max", type=float, default=None)

    p = sub.add_parser("adaptive", help="rounds vs actual Byzantine fraction")
    _add_common(p, trials=10_000)
    p.add_argument("--m", type=int, default=1600)
    p.add_argument("--beta", type=float, default=1e-20)
    p.add_argument("--f-max", type=float, default=0.35)
    p.add_argument("--target-rounds", type=float, default=5.0)
    p.add_argument("--f", type=float, action="append", default=None)

    p = sub.add_parser("es-sizing", help="one-round set sizing and the majority baseline")
    _add_common(p, trials=1)
    p.add_argument("--m", type=int, default=1600)
    p.add_argument("--beta", type=float, default=1e-20)

    p = sub.add_parser("rice-trace", help="update schedule of one traced run")
    p.add_argument("--seed", default=DEFAULT_SEED, help="hex round-1 entropy")
    p.add_argument("--eta", type=int, default=200, help="benchmark iterations")
    p.add_argument("--rounds", type=int, default=1)
    p.add_argument("--out", default=None)

    p = sub.add_parser("rice-overhead", help="schedule bounds over a T sweep")
    _add_common(p, trials=1000)
    p.add_argument("--t-lo", type=int, default=1000)
    p.add_argument("--t-hi", type=int, default=10_000_000)

    p = sub.add_parser("protocol-run", help="randomized full-protocol batch")
    _add_common(p, trials=50)
    p.add_argument("--max-parallel", type=int, default=16)
    p.add_argument("--scenario", default=None,
                   help="run one scenario JSON file and write its event log")
    p.add_argument("--log", default=None, help="event log output path")

    p = sub.add_parser("utility", help="incentive inequality surface")
    _add_common(p, trials=10_000)

    p = sub.add_parser("replay", help="verify a recorded event log")
    p.add_argument("log", help="event log produced by protocol-run")

    args = parser.parse_args(argv)

    if args.command == "rice-trace":
        entropy = bytes.fromhex(args.seed)
        model = ComputeModel()
        state = CicState(sha256(b"trace-cid", entropy), model.code_id)
        lines = []
        for round_index in range(1, args.rounds + 1):
            _, trace = rice.rice_execute_traced(model, state, compute_data(args.eta),
                                                round_index, entropy)
            lines.append(json.dumps({
                "round": round_index, "total": trace.total, "phi": trace.phi,
                "update_indices": list(trace.update_indices),
                "seed": trace.digest.seed.hex(),
                "root": trace.digest.root.hex()}, sort_keys=True))
        text = "\n".join(lines) + "\n"
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
        return 0

    if args.command == "replay":
        try:
            report = experiments.replay(args.log)
        except experiments.DivergenceDetected as exc:
            print(f"divergence: {exc}", file=sys.stderr)
            return 1
        print(json.dumps(report, sort_keys=True))
        return 0

    if args.command == "protocol-run" and args.scenario:
        with open(args.scenario) as fh:
            scenario = protocol.Scenario.from_json(fh.read())
        result = protocol.run_scenario(scenario)
        audit = experiments.audit_event_log(result.events)
        if args.log:
            experiments.write_event_log(args.log, result)
        ok = result.conserved and all(audit.values())
        print(json.dumps({"settled": result.settled, "blocks": result.total_blocks,
                          "events": len(result.events), "conserved": result.conserved,
                          **audit}, sort_keys=True))
        return 0 if ok else 1

    if args.command == "miracle-mc":
        params = {"m": args.m, "q": args.q, "f_max": args.f_max,
                  "betas": args.beta or [1e-10], "f_values": args.f or [0.40]}
        spec = _spec(args, "miracle_sweep", params)
    elif args.command == "adaptive":
        params = {"m": args.m, "beta": args.beta, "f_max": args.f_max,
                  "target_rounds": args.target_rounds,
                  "f_values": args.f or [0.0, 0.25]}
        spec = _spec(args, "adaptive_rounds", params)
    elif args.command == "es-sizing":
        spec = _spec(args, "es_sizing", {"m": args.m, "beta": args.beta})
    elif args.command == "rice-overhead":
        spec = _spec(args, "rice_overhead", {"t_lo": args.t_lo, "t_hi": args.t_hi})
    elif args.command == "protocol-run":
        spec = _spec(args, "protocol_run", {"max_parallel": args.max_parallel})
    else:  # utility
        spec = _spec(args, "utility_surface", {})

    rows, meta = experiments.run(spec)
    if not spec.out:
        sys.stdout.write(experiments.render_csv(rows, meta))
    violated = False
    if spec.kind == "rice_overhead":
        violated = not all(r["phi_bounds_ok"] and r["k_relation_ok"] for r in rows)
    elif spec.kind == "protocol_run":
        violated = not all(r["conserved"] and r["window_discipline"]
                           and r["reveal_binding"] and r["replay_identical"]
                           for r in rows)
    elif spec.kind == "utility_surface":
        violated = not all(r["agrees"] for r in rows)
    return 1 if violated else 0


if __name__ == "__main__":
    sys.exit(main())
