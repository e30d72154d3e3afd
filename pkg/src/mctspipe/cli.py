"""Command-line benchmark harness.

Subcommands: ``run`` (one engine over seeds), ``sweep`` (lane-count scaling),
``match`` (head-to-head strength), ``overhead`` (parallel-search overhead
proxies), ``sim`` (stage-schedule simulator) and ``kernels`` (JIT vs.
pure-Python backend microbenchmark).

Exit codes: 0 success, 1 usage/config error, 2 invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import statistics
import subprocess
import sys
import time

from ._backend import NUMBA_ENABLED
from .bench import (
    CSV_COLUMNS,
    ExperimentSpec,
    GameSpec,
    PlayerSpec,
    build_report,
    run_experiment,
    search_overhead,
    strength_match,
)
from .pipeline import PipelineConfig, PipelineError
from .schedsim import SimConfig, export_gantt, sequential_makespan, simulate
from .tree import TreeInvariantError


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> _Parser:
    parser = _Parser(prog="mctspipe", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", parents=[_common(), _engine_opts()],
                           help="run one engine over a seed list")
    run_p.add_argument("--spec", default=None,
                       help="JSON experiment file (overrides game/engine flags)")
    run_p.set_defaults(func=cmd_run)

    sweep_p = sub.add_parser("sweep", parents=[_common()],
                             help="scale playout lanes and record wall times")
    sweep_p.add_argument("--lanes", default="1,2,4",
                         help="comma-separated lane counts (default 1,2,4)")
    sweep_p.add_argument("--in-flight", type=int, default=8)
    sweep_p.add_argument("--buffer-cap", type=int, default=None)
    sweep_p.add_argument("--staleness", default="plain",
                         choices=["plain", "visit-mark"])
    sweep_p.set_defaults(func=cmd_sweep)

    match_p = sub.add_parser("match", parents=[_common(), _engine_opts()],
                             help="seat-balanced head-to-head match")
    match_p.add_argument("--engine-a", default="pipeline",
                         choices=["sequential", "pipeline", "random"])
    match_p.add_argument("--engine-b", default="sequential",
                         choices=["sequential", "pipeline", "random"])
    match_p.add_argument("--games", type=int, default=200)
    match_p.set_defaults(func=cmd_match)

    over_p = sub.add_parser("overhead", parents=[_common(), _engine_opts()],
                            help="duplicate-work and policy-distance probes")
    over_p.set_defaults(func=cmd_overhead)

    sim_p = sub.add_parser("sim", help="discrete-tick pipeline schedule")
    sim_p.add_argument("--config", required=True,
                       help='JSON {"stages":[{"name","duration","lanes"}],"items":N}')
    sim_p.add_argument("--gantt", help="write the schedule CSV here")
    sim_p.set_defaults(func=cmd_sim)

    kern_p = sub.add_parser("kernels",
                            help="compare JIT and pure-Python backends")
    kern_p.add_argument("--budget", type=int, default=2000,
                        help="JIT-side search budget (fallback side is scaled)")
    kern_p.set_defaults(func=cmd_kernels)
    return parser


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--game", default="tictactoe", choices=["tictactoe", "synthetic"])
    p.add_argument("--branching", type=int, default=4)
    p.add_argument("--depth", type=int, default=8)
    p.add_argument("--playout-cost", type=int, default=0,
                   help="busy-work units per synthetic playout")
    p.add_argument("--cost-spread", type=float, default=0.0)
    p.add_argument("--game-seed", type=int, default=0)
    p.add_argument("--budget", type=int, default=1000)
    p.add_argument("--cp", type=float, default=1.0)
    p.add_argument("--seeds", type=int, default=10,
                   help="use seeds 0..N-1 (overridden by --seed-list)")
    p.add_argument("--seed-list", type=int, nargs="+", default=None)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--format", default="both", choices=["csv", "json", "both"])
    return p


def _engine_opts() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--engine", default="sequential",
                   choices=["sequential", "pipeline"])
    p.add_argument("--lanes", type=int, default=4, dest="playout_lanes")
    p.add_argument("--in-flight", type=int, default=8)
    p.add_argument("--buffer-cap", type=int, default=None)
    p.add_argument("--staleness", default="plain", choices=["plain", "visit-mark"])
    return p


def _game_spec(args) -> GameSpec:
    return GameSpec(
        kind=args.game,
        branching=args.branching,
        depth=args.depth,
        playout_cost=args.playout_cost,
        cost_spread=args.cost_spread,
        game_seed=args.game_seed,
    )


def _pipeline_config(args) -> PipelineConfig:
    return PipelineConfig(
        playout_lanes=args.playout_lanes,
        buffer_capacity=args.buffer_cap,
        in_flight_limit=args.in_flight,
        staleness_policy=args.staleness.replace("-", "_"),
    )


def _player(args, engine: str) -> PlayerSpec:
    pipeline = _pipeline_config(args) if engine == "pipeline" else None
    return PlayerSpec(engine=engine, budget=args.budget, cp=args.cp,
                      pipeline=pipeline)


def _seeds(args) -> list:
    if args.seed_list is not None:
        return list(args.seed_list)
    return list(range(args.seeds))


def _write_outputs(args, rows, report, stem) -> None:
    os.makedirs(args.out, exist_ok=True)
    if args.format in ("csv", "both"):
        path = os.path.join(args.out, f"{stem}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            writer.writerows(rows)
        print(f"wrote {path} ({len(rows)} rows)")
    if args.format in ("json", "both"):
        path = os.path.join(args.out, "report.json")
        with open(path, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
        print(f"wrote {path}")


def cmd_run(args) -> int:
    if args.spec:
        spec = ExperimentSpec.load(args.spec)
    else:
        spec = ExperimentSpec(game=_game_spec(args),
                              player=_player(args, args.engine),
                              seeds=_seeds(args))
    rows = run_experiment(spec)
    report = build_report(rows, extra={"experiment": spec.to_json()})
    _write_outputs(args, rows, report, "results")
    walls = [r["wall_ns"] for r in rows]
    print(f"{spec.player.label()} on {spec.game.label()}: "
          f"median wall {statistics.median(walls) / 1e6:.2f} ms, "
          f"median speedup {statistics.median(r['speedup'] for r in rows):.2f}")
    return 0


def cmd_sweep(args) -> int:
    lanes = [int(x) for x in str(args.lanes).split(",") if x]
    if not lanes:
        raise ValueError("--lanes needs at least one lane count")
    game = _game_spec(args)
    seeds = _seeds(args)
    rows = []
    rows += run_experiment(ExperimentSpec(
        game=game, player=_player(args, "sequential"), seeds=seeds),
        baseline=False)
    for k in lanes:
        player = PlayerSpec(
            engine="pipeline", budget=args.budget, cp=args.cp,
            pipeline=PipelineConfig(
                playout_lanes=k,
                buffer_capacity=args.buffer_cap,
                in_flight_limit=max(args.in_flight, 2 * k),
                staleness_policy=args.staleness.replace("-", "_"),
            ),
        )
        rows += run_experiment(ExperimentSpec(game=game, player=player,
                                              seeds=seeds))
    report = build_report(rows, extra={"sweep_lanes": lanes,
                                       "game": game.to_json()})
    _write_outputs(args, rows, report, "sweep")
    for k in lanes:
        walls = [r["wall_ns"] for r in rows
                 if r["engine"] == "pipeline" and r["lanes"] == k]
        print(f"lanes={k}: median wall {statistics.median(walls) / 1e6:.2f} ms")
    return 0


def cmd_match(args) -> int:
    game = _game_spec(args)
    player_a = _player(args, args.engine_a)
    player_b = _player(args, args.engine_b)
    games = args.games
    seeds = _seeds(args)
    if len(seeds) != games:
        seeds = list(range(games))
    report = strength_match(game, player_a, player_b, games, seeds)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "match.json")
    with open(path, "w") as fh:
        json.dump({
            "game": game.to_json(),
            "player_a": player_a.to_json(),
            "player_b": player_b.to_json(),
            "report": report.to_json(),
        }, fh, indent=2, sort_keys=True)
    print(f"wrote {path}")
    print(f"A={player_a.label()} vs B={player_b.label()}: "
          f"+{report.wins} ={report.draws} -{report.losses}  "
          f"win-rate {report.win_rate:.3f} +/- {report.ci95:.3f}")
    return 0


def cmd_overhead(args) -> int:
    game = _game_spec(args)
    player = _player(args, "pipeline")
    report = search_overhead(game, player, _seeds(args))
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "overhead.json")
    with open(path, "w") as fh:
        json.dump({
            "game": game.to_json(),
            "player": player.to_json(),
            "report": report.to_json(),
        }, fh, indent=2, sort_keys=True)
    print(f"wrote {path}")
    print(f"duplicate_trajectory_fraction={report.duplicate_trajectory_fraction:.4f} "
          f"root_policy_distance={report.root_policy_distance:.4f}")
    return 0


def cmd_sim(args) -> int:
    config = SimConfig.load(args.config)
    result = simulate(config)
    print(f"makespan={result.makespan}")
    print(f"steady_period={result.steady_period}")
    print(f"sequential={sequential_makespan(config)}")
    if args.gantt:
        export_gantt(result, args.gantt)
        print(f"wrote {args.gantt}")
    return 0


def cmd_kernels(args) -> int:
    """Time the JIT backend against the pure-Python fallback."""
    from .rng import PY_IMPL, _u64

    rows = []

    def timed(fn, *fargs):
        t0 = time.perf_counter_ns()
        fn(*fargs)
        return time.perf_counter_ns() - t0

    # 64-bit mix chain (the primitive under every stream and playout)
    py_rounds = 200_000
    py_ns = timed(PY_IMPL["spin"], py_rounds, 1) / py_rounds
    if NUMBA_ENABLED:
        from .rng import spin

        spin(1, _u64(1))  # compile
        nb_rounds = 5_000_000
        nb_ns = timed(spin, nb_rounds, _u64(1)) / nb_rounds
        rows.append(("mix64 round", nb_ns, py_ns))
    else:
        rows.append(("mix64 round", None, py_ns))

    # full search, this process vs. a MCTSPIPE_PURE_PYTHON=1 subprocess
    snippet = (
        "import time\n"
        "from mctspipe.games import TicTacToeState\n"
        "from mctspipe.tree import UctParams, run_sequential\n"
        "budget = {budget}\n"
        "run_sequential(TicTacToeState(), UctParams(budget=budget, seed=0))\n"
        "t0 = time.perf_counter_ns()\n"
        "run_sequential(TicTacToeState(), UctParams(budget=budget, seed=1))\n"
        "print((time.perf_counter_ns() - t0) / budget)\n"
    )
    if NUMBA_ENABLED:
        from .games import TicTacToeState
        from .tree import UctParams, run_sequential

        budget = args.budget
        run_sequential(TicTacToeState(), UctParams(budget=budget, seed=0))
        t0 = time.perf_counter_ns()
        run_sequential(TicTacToeState(), UctParams(budget=budget, seed=1))
        nb_iter_ns = (time.perf_counter_ns() - t0) / budget
    else:
        nb_iter_ns = None
    env = dict(os.environ, MCTSPIPE_PURE_PYTHON="1")
    py_budget = max(50, args.budget // 10)
    out = subprocess.run(
        [sys.executable, "-c", snippet.format(budget=py_budget)],
        env=env, capture_output=True, text=True, check=True,
    )
    py_iter_ns = float(out.stdout.strip())
    rows.append(("search iteration (tictactoe)", nb_iter_ns, py_iter_ns))

    print(f"{'kernel':<32}{'jit ns/op':>14}{'python ns/op':>16}{'speedup':>10}")
    for name, nb_ns, py_ns in rows:
        if nb_ns is None:
            print(f"{name:<32}{'n/a':>14}{py_ns:>16.1f}{'n/a':>10}")
        else:
            print(f"{name:<32}{nb_ns:>14.1f}{py_ns:>16.1f}{py_ns / nb_ns:>10.1f}")
    if not NUMBA_ENABLED:
        print("note: running with MCTSPIPE_PURE_PYTHON=1; JIT side skipped")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args) or 0
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"mctspipe: error: {exc}", file=sys.stderr)
        return 1
    except (PipelineError, TreeInvariantError) as exc:
        print(f"mctspipe: invariant violation: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
