"""Benchmark harness: experiments, head-to-head matches and overhead probes.

Everything here is orchestration around the two engines. An experiment runs
one engine over a seed list and records per-run rows; matches play full games
with one engine per side at equal budgets; the overhead probe compares a
pipeline run against the sequential run on identical seeds and reports two
proxies for wasted parallel work: the fraction of iterations whose selected
path duplicated a concurrently in-flight one, and the L1 distance between
the two normalized root visit distributions.

Reports split into a deterministic region (seed-reproducible: moves, visit
counts, audits) and a timing region (wall clock); the deterministic region is
hashed so reruns can be diffed byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import math
import statistics
import time
from dataclasses import dataclass, field
from typing import Optional

from .games import (
    GAME_SYNTHETIC,
    GAME_TICTACTOE,
    GameState,
    SyntheticParams,
    SyntheticState,
    TicTacToeState,
)
from .pipeline import PipelineConfig, PipelineEngine, StageStats
from .rng import MASK64, TAG_MATCH, RngStream, _u64, stream_state
from .tree import SearchResult, UctParams, run_sequential

ENGINE_SEQUENTIAL = "sequential"
ENGINE_PIPELINE = "pipeline"
ENGINE_RANDOM = "random"

CSV_COLUMNS = [
    "game", "engine", "lanes", "in_flight", "staleness", "budget", "cp",
    "seed", "wall_ns", "best_action", "root_n", "tree_size", "speedup",
]


@dataclass(frozen=True)
class GameSpec:
    """Which domain an experiment runs on."""

    kind: str = "tictactoe"
    branching: int = 4
    depth: int = 8
    playout_cost: int = 0
    cost_spread: float = 0.0
    game_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("tictactoe", "synthetic"):
            raise ValueError(f"unknown game {self.kind!r}")

    def build_state(self) -> GameState:
        if self.kind == "tictactoe":
            return TicTacToeState()
        return SyntheticState(params=SyntheticParams(
            branching=self.branching,
            depth=self.depth,
            playout_cost=self.playout_cost,
            cost_spread=self.cost_spread,
            seed=self.game_seed,
        ))

    def label(self) -> str:
        if self.kind == "tictactoe":
            return "tictactoe"
        return (f"synthetic(b={self.branching},d={self.depth},"
                f"cost={self.playout_cost})")

    def to_json(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "synthetic":
            out.update(
                branching=self.branching, depth=self.depth,
                playout_cost=self.playout_cost, cost_spread=self.cost_spread,
                game_seed=self.game_seed,
            )
        return out


@dataclass
class PlayerSpec:
    """One engine configuration: what searches (or guesses) a move."""

    engine: str = ENGINE_SEQUENTIAL
    budget: int = 200
    cp: float = 1.0
    pipeline: Optional[PipelineConfig] = None

    def __post_init__(self):
        if self.engine not in (ENGINE_SEQUENTIAL, ENGINE_PIPELINE, ENGINE_RANDOM):
            raise ValueError(f"unknown engine {self.engine!r}")
        if self.engine == ENGINE_PIPELINE and self.pipeline is None:
            self.pipeline = PipelineConfig()

    def label(self) -> str:
        if self.engine == ENGINE_PIPELINE:
            cfg = self.pipeline
            return (f"pipeline(k={cfg.playout_lanes},if={cfg.in_flight_limit},"
                    f"{cfg.staleness_policy},m={self.budget})")
        if self.engine == ENGINE_RANDOM:
            return "random"
        return f"sequential(m={self.budget})"

    def search(self, state: GameState, seed: int):
        """Full search from ``state``; returns ``(SearchResult, StageStats?)``."""
        params = UctParams(budget=self.budget, cp=self.cp, seed=seed)
        if self.engine == ENGINE_SEQUENTIAL:
            return run_sequential(state, params), None
        if self.engine == ENGINE_PIPELINE:
            return PipelineEngine(self.pipeline).run(state, params)
        raise ValueError("random player does not search")

    def choose(self, state: GameState, seed: int) -> int:
        if self.engine == ENGINE_RANDOM:
            actions = state.legal_actions()
            return RngStream(_move_seed(seed, 0)).below(len(actions))
        result, _ = self.search(state, seed)
        return result.best_action

    def to_json(self) -> dict:
        out = {"engine": self.engine, "budget": self.budget, "cp": self.cp}
        if self.engine == ENGINE_PIPELINE:
            out["pipeline"] = self.pipeline.to_json()
        return out


# ---------------------------------------------------------------------------
# experiments (run / sweep)
# ---------------------------------------------------------------------------

@dataclass
class ExperimentSpec:
    """A batch of identical runs over a seed list."""

    game: GameSpec
    player: PlayerSpec
    seeds: list
    repetitions: int = 0

    def __post_init__(self):
        if not self.repetitions:
            self.repetitions = len(self.seeds)
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if len(self.seeds) != self.repetitions:
            raise ValueError("seed list length must equal repetitions")

    def to_json(self) -> dict:
        return {
            "game": self.game.to_json(),
            "player": self.player.to_json(),
            "seeds": list(self.seeds),
            "repetitions": self.repetitions,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "ExperimentSpec":
        game = GameSpec(**payload["game"])
        player_payload = dict(payload["player"])
        pipeline = player_payload.pop("pipeline", None)
        player = PlayerSpec(
            **player_payload,
            pipeline=PipelineConfig(**pipeline) if pipeline else None,
        )
        return cls(
            game=game,
            player=player,
            seeds=list(payload["seeds"]),
            repetitions=payload.get("repetitions", 0),
        )

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def playout_speedup(t_seq_ns: float, t_par_ns: float,
                    budget_seq: int, budget_par: int) -> float:
    """Wall-clock ratio sequential/parallel at equal iteration budgets."""
    if budget_seq != budget_par:
        raise ValueError(
            f"speedup needs equal budgets, got {budget_seq} vs {budget_par}"
        )
    if t_seq_ns <= 0 or t_par_ns <= 0:
        raise ValueError("wall times must be positive")
    return t_seq_ns / t_par_ns


def run_experiment(spec: ExperimentSpec, baseline: bool = True) -> list:
    """One row dict per seed; pipeline rows carry speedup vs. a sequential
    twin run on the same seed (sequential rows report 1.0)."""
    rows = []
    player = spec.player
    state = spec.game.build_state()
    for seed in spec.seeds:
        result, stats = player.search(state, seed)
        row = {
            "game": spec.game.label(),
            "engine": player.engine,
            "lanes": player.pipeline.playout_lanes if player.pipeline else 1,
            "in_flight": player.pipeline.in_flight_limit if player.pipeline else 1,
            "staleness": player.pipeline.staleness_policy if player.pipeline else "",
            "budget": player.budget,
            "cp": player.cp,
            "seed": seed,
            "wall_ns": result.elapsed_ns,
            "best_action": result.best_action,
            "root_n": result.root_n,
            "tree_size": result.tree_size,
            "speedup": 1.0,
        }
        if player.engine == ENGINE_PIPELINE and baseline:
            twin = run_sequential(
                state, UctParams(budget=player.budget, cp=player.cp, seed=seed)
            )
            row["speedup"] = playout_speedup(
                twin.elapsed_ns, result.elapsed_ns, player.budget, player.budget
            )
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# strength matches
# ---------------------------------------------------------------------------

@dataclass
class MatchReport:
    """Head-to-head outcome for side A, draws counted half a win."""

    games: int
    wins: int
    draws: int
    losses: int
    seat_balanced: bool
    win_rate: float
    ci95: float
    avg_plies: float = 0.0

    def to_json(self) -> dict:
        return {
            "games": self.games,
            "wins": self.wins,
            "draws": self.draws,
            "losses": self.losses,
            "seat_balanced": self.seat_balanced,
            "win_rate": self.win_rate,
            "ci95": self.ci95,
            "avg_plies": self.avg_plies,
        }


def play_game(game: GameSpec, first: PlayerSpec, second: PlayerSpec,
              game_seed: int):
    """Play one full game; returns ``(winner player id or None, plies)``.

    Move seeds derive from ``(game_seed, ply)`` only, so identical players
    replay identically regardless of which side they are labelled.
    """
    state = game.build_state()
    ply = 0
    while not state.is_terminal():
        mover = first if state.player == 0 else second
        action = mover.choose(state, _move_seed(game_seed, ply))
        state = state.apply(action)
        ply += 1
    reward_first = state.terminal_reward(0)
    if reward_first > 0.5:
        return 0, ply
    if reward_first < 0.5:
        return 1, ply
    return None, ply


def strength_match(game: GameSpec, player_a: PlayerSpec, player_b: PlayerSpec,
                   games: int, seeds: list) -> MatchReport:
    """Seat-balanced match: A moves first in even-indexed games."""
    if games % 2 != 0:
        raise ValueError("games must be even for seat balancing")
    if len(seeds) != games:
        raise ValueError("need one seed per game")
    wins = draws = losses = 0
    total_plies = 0
    for g in range(games):
        a_first = g % 2 == 0
        first, second = (player_a, player_b) if a_first else (player_b, player_a)
        winner, plies = play_game(game, first, second, seeds[g])
        total_plies += plies
        if winner is None:
            draws += 1
        elif (winner == 0) == a_first:
            wins += 1
        else:
            losses += 1
    win_rate = (wins + 0.5 * draws) / games
    ci95 = 1.96 * math.sqrt(max(win_rate * (1.0 - win_rate), 0.0) / games)
    return MatchReport(
        games=games, wins=wins, draws=draws, losses=losses,
        seat_balanced=True, win_rate=win_rate, ci95=ci95,
        avg_plies=total_plies / games,
    )


def _move_seed(game_seed: int, ply: int) -> int:
    return int(stream_state(_u64(game_seed), _u64(ply), _u64(TAG_MATCH))) & MASK64


# ---------------------------------------------------------------------------
# search overhead
# ---------------------------------------------------------------------------

@dataclass
class OverheadReport:
    """Parallel-search overhead proxies vs. the sequential baseline.

    ``duplicate_trajectory_fraction``: share of iterations whose selected
    path equaled that of another iteration still in flight (stale statistics
    steering concurrent selections into the same region).
    ``root_policy_distance``: L1 distance between normalized root visit
    distributions at equal budget. Both are proxies, not direct measures.
    """

    duplicate_trajectory_fraction: float
    root_policy_distance: float
    stage_idle_ns: dict
    per_seed: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "duplicate_trajectory_fraction": self.duplicate_trajectory_fraction,
            "root_policy_distance": self.root_policy_distance,
            "stage_idle_ns": dict(self.stage_idle_ns),
            "per_seed": list(self.per_seed),
        }


def root_policy_distance(a: SearchResult, b: SearchResult) -> float:
    """L1 distance between the two normalized root visit distributions."""
    dist_a = {c.action: c.n for c in a.children}
    dist_b = {c.action: c.n for c in b.children}
    total_a = sum(dist_a.values()) or 1
    total_b = sum(dist_b.values()) or 1
    actions = set(dist_a) | set(dist_b)
    return sum(
        abs(dist_a.get(x, 0) / total_a - dist_b.get(x, 0) / total_b)
        for x in actions
    )


def search_overhead(game: GameSpec, pipeline_player: PlayerSpec,
                    seeds: list) -> OverheadReport:
    """Run pipeline and sequential on identical seeds and compare."""
    if pipeline_player.engine != ENGINE_PIPELINE:
        raise ValueError("search_overhead expects a pipeline player")
    state = game.build_state()
    budget, cp = pipeline_player.budget, pipeline_player.cp
    per_seed = []
    idle_totals: dict = {}
    for seed in seeds:
        par, stats = pipeline_player.search(state, seed)
        seq = run_sequential(state, UctParams(budget=budget, cp=cp, seed=seed))
        frac = stats.duplicates / budget
        dist = root_policy_distance(par, seq)
        per_seed.append({"seed": seed, "duplicate_fraction": frac,
                         "root_policy_distance": dist})
        for name, counters in stats.stages.items():
            idle_totals[name] = idle_totals.get(name, 0) + counters.wait_ns
    count = len(seeds)
    return OverheadReport(
        duplicate_trajectory_fraction=(
            sum(p["duplicate_fraction"] for p in per_seed) / count
        ),
        root_policy_distance=(
            sum(p["root_policy_distance"] for p in per_seed) / count
        ),
        stage_idle_ns={k: v // count for k, v in idle_totals.items()},
        per_seed=per_seed,
    )


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def canonical_json(payload) -> bytes:
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()


def build_report(rows: list, extra: Optional[dict] = None) -> dict:
    """Split rows into hashed deterministic content and unhashed timing."""
    deterministic = {
        "rows": [
            {k: v for k, v in row.items() if k not in ("wall_ns", "speedup")}
            for row in rows
        ],
    }
    if extra:
        deterministic.update(extra)
    walls = [row["wall_ns"] for row in rows] or [0]
    timing = {
        "wall_ns_median": int(statistics.median(walls)),
        "wall_ns_min": min(walls),
        "wall_ns_max": max(walls),
        "speedup_median": statistics.median(row["speedup"] for row in rows)
        if rows else 1.0,
        "generated_unix_ns": time.time_ns(),
    }
    return {
        "deterministic": deterministic,
        "timing": timing,
        "hash_sha256": hashlib.sha256(canonical_json(deterministic)).hexdigest(),
    }
