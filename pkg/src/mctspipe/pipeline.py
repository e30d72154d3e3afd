"""Stage-pipelined MCTS engine.

The four search operations run as pipeline stages connected by bounded
blocking buffers: Select -> Expand -> Playout -> Backup. Select, Expand and
Backup are serial stages (one worker each, items in arrival order); Playout
is a parallel stage with ``playout_lanes`` workers that may deliver results
out of order. Each stage only consumes tokens whose previous phase is
complete, which preserves the per-iteration operation ordering; across
iterations the tree statistics a Select reads may be stale by up to
``in_flight_limit`` pending backups - that staleness is the price of overlap
and is bounded by the in-flight token cap.

Tree access contract: Expand is the only structural writer, Backup the only
statistics writer, Select a (possibly marking) reader. All three go through
one short mutex so reads are never torn; Playout touches no shared state and
runs lock-free on state copied into the token at expansion time, which is
where the wall-clock parallelism comes from (the playout kernels release the
GIL under the numba backend).

A token whose selection stops at a terminal node skips Expand and Playout:
its exact terminal value backs up directly (recorded as skips in the stage
stats). When concurrent expansions exhaust a stop node's untried actions
before its token reaches Expand, the Expand stage continues the UCT descent
from that node and expands deeper (a "collision"); with ``in_flight_limit=1``
neither case deviates from the sequential schedule and the engine reproduces
`run_sequential` bit for bit.

One search per engine instance at a time; ``run`` is not reentrant.
"""

from __future__ import annotations

import csv
import queue
import threading
import time
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

import numpy as np

from . import _kernels as K
from .games import GameState
from .rng import TAG_EXPAND, TAG_EXTEND, TAG_PLAYOUT, _u64, stream_state
from .tree import SearchResult, SearchTree, Trajectory, UctParams

STALENESS_PLAIN = "plain"
STALENESS_VISIT_MARK = "visit_mark"

ROUTE_EXPAND = "expand"
ROUTE_PLAYOUT = "playout"
ROUTE_BACKUP = "backup"

_SENTINEL = object()


class PipelineError(RuntimeError):
    """Base class for engine failures."""


class PipelineInvariantError(PipelineError):
    """A token/tree invariant was violated (lost token, bad counts, ...)."""


class PhaseOrderError(PipelineInvariantError):
    """A stage observed a token out of phase order."""


class PipelineStuckError(PipelineError):
    """Drain timed out; carries per-buffer occupancy for diagnosis."""


class Phase(IntEnum):
    NEW = 0
    SELECTED = 1
    EXPANDED = 2
    PLAYED = 3
    BACKED = 4


@dataclass
class PipelineConfig:
    """Stage topology and flow control.

    ``buffer_capacity`` defaults to ``2 * playout_lanes`` - small enough to
    bound staleness, large enough to keep the lanes fed. ``seed`` (when set)
    overrides the search params' seed for stream derivation. ``stage_costs``
    attaches calibrated busy-work units to stages, used to shape stage
    durations in scheduling experiments.
    """

    playout_lanes: int = 1
    buffer_capacity: Optional[int] = None
    in_flight_limit: int = 4
    staleness_policy: str = STALENESS_PLAIN
    seed: Optional[int] = None
    stage_costs: Optional[dict] = None
    drain_timeout_s: float = 120.0
    record_events: bool = True

    def __post_init__(self):
        if self.playout_lanes < 1:
            raise ValueError("playout_lanes must be >= 1")
        if self.buffer_capacity is None:
            self.buffer_capacity = 2 * self.playout_lanes
        if self.buffer_capacity < 1:
            raise ValueError("buffer_capacity must be >= 1")
        if self.in_flight_limit < 1:
            raise ValueError("in_flight_limit must be >= 1")
        if self.staleness_policy not in (STALENESS_PLAIN, STALENESS_VISIT_MARK):
            raise ValueError(f"unknown staleness_policy {self.staleness_policy!r}")
        if self.stage_costs:
            unknown = set(self.stage_costs) - {"select", "expand", "playout", "backup"}
            if unknown:
                raise ValueError(f"unknown stages in stage_costs: {sorted(unknown)}")

    def to_json(self) -> dict:
        return {
            "playout_lanes": self.playout_lanes,
            "buffer_capacity": self.buffer_capacity,
            "in_flight_limit": self.in_flight_limit,
            "staleness_policy": self.staleness_policy,
            "seed": self.seed,
        }


@dataclass
class TrajectoryToken:
    """One iteration's unit of work flowing through the stages."""

    iteration: int
    trajectory: Trajectory
    phase: Phase = Phase.NEW
    lane: Optional[int] = None
    marked_len: int = 0
    select_clock: int = 0
    duplicate: bool = False
    leaf_args: tuple = ()
    sig: tuple = ()

    def advance(self, new_phase: Phase) -> None:
        if new_phase <= self.phase:
            raise PhaseOrderError(
                f"token {self.iteration}: phase {self.phase.name} -> {new_phase.name}"
            )
        self.phase = new_phase

    def require(self, phase: Phase) -> None:
        if self.phase != phase:
            raise PhaseOrderError(
                f"token {self.iteration}: expected {phase.name}, got {self.phase.name}"
            )


@dataclass
class StageCounters:
    name: str
    items: int = 0
    skips: int = 0
    busy_ns: int = 0
    wait_ns: int = 0
    lane_items: list = field(default_factory=list)

    def to_json(self) -> dict:
        out = {
            "items": self.items,
            "skips": self.skips,
            "busy_ns": self.busy_ns,
            "wait_ns": self.wait_ns,
        }
        if self.lane_items:
            out["lane_items"] = list(self.lane_items)
        return out


@dataclass
class StageStats:
    """Per-stage counters plus the token audit trail of one run."""

    stages: dict = field(default_factory=dict)
    tokens_created: int = 0
    tokens_backed: int = 0
    collisions: int = 0
    duplicates: int = 0
    max_staleness: int = 0
    busy_checksum: int = 0
    events: list = field(default_factory=list)
    token_log: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "stages": {name: c.to_json() for name, c in self.stages.items()},
            "tokens_created": self.tokens_created,
            "tokens_backed": self.tokens_backed,
            "collisions": self.collisions,
            "duplicates": self.duplicates,
            "max_staleness": self.max_staleness,
            "busy_checksum": self.busy_checksum,
        }

    def token_log_json(self) -> list:
        """Per-token audit trail in backup (arrival) order."""
        return [
            {
                "iteration": iteration,
                "path": list(sig),
                "duplicate": duplicate,
                "delta": delta,
            }
            for iteration, sig, duplicate, delta in self.token_log
        ]

    def events_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["token", "stage", "lane", "start_ns", "end_ns"])
            for token, stage, lane, start, end in self.events:
                writer.writerow([token, stage, "" if lane is None else lane, start, end])


class PipelineEngine:
    """Runs one search as a four-stage pipeline over a shared tree."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.stats: StageStats = StageStats()
        self.tree: Optional[SearchTree] = None
        self._running = False
        self._started = False

    # ------------------------------------------------------------------
    # lifecycle
    # ------------------------------------------------------------------

    def begin(self, root_state: GameState, params: UctParams) -> None:
        """Set up tree, buffers and counters; no workers started yet.

        Exposed so tests can drive the stage operations synchronously.
        """
        cfg = self.config
        self.params = params
        self.tree = SearchTree(root_state, params)
        self._game_args = self.tree.code.kernel_args()
        self._cp = float(params.cp)
        seed = params.seed if cfg.seed is None else cfg.seed
        self._seed = _u64(seed)
        self._visit_mark = cfg.staleness_policy == STALENESS_VISIT_MARK
        self._tree_lock = threading.Lock()
        self._inflight = threading.Semaphore(cfg.in_flight_limit)
        self._q_expand = queue.Queue(cfg.buffer_capacity)
        self._q_playout = queue.Queue(cfg.buffer_capacity)
        self._q_backup = queue.Queue(cfg.buffer_capacity)
        self._backed = 0
        self._inflight_sigs: dict = {}
        self._select_buf = self.tree.new_path_buffer()
        self._extend_buf = self.tree.new_path_buffer()
        self._lane_checksums = [0] * cfg.playout_lanes
        self._abort = threading.Event()
        self._errors: list = []
        self.stats = StageStats(
            stages={
                "select": StageCounters("select"),
                "expand": StageCounters("expand"),
                "playout": StageCounters(
                    "playout", lane_items=[0] * cfg.playout_lanes
                ),
                "backup": StageCounters("backup"),
            }
        )
        self._started = True

    def make_token(self, iteration: int) -> TrajectoryToken:
        self.stats.tokens_created += 1
        return TrajectoryToken(
            iteration=iteration,
            trajectory=Trajectory(path=[], iteration_index=iteration),
        )

    def run(self, root_state: GameState, params: UctParams):
        """Inject, process and drain exactly ``params.budget`` tokens.

        Returns ``(SearchResult, StageStats)``.
        """
        if self._running:
            raise PipelineError("engine is not reentrant: one search at a time")
        self._running = True
        try:
            t0 = time.perf_counter_ns()
            self.begin(root_state, params)
            workers = [
                threading.Thread(target=self._select_worker, name="select", daemon=True),
                threading.Thread(target=self._expand_worker, name="expand", daemon=True),
                threading.Thread(target=self._backup_worker, name="backup", daemon=True),
            ]
            workers += [
                threading.Thread(
                    target=self._playout_worker, args=(lane,),
                    name=f"playout-{lane}", daemon=True,
                )
                for lane in range(self.config.playout_lanes)
            ]
            for worker in workers:
                worker.start()
            self.drain(workers)
            elapsed = time.perf_counter_ns() - t0
            return self.finalize(elapsed)
        finally:
            self._running = False

    def drain(self, workers, timeout: Optional[float] = None) -> None:
        """Block until every injected token is backed and workers stopped."""
        deadline = time.monotonic() + (timeout or self.config.drain_timeout_s)
        for worker in workers:
            worker.join(max(0.0, deadline - time.monotonic()))
        alive = [w.name for w in workers if w.is_alive()]
        if alive:
            self._abort.set()
            raise PipelineStuckError(
                "pipeline stuck; live workers: "
                f"{alive}; buffer occupancy: {self.buffer_occupancy()}; "
                f"backed {self._backed}/{self.params.budget}"
            )
        if self._errors:
            stage, exc = self._errors[0]
            raise PipelineError(f"stage {stage!r} failed: {exc!r}") from exc

    def buffer_occupancy(self) -> dict:
        return {
            "expand": self._q_expand.qsize(),
            "playout": self._q_playout.qsize(),
            "backup": self._q_backup.qsize(),
        }

    def finalize(self, elapsed_ns: int = 0, audit: bool = True):
        """Audit conservation and tree invariants; build the result."""
        stats = self.stats
        stats.busy_checksum = 0
        for chk in self._lane_checksums:
            stats.busy_checksum ^= chk
        budget = self.params.budget
        if audit:
            occupancy = self.buffer_occupancy()
            if any(occupancy.values()):
                raise PipelineInvariantError(f"buffers not empty after drain: {occupancy}")
            if stats.tokens_created != budget or stats.tokens_backed != budget:
                raise PipelineInvariantError(
                    f"token conservation violated: created={stats.tokens_created} "
                    f"backed={stats.tokens_backed} budget={budget}"
                )
            for name in ("select", "backup"):
                counters = stats.stages[name]
                if counters.items != budget:
                    raise PipelineInvariantError(
                        f"{name} stage processed {counters.items} != budget {budget}"
                    )
            for name in ("expand", "playout"):
                counters = stats.stages[name]
                if counters.items + counters.skips != budget:
                    raise PipelineInvariantError(
                        f"{name} items+skips = {counters.items}+{counters.skips}"
                        f" != budget {budget}"
                    )
            if self._inflight_sigs:
                raise PipelineInvariantError("in-flight signatures left after drain")
            self.tree.check_invariants(budget=budget)
        result = SearchResult.from_tree(self.tree, elapsed_ns)
        return result, stats

    # ------------------------------------------------------------------
    # stage operations (synchronous; workers call these)
    # ------------------------------------------------------------------

    def select_stage(self, token: TrajectoryToken) -> str:
        """Walk the tree for one token; fast-paths terminal stops to Backup."""
        token.require(Phase.NEW)
        self._stage_cost("select")
        arrays = self.tree.arrays
        with self._tree_lock:
            plen = K.select_walk(*arrays, 0, self._cp,
                                 0 if self._visit_mark else -1, self._select_buf)
            path = [int(self._select_buf[i]) for i in range(plen)]
            token.trajectory.path = path
            token.marked_len = plen if self._visit_mark else 0
            token.select_clock = self._backed
            sig = tuple(path)
            token.sig = sig
            if self._inflight_sigs.get(sig, 0) > 0:
                token.duplicate = True
                self.stats.duplicates += 1
            self._inflight_sigs[sig] = self._inflight_sigs.get(sig, 0) + 1
        staleness = token.iteration - token.select_clock
        if staleness > self.config.in_flight_limit:
            raise PipelineInvariantError(
                f"token {token.iteration} selected on statistics "
                f"{staleness} backups behind (limit {self.config.in_flight_limit})"
            )
        if staleness > self.stats.max_staleness:
            self.stats.max_staleness = staleness
        self.stats.stages["select"].items += 1
        stop = path[-1]
        if arrays[4][stop]:
            token.trajectory.delta = self._terminal_delta(stop)
            token.advance(Phase.SELECTED)
            token.advance(Phase.PLAYED)
            self.stats.stages["expand"].skips += 1
            self.stats.stages["playout"].skips += 1
            return ROUTE_BACKUP
        token.advance(Phase.SELECTED)
        return ROUTE_EXPAND

    def expand_stage(self, token: TrajectoryToken) -> str:
        """Create the token's new leaf; resolves stale-stop collisions by
        continuing the descent."""
        token.require(Phase.SELECTED)
        self._stage_cost("expand")
        arrays = self.tree.arrays
        terminal, untried = arrays[4], arrays[12]
        code = self.tree.code
        with self._tree_lock:
            stop = token.trajectory.path[-1]
            if untried[stop] == 0 and not terminal[stop]:
                self.stats.collisions += 1
                xstream = _u64(stream_state(self._seed, token.iteration, TAG_EXTEND))
                plen, _ = K.extend_walk(*arrays, stop, self._cp,
                                        1 if self._visit_mark else -1,
                                        xstream, self._extend_buf)
                extension = [int(self._extend_buf[i]) for i in range(1, plen)]
                token.trajectory.path.extend(extension)
                if self._visit_mark:
                    token.marked_len += len(extension)
                stop = token.trajectory.path[-1]
            if terminal[stop]:
                token.trajectory.delta = self._terminal_delta(stop)
                token.advance(Phase.EXPANDED)
                token.advance(Phase.PLAYED)
                self.stats.stages["expand"].items += 1
                self.stats.stages["playout"].skips += 1
                return ROUTE_BACKUP
            estream = _u64(stream_state(self._seed, token.iteration, TAG_EXPAND))
            cid, _ = K.expand_node(*arrays, stop, estream,
                                   code.game_id, code.branching, code.depth_limit)
            cid = int(cid)
            token.trajectory.path.append(cid)
            token.leaf_args = (arrays[5][cid], arrays[6][cid],
                               arrays[2][cid], arrays[3][cid])
        token.advance(Phase.EXPANDED)
        self.stats.stages["expand"].items += 1
        return ROUTE_PLAYOUT

    def playout_stage(self, token: TrajectoryToken, lane: int) -> str:
        """Run the token's playout on ``lane``; lock-free and out-of-order."""
        token.require(Phase.EXPANDED)
        self._stage_cost("playout")
        pstream = _u64(stream_state(self._seed, token.iteration, TAG_PLAYOUT))
        s0v, s1v, tmv, pv = token.leaf_args
        delta, chk, _ = K.playout_value(s0v, s1v, tmv, pv, *self._game_args, pstream)
        token.trajectory.delta = float(delta)
        token.lane = lane
        self._lane_checksums[lane] ^= int(chk)
        token.advance(Phase.PLAYED)
        counters = self.stats.stages["playout"]
        counters.items += 1
        counters.lane_items[lane] += 1
        return ROUTE_BACKUP

    def backup_stage(self, token: TrajectoryToken) -> None:
        """Commit the token's reward along its path and retire it."""
        token.require(Phase.PLAYED)
        self._stage_cost("backup")
        path = np.asarray(token.trajectory.path, np.int32)
        with self._tree_lock:
            K.backup_path(*self.tree.arrays, path, len(path),
                          float(token.trajectory.delta), token.marked_len)
            self._backed += 1
            count = self._inflight_sigs.get(token.sig, 0) - 1
            if count > 0:
                self._inflight_sigs[token.sig] = count
            else:
                self._inflight_sigs.pop(token.sig, None)
        token.advance(Phase.BACKED)
        self.stats.tokens_backed += 1
        self.stats.stages["backup"].items += 1
        if self.config.record_events:
            self.stats.token_log.append(
                (token.iteration, token.sig, token.duplicate,
                 float(token.trajectory.delta))
            )
        self._inflight.release()

    # ------------------------------------------------------------------
    # workers
    # ------------------------------------------------------------------

    def _select_worker(self) -> None:
        try:
            for it in range(self.params.budget):
                self._acquire_inflight()
                token = self.make_token(it)
                route = self._timed("select", None, self.select_stage, token)
                if route == ROUTE_BACKUP:
                    self._put(self._q_backup, token, "select")
                else:
                    self._put(self._q_expand, token, "select")
            self._put(self._q_expand, _SENTINEL, "select")
        except _Aborted:
            pass
        except BaseException as exc:  # noqa: BLE001 - reported via drain
            self._fail("select", exc)

    def _expand_worker(self) -> None:
        try:
            while True:
                token = self._get(self._q_expand, "expand")
                if token is _SENTINEL:
                    for _ in range(self.config.playout_lanes):
                        self._put(self._q_playout, _SENTINEL, "expand")
                    return
                route = self._timed("expand", None, self.expand_stage, token)
                if route == ROUTE_BACKUP:
                    self._put(self._q_backup, token, "expand")
                else:
                    self._put(self._q_playout, token, "expand")
        except _Aborted:
            pass
        except BaseException as exc:  # noqa: BLE001
            self._fail("expand", exc)

    def _playout_worker(self, lane: int) -> None:
        try:
            while True:
                token = self._get(self._q_playout, "playout")
                if token is _SENTINEL:
                    return
                self._timed("playout", lane, self.playout_stage, token, lane)
                self._put(self._q_backup, token, "playout")
        except _Aborted:
            pass
        except BaseException as exc:  # noqa: BLE001
            self._fail("playout", exc)

    def _backup_worker(self) -> None:
        try:
            while self._backed < self.params.budget:
                token = self._get(self._q_backup, "backup")
                if token is _SENTINEL:
                    continue
                self._timed("backup", None, self.backup_stage, token)
        except _Aborted:
            pass
        except BaseException as exc:  # noqa: BLE001
            self._fail("backup", exc)

    # ------------------------------------------------------------------
    # plumbing
    # ------------------------------------------------------------------

    def _timed(self, stage: str, lane, fn, *args):
        t0 = time.perf_counter_ns()
        out = fn(*args)
        t1 = time.perf_counter_ns()
        self.stats.stages[stage].busy_ns += t1 - t0
        if self.config.record_events:
            token = args[0]
            self.stats.events.append((token.iteration, stage, lane, t0, t1))
        return out

    def _stage_cost(self, stage: str) -> None:
        costs = self.config.stage_costs
        if costs:
            units = costs.get(stage, 0)
            if units > 0:
                from .rng import spin

                spin(units, self._seed)

    def _terminal_delta(self, node: int) -> float:
        arrays = self.tree.arrays
        return float(K.terminal_value(
            arrays[5][node], arrays[6][node],
            self.tree.code.game_id, self._game_args[5], arrays[3][node],
        ))

    def _fail(self, stage: str, exc: BaseException) -> None:
        self._errors.append((stage, exc))
        self._abort.set()

    def _acquire_inflight(self) -> None:
        t0 = time.perf_counter_ns()
        while not self._inflight.acquire(timeout=0.05):
            if self._abort.is_set():
                raise _Aborted()
        self.stats.stages["select"].wait_ns += time.perf_counter_ns() - t0

    def _put(self, q: queue.Queue, item, stage: str) -> None:
        t0 = time.perf_counter_ns()
        while True:
            try:
                q.put(item, timeout=0.05)
                break
            except queue.Full:
                if self._abort.is_set():
                    raise _Aborted() from None
        self.stats.stages[stage].wait_ns += time.perf_counter_ns() - t0

    def _get(self, q: queue.Queue, stage: str):
        t0 = time.perf_counter_ns()
        while True:
            try:
                item = q.get(timeout=0.05)
                break
            except queue.Empty:
                if self._abort.is_set():
                    raise _Aborted() from None
        self.stats.stages[stage].wait_ns += time.perf_counter_ns() - t0
        return item


class _Aborted(Exception):
    """Internal: a worker observed the abort flag while blocked."""


def run_pipeline(root_state: GameState, params: UctParams,
                 config: PipelineConfig):
    """Run one pipelined search; returns ``(SearchResult, StageStats)``."""
    return PipelineEngine(config).run(root_state, params)
