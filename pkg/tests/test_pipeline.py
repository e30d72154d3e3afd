import os
import random
import time

import numpy as np
import pytest

from mctspipe.games import EMPTY, SyntheticParams, SyntheticState, TicTacToeState
from mctspipe.pipeline import (
    Phase,
    PhaseOrderError,
    PipelineConfig,
    PipelineEngine,
    PipelineStuckError,
    run_pipeline,
)
from mctspipe.tree import UctParams, run_sequential

N_COL = 7

GAMES = {
    "tictactoe": TicTacToeState(),
    "synthetic": SyntheticState(params=SyntheticParams(branching=4, depth=8, seed=3)),
}


def drive_token(engine, iteration, lane=0):
    """Push one token through the stages synchronously; returns the token."""
    token = engine.make_token(iteration)
    route = engine.select_stage(token)
    if route == "expand":
        route = engine.expand_stage(token)
    if route == "playout":
        engine.playout_stage(token, lane)
    engine.backup_stage(token)
    return token


class TestDegeneration:
    @pytest.mark.parametrize("game", sorted(GAMES))
    @pytest.mark.parametrize("policy", ["plain", "visit_mark"])
    def test_single_token_pipeline_equals_sequential(self, game, policy):
        for seed in range(10):
            params = UctParams(budget=300, seed=seed)
            seq = run_sequential(GAMES[game], params)
            config = PipelineConfig(playout_lanes=1, in_flight_limit=1,
                                    staleness_policy=policy)
            par, stats = run_pipeline(GAMES[game], params, config)
            assert par.search_fields() == seq.search_fields()
            for mine, ref in zip(par.tree.arrays, seq.tree.arrays):
                assert np.array_equal(mine, ref)
            assert stats.duplicates == 0
            assert stats.collisions == 0
            assert stats.max_staleness == 0


class TestConservation:
    @pytest.mark.parametrize("lanes", [1, 2, 4])
    @pytest.mark.parametrize("in_flight", [1, 4, 8])
    def test_token_and_visit_conservation(self, lanes, in_flight):
        params = UctParams(budget=500, seed=13)
        config = PipelineConfig(playout_lanes=lanes, in_flight_limit=in_flight)
        result, stats = run_pipeline(GAMES["tictactoe"], params, config)
        assert result.root_n == 500
        assert stats.tokens_created == 500
        assert stats.tokens_backed == 500
        assert stats.stages["select"].items == 500
        assert stats.stages["backup"].items == 500
        assert stats.stages["expand"].items + stats.stages["expand"].skips == 500
        assert stats.stages["playout"].items + stats.stages["playout"].skips == 500
        result.tree.check_invariants(budget=500)

    @pytest.mark.parametrize("policy", ["plain", "visit_mark"])
    def test_tree_invariants_under_staleness_policies(self, policy):
        for game in GAMES.values():
            params = UctParams(budget=800, seed=2)
            config = PipelineConfig(playout_lanes=4, in_flight_limit=8,
                                    staleness_policy=policy)
            result, stats = run_pipeline(game, params, config)
            result.tree.check_invariants(budget=800)
            assert stats.max_staleness <= 8

    def test_all_lanes_used_under_load(self):
        params = UctParams(budget=1000, seed=4)
        state = SyntheticState(params=SyntheticParams(
            branching=4, depth=8, playout_cost=2000, seed=1))
        config = PipelineConfig(playout_lanes=4, in_flight_limit=8)
        result, stats = run_pipeline(state, params, config)
        assert result.root_n == 1000
        assert all(items > 0 for items in stats.stages["playout"].lane_items)
        assert sum(stats.stages["playout"].lane_items) == stats.stages["playout"].items

    def test_near_terminal_root_fastpaths(self):
        board = (0, 0, 1, 1, EMPTY, 0, 1, 0, 1)
        state = TicTacToeState(board=board, to_move=0)
        params = UctParams(budget=100, seed=0)
        config = PipelineConfig(playout_lanes=2, in_flight_limit=4)
        result, stats = run_pipeline(state, params, config)
        assert result.root_n == 100
        assert stats.stages["expand"].skips + stats.stages["playout"].skips > 0
        result.tree.check_invariants(budget=100)


class TestPhaseContract:
    def test_wrong_phase_rejected_everywhere(self):
        engine = PipelineEngine(PipelineConfig())
        engine.begin(TicTacToeState(), UctParams(budget=4, seed=0))
        token = engine.make_token(0)
        with pytest.raises(PhaseOrderError):
            engine.backup_stage(token)
        with pytest.raises(PhaseOrderError):
            engine.expand_stage(token)
        with pytest.raises(PhaseOrderError):
            engine.playout_stage(token, 0)
        engine.select_stage(token)
        with pytest.raises(PhaseOrderError):
            engine.select_stage(token)
        engine.expand_stage(token)
        with pytest.raises(PhaseOrderError):
            engine.backup_stage(token)
        engine.playout_stage(token, 0)
        engine.backup_stage(token)
        assert token.phase == Phase.BACKED

    def test_phase_never_regresses(self):
        engine = PipelineEngine(PipelineConfig())
        engine.begin(TicTacToeState(), UctParams(budget=2, seed=0))
        token = drive_token(engine, 0)
        with pytest.raises(PhaseOrderError):
            token.advance(Phase.SELECTED)


class TestVisitMark:
    def test_marks_applied_then_settled(self):
        config = PipelineConfig(staleness_policy="visit_mark", in_flight_limit=4)
        engine = PipelineEngine(config)
        engine.begin(TicTacToeState(), UctParams(budget=4, seed=0))
        n = engine.tree.arrays[N_COL]
        token = engine.make_token(0)
        engine.select_stage(token)
        assert token.marked_len == 1
        assert n[0] == 1  # provisional mark on the root
        engine.expand_stage(token)
        cid = token.trajectory.path[-1]
        assert n[cid] == 0  # the new leaf carries no mark
        engine.playout_stage(token, 0)
        engine.backup_stage(token)
        assert n[0] == 1  # settled, not double-counted
        assert n[cid] == 1

    def test_totals_equal_plain_policy(self):
        params = UctParams(budget=400, seed=9)
        plain, _ = run_pipeline(GAMES["tictactoe"], params,
                                PipelineConfig(in_flight_limit=1))
        marked, _ = run_pipeline(GAMES["tictactoe"], params,
                                 PipelineConfig(in_flight_limit=1,
                                                staleness_policy="visit_mark"))
        assert plain.search_fields() == marked.search_fields()

    def test_marks_diversify_concurrent_selection(self):
        # two concurrent selects from a fresh, fully-expanded level: under
        # plain both follow the same stale argmax; with marks the second
        # avoids the first's provisional visit
        def two_selects(policy):
            engine = PipelineEngine(PipelineConfig(
                staleness_policy=policy, in_flight_limit=4, playout_lanes=2))
            engine.begin(GAMES["synthetic"], UctParams(budget=64, cp=1.0, seed=3))
            for it in range(4):  # expand all four root children
                drive_token(engine, it)
            t_a = engine.make_token(4)
            t_b = engine.make_token(5)
            engine.select_stage(t_a)
            engine.select_stage(t_b)
            return t_a.trajectory.path[1], t_b.trajectory.path[1]

        a_plain, b_plain = two_selects("plain")
        assert a_plain == b_plain
        a_mark, b_mark = two_selects("visit_mark")
        assert a_mark != b_mark


class TestDuplicatesAndCollisions:
    def test_identical_stale_selections_counted(self):
        engine = PipelineEngine(PipelineConfig(in_flight_limit=8, playout_lanes=2))
        engine.begin(TicTacToeState(), UctParams(budget=8, cp=0.0, seed=0))
        tokens = [engine.make_token(i) for i in range(3)]
        for token in tokens:
            engine.select_stage(token)
        # all three stopped at the bare root: two duplicates of the first
        assert [t.sig for t in tokens] == [(0,), (0,), (0,)]
        assert engine.stats.duplicates == 2
        assert tokens[0].duplicate is False
        assert tokens[1].duplicate and tokens[2].duplicate

    def test_exhausted_stop_node_extends_descent(self):
        params = SyntheticParams(branching=1, depth=4)
        engine = PipelineEngine(PipelineConfig(in_flight_limit=4))
        engine.begin(SyntheticState(params=params), UctParams(budget=2, seed=0))
        t_a = engine.make_token(0)
        t_b = engine.make_token(1)
        engine.select_stage(t_a)
        engine.select_stage(t_b)
        assert t_a.trajectory.path == [0]
        assert t_b.trajectory.path == [0]
        engine.expand_stage(t_a)  # consumes the root's only action
        engine.expand_stage(t_b)  # must walk past the root and expand deeper
        assert engine.stats.collisions == 1
        assert len(t_b.trajectory.path) == 3
        assert t_b.trajectory.path[1] == t_a.trajectory.path[1]
        for token in (t_a, t_b):
            engine.playout_stage(token, 0)
            engine.backup_stage(token)
        result, stats = engine.finalize()
        assert result.root_n == 2
        result.tree.check_invariants(budget=2)

    def test_collision_reaching_terminal_fast_paths(self):
        board = (0, 0, 1, 1, EMPTY, 0, 1, 0, 1)  # one free cell
        state = TicTacToeState(board=board, to_move=0)
        engine = PipelineEngine(PipelineConfig(in_flight_limit=4))
        engine.begin(state, UctParams(budget=2, seed=0))
        t_a = engine.make_token(0)
        t_b = engine.make_token(1)
        engine.select_stage(t_a)
        engine.select_stage(t_b)
        engine.expand_stage(t_a)
        route = engine.expand_stage(t_b)  # extension lands on the terminal leaf
        assert route == "backup"
        assert t_b.phase == Phase.PLAYED
        assert t_b.trajectory.delta == 1.0  # completing the line wins for X
        engine.playout_stage(t_a, 0)
        for token in (t_a, t_b):
            engine.backup_stage(token)
        result, _ = engine.finalize()
        result.tree.check_invariants(budget=2)


class TestOrderIndependence:
    @pytest.mark.parametrize("game", sorted(GAMES))
    def test_backup_order_does_not_change_totals(self, game):
        def run_permuted(perm_seed):
            engine = PipelineEngine(PipelineConfig(
                playout_lanes=1, in_flight_limit=8, buffer_capacity=8))
            engine.begin(GAMES[game], UctParams(budget=64, seed=5))
            rnd = random.Random(perm_seed)
            iteration = 0
            while iteration < 64:
                batch = []
                for _ in range(min(8, 64 - iteration)):
                    token = engine.make_token(iteration)
                    iteration += 1
                    route = engine.select_stage(token)
                    if route == "expand":
                        route = engine.expand_stage(token)
                    if route == "playout":
                        engine.playout_stage(token, 0)
                    batch.append(token)
                rnd.shuffle(batch)  # adversarial completion order
                for token in batch:
                    engine.backup_stage(token)
            result, _ = engine.finalize()
            return result

        reference = run_permuted(0)
        for perm_seed in range(1, 6):
            other = run_permuted(perm_seed)
            assert other.search_fields() == reference.search_fields()

    def test_playout_replay_is_lane_independent(self):
        engine = PipelineEngine(PipelineConfig(playout_lanes=2, in_flight_limit=2))
        engine.begin(GAMES["synthetic"], UctParams(budget=4, seed=8))
        token = engine.make_token(0)
        engine.select_stage(token)
        engine.expand_stage(token)
        twin = engine.make_token(1)
        twin.trajectory.path = list(token.trajectory.path)
        twin.leaf_args = token.leaf_args
        twin.iteration = token.iteration  # same iteration -> same stream
        twin.phase = Phase.EXPANDED
        engine.playout_stage(token, 0)
        engine.playout_stage(twin, 1)
        assert token.trajectory.delta == twin.trajectory.delta

    def test_out_of_order_delivery_with_uneven_playouts(self):
        # huge per-leaf cost spread forces inversions even on one core
        state = SyntheticState(params=SyntheticParams(
            branching=4, depth=4, playout_cost=2_000_000, cost_spread=0.95, seed=6))
        config = PipelineConfig(playout_lanes=2, in_flight_limit=8)
        engine = PipelineEngine(config)
        result, stats = engine.run(state, UctParams(budget=24, seed=1))
        assert result.root_n == 24
        backed = [entry[0] for entry in stats.token_log]
        inversions = sum(1 for a, b in zip(backed, backed[1:]) if a > b)
        assert inversions > 0


class TestStaleness:
    def test_select_clock_bounds_staleness(self):
        for in_flight in (1, 2, 4, 8):
            config = PipelineConfig(playout_lanes=2, in_flight_limit=in_flight)
            params = UctParams(budget=300, seed=3)
            _, stats = run_pipeline(GAMES["tictactoe"], params, config)
            assert stats.max_staleness <= in_flight


class TestFailureModes:
    def test_stuck_pipeline_times_out_with_diagnostics(self):
        class StallingEngine(PipelineEngine):
            def playout_stage(self, token, lane):
                time.sleep(10.0)
                return super().playout_stage(token, lane)

        config = PipelineConfig(playout_lanes=1, drain_timeout_s=0.5)
        engine = StallingEngine(config)
        with pytest.raises(PipelineStuckError) as err:
            engine.run(GAMES["synthetic"], UctParams(budget=4, seed=0))
        message = str(err.value)
        assert "occupancy" in message and "backed" in message

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PipelineConfig(playout_lanes=0)
        with pytest.raises(ValueError):
            PipelineConfig(buffer_capacity=0)
        with pytest.raises(ValueError):
            PipelineConfig(in_flight_limit=0)
        with pytest.raises(ValueError):
            PipelineConfig(staleness_policy="bogus")
        with pytest.raises(ValueError):
            PipelineConfig(stage_costs={"nosuch": 10})

    def test_engine_not_reentrant(self):
        engine = PipelineEngine(PipelineConfig())

        class Probe(PipelineEngine):
            def begin(self, root_state, params):
                super().begin(root_state, params)

        probe = Probe(PipelineConfig())
        probe._running = True
        with pytest.raises(Exception):
            probe.run(GAMES["tictactoe"], UctParams(budget=2, seed=0))
        # a fresh engine still works
        engine.run(GAMES["tictactoe"], UctParams(budget=2, seed=0))


class TestEventLog:
    def test_token_audit_trail_json(self):
        params = UctParams(budget=30, seed=1)
        _, stats = run_pipeline(GAMES["synthetic"], params,
                                PipelineConfig(playout_lanes=2, in_flight_limit=4))
        trail = stats.token_log_json()
        assert len(trail) == 30
        assert sorted(t["iteration"] for t in trail) == list(range(30))
        assert all(t["path"][0] == 0 for t in trail)
        assert all(0.0 <= t["delta"] <= 1.0 for t in trail)

    def test_events_cover_every_stage_and_export(self, tmp_path):
        params = UctParams(budget=50, seed=7)
        config = PipelineConfig(playout_lanes=2, in_flight_limit=4)
        _, stats = run_pipeline(GAMES["synthetic"], params, config)
        stages_seen = {}
        for token, stage, lane, start, end in stats.events:
            assert end >= start
            stages_seen.setdefault(stage, 0)
            stages_seen[stage] += 1
        assert stages_seen["select"] == 50
        assert stages_seen["backup"] == 50
        path = tmp_path / "events.csv"
        stats.events_to_csv(path)
        header = path.read_text().splitlines()[0]
        assert header == "token,stage,lane,start_ns,end_ns"

    def test_stage_ordering_per_token(self):
        params = UctParams(budget=40, seed=2)
        config = PipelineConfig(playout_lanes=2, in_flight_limit=4)
        _, stats = run_pipeline(GAMES["synthetic"], params, config)
        order = {"select": 0, "expand": 1, "playout": 2, "backup": 3}
        per_token = {}
        for token, stage, lane, start, end in stats.events:
            per_token.setdefault(token, []).append((start, order[stage]))
        for token, entries in per_token.items():
            entries.sort()
            ranks = [rank for _, rank in entries]
            assert ranks == sorted(ranks), f"token {token} ran stages out of order"


@pytest.mark.slow
def test_ten_thousand_token_audit():
    params = UctParams(budget=10_000, seed=17)
    config = PipelineConfig(playout_lanes=4, in_flight_limit=8)
    result, stats = run_pipeline(GAMES["synthetic"], params, config)
    assert stats.tokens_created == 10_000
    assert stats.tokens_backed == 10_000
    assert result.root_n == 10_000
    result.tree.check_invariants(budget=10_000)


@pytest.mark.multicore
@pytest.mark.skipif((os.cpu_count() or 1) < 4, reason="needs >= 4 cores")
def test_equal_stage_costs_reproduce_seven_tick_schedule():
    """With four equally costly stages and four tokens, the measured stage
    occupancy must match the simulator's 7-tick schedule shape."""
    from mctspipe.schedsim import SimConfig, mcts_stages, simulate

    units = 12_000_000  # roughly 40-60 ms per stage
    config = PipelineConfig(
        playout_lanes=1, in_flight_limit=8, buffer_capacity=4,
        stage_costs={s: units for s in ("select", "expand", "playout", "backup")},
    )
    engine = PipelineEngine(config)
    result, stats = engine.run(GAMES["synthetic"], UctParams(budget=4, seed=0))
    starts = {}
    durations = []
    t0 = min(start for _, _, _, start, _ in stats.events)
    for token, stage, lane, start, end in stats.events:
        starts[(token, stage)] = start - t0
        durations.append(end - start)
    tick = sorted(durations)[len(durations) // 2]
    ideal = simulate(SimConfig(stages=mcts_stages(1, 1, 1, 1), num_items=4))
    for entry in ideal.gantt:
        measured = round(starts[(entry.item, entry.stage)] / tick)
        assert measured == entry.start, (entry, measured)
    makespan = max(end for _, _, _, _, end in stats.events) - t0
    assert makespan < 7 * tick * 1.35
