"""Discrete-tick simulator for linear and nonlinear stage pipelines.

Models an idealized pipeline: every stage takes a fixed integer number of
ticks per item, serial stages (``lanes=1``) handle one item at a time in item
order, parallel stages spread items over ``lanes`` equal workers assigned
earliest-free-first. Item ``i`` enters stage ``s`` as soon as it has finished
stage ``s-1`` and a lane is free (ties: lower item index, then lower lane
index). Buffers between stages are unbounded here, unlike the real engine's
bounded ones, so the schedule shows pure dependency/capacity structure:
the fill ramp, the steady region paced by the slowest stage, and the drain
tail.

Because stage durations are per-stage constants, items finish every stage in
index order, so the simulation reduces to one pass over items; the result is
exact, not approximate.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Optional, Sequence


@dataclass(frozen=True)
class StageSpec:
    """One pipeline stage: ``duration`` ticks per item on each of ``lanes``
    identical workers."""

    name: str
    duration: int
    lanes: int = 1

    def __post_init__(self):
        if self.duration < 1:
            raise ValueError("duration must be >= 1 tick")
        if self.lanes < 1:
            raise ValueError("lanes must be >= 1")


@dataclass(frozen=True)
class SimConfig:
    stages: tuple
    num_items: int

    def __post_init__(self):
        if len(self.stages) < 1:
            raise ValueError("need at least one stage")
        if self.num_items < 1:
            raise ValueError("num_items must be >= 1")
        object.__setattr__(self, "stages", tuple(self.stages))

    @classmethod
    def from_json(cls, payload: dict) -> "SimConfig":
        stages = tuple(
            StageSpec(
                name=s["name"],
                duration=int(s["duration"]),
                lanes=int(s.get("lanes", 1)),
            )
            for s in payload["stages"]
        )
        return cls(stages=stages, num_items=int(payload["items"]))

    @classmethod
    def load(cls, path) -> "SimConfig":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class GanttEntry:
    item: int
    stage: str
    lane: int
    start: int
    end: int


@dataclass
class SimResult:
    makespan: int
    gantt: list
    steady_period: int

    def to_json(self) -> dict:
        return {
            "makespan": self.makespan,
            "steady_period": self.steady_period,
            "gantt": [
                {
                    "item": e.item,
                    "stage": e.stage,
                    "lane": e.lane,
                    "start": e.start,
                    "end": e.end,
                }
                for e in self.gantt
            ],
        }


def simulate(config: SimConfig) -> SimResult:
    """Schedule ``num_items`` through the stages; exact integer timings."""
    stages = config.stages
    lane_free = [[0] * spec.lanes for spec in stages]
    gantt = []
    makespan = 0
    for item in range(config.num_items):
        ready = 0
        for s, spec in enumerate(stages):
            lane = min(range(spec.lanes), key=lambda l: lane_free[s][l])
            start = max(ready, lane_free[s][lane])
            end = start + spec.duration
            lane_free[s][lane] = end
            gantt.append(GanttEntry(item, spec.name, lane, start, end))
            ready = end
        makespan = max(makespan, ready)
    gantt.sort(key=lambda e: (e.start, _stage_order(stages, e.stage), e.item))
    return SimResult(makespan=makespan, gantt=gantt,
                     steady_period=steady_period(config))


def sequential_makespan(config: SimConfig) -> int:
    """Ticks to process all items one after another with no overlap."""
    return config.num_items * sum(s.duration for s in config.stages)


def steady_period(config: SimConfig) -> int:
    """Ticks per item once the pipeline is saturated: the slowest stage's
    per-item occupancy. Exact whenever each stage's lane count divides its
    duration (fractional rates round up)."""
    return max(-(-s.duration // s.lanes) for s in config.stages)


def export_gantt(result: SimResult, path) -> None:
    """Write the schedule as CSV ``item,stage,lane,start,end`` rows sorted by
    (start, stage order)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["item", "stage", "lane", "start", "end"])
        for e in result.gantt:
            writer.writerow([e.item, e.stage, e.lane, e.start, e.end])


def load_gantt(path) -> list:
    """Re-import a gantt CSV written by :func:`export_gantt`."""
    entries = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            entries.append(
                GanttEntry(
                    item=int(row["item"]),
                    stage=row["stage"],
                    lane=int(row["lane"]),
                    start=int(row["start"]),
                    end=int(row["end"]),
                )
            )
    return entries


def mcts_stages(select: int = 1, expand: int = 1, playout: int = 1,
                backup: int = 1, playout_lanes: int = 1) -> tuple:
    """Convenience four-stage topology used across the benchmarks."""
    return (
        StageSpec("select", select),
        StageSpec("expand", expand),
        StageSpec("playout", playout, lanes=playout_lanes),
        StageSpec("backup", backup),
    )


def _stage_order(stages: Sequence[StageSpec], name: str) -> int:
    for i, spec in enumerate(stages):
        if spec.name == name:
            return i
    return len(stages)
