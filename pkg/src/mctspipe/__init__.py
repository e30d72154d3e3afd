"""Pipelined Monte Carlo Tree Search.

The four MCTS operations (select, expand, playout, backup) run either as one
sequential loop (`run_sequential`) or as pipeline stages over bounded buffers
with parallel playout lanes (`run_pipeline`). A discrete-tick simulator
(`schedsim`) predicts idealized stage schedules, and `bench`/the ``mctspipe``
CLI measure wall-clock speedup, playing strength and search overhead against
the sequential baseline.
"""

from ._backend import NUMBA_ENABLED, PURE_PYTHON
from .games import (
    SyntheticParams,
    SyntheticState,
    TicTacToeState,
    apply_action,
    is_terminal,
    legal_actions,
    terminal_reward,
)
from .pipeline import (
    PipelineConfig,
    PipelineEngine,
    PipelineError,
    PipelineInvariantError,
    StageStats,
    run_pipeline,
)
from .schedsim import (
    SimConfig,
    SimResult,
    StageSpec,
    export_gantt,
    sequential_makespan,
    simulate,
    steady_period,
)
from .tree import (
    SearchResult,
    SearchTree,
    UctParams,
    backup,
    best_action,
    expand,
    playout,
    run_sequential,
    select,
    uct_score,
)

__version__ = "0.1.0"

__all__ = [
    "NUMBA_ENABLED",
    "PURE_PYTHON",
    "PipelineConfig",
    "PipelineEngine",
    "PipelineError",
    "PipelineInvariantError",
    "SearchResult",
    "SearchTree",
    "SimConfig",
    "SimResult",
    "StageSpec",
    "StageStats",
    "SyntheticParams",
    "SyntheticState",
    "TicTacToeState",
    "UctParams",
    "apply_action",
    "backup",
    "best_action",
    "expand",
    "export_gantt",
    "is_terminal",
    "legal_actions",
    "playout",
    "run_pipeline",
    "run_sequential",
    "select",
    "sequential_makespan",
    "simulate",
    "steady_period",
    "terminal_reward",
    "uct_score",
]
