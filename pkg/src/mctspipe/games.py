"""Deterministic, seedable two-player toy games behind one small interface.

Two domains are provided:

* ``TicTacToeState`` — the classic 3x3 game, small enough that tests can
  enumerate every reachable position and compare against exact game-theoretic
  values.
* ``SyntheticState`` — an abstract game tree with fixed branching factor and
  depth. Leaf rewards are a pure function of the action path and a game seed,
  and each playout can be made arbitrarily expensive via ``playout_cost``
  busy-work units, which makes the playout step tunably dominant.

An *action* is a plain ``int``: the index into the acting state's
legal-action list (0 .. branching-1). For tic-tac-toe, index ``i`` means the
``i``-th free cell in board order. States are immutable values; applying an
action returns a new state.

Rewards are normalized to [0, 1] with draws worth 0.5, and for every terminal
state the two perspectives sum to exactly 1.

This module is the readable reference implementation; the compiled kernels in
``_kernels`` duplicate these rules on packed integers and are tested for
exhaustive agreement with this layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Union

from .rng import hash_step_py, hash_unit_py

Action = int  # index into the acting state's legal-action list

GAME_TICTACTOE = 0
GAME_SYNTHETIC = 1

EMPTY = -1

# bit masks of the eight tic-tac-toe winning lines
WIN_LINES = (
    0b000000111, 0b000111000, 0b111000000,  # rows
    0b001001001, 0b010010010, 0b100100100,  # columns
    0b100010001, 0b001010100,               # diagonals
)


class IllegalActionError(ValueError):
    """Raised when an action is outside the acting state's legal list."""


class NonTerminalError(ValueError):
    """Raised when a terminal-only operation is applied to a live state."""


@dataclass(frozen=True)
class TicTacToeState:
    """3x3 board; cells hold the player id (0 = X, 1 = O) or ``EMPTY``."""

    board: tuple = (EMPTY,) * 9
    to_move: int = 0

    @property
    def player(self) -> int:
        return self.to_move

    def free_cells(self) -> tuple:
        return tuple(i for i in range(9) if self.board[i] == EMPTY)

    def cell_for_action(self, action: Action) -> int:
        free = self.free_cells()
        if not 0 <= action < len(free):
            raise IllegalActionError(f"action {action} not in 0..{len(free) - 1}")
        return free[action]

    def action_for_cell(self, cell: int) -> Action:
        free = self.free_cells()
        if cell not in free:
            raise IllegalActionError(f"cell {cell} is not free")
        return free.index(cell)

    def winner(self):
        for player in (0, 1):
            bits = _player_bits(self.board, player)
            for line in WIN_LINES:
                if bits & line == line:
                    return player
        return None

    def is_terminal(self) -> bool:
        return self.winner() is not None or EMPTY not in self.board

    def legal_actions(self) -> list:
        if self.is_terminal():
            return []
        return list(range(len(self.free_cells())))

    def apply(self, action: Action) -> "TicTacToeState":
        if self.is_terminal():
            raise IllegalActionError("no legal actions in a terminal state")
        cell = self.cell_for_action(action)
        board = list(self.board)
        board[cell] = self.to_move
        return TicTacToeState(board=tuple(board), to_move=1 - self.to_move)

    def terminal_reward(self, perspective: int) -> float:
        if not self.is_terminal():
            raise NonTerminalError("terminal_reward on a non-terminal state")
        win = self.winner()
        if win is None:
            return 0.5
        return 1.0 if win == perspective else 0.0

    def __str__(self) -> str:
        marks = {EMPTY: ".", 0: "X", 1: "O"}
        rows = ("".join(marks[self.board[r * 3 + c]] for c in range(3)) for r in range(3))
        return "\n".join(rows)


@dataclass(frozen=True)
class SyntheticParams:
    """Shape of a synthetic game tree.

    ``playout_cost`` is the busy-work per playout in abstract units (one
    64-bit mix round each); ``cost_spread`` scales it per leaf by a
    deterministic factor in [1-spread, 1+spread) so playout durations can be
    made heterogeneous. ``seed`` fixes every leaf reward.
    """

    branching: int = 4
    depth: int = 8
    playout_cost: int = 0
    cost_spread: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.branching < 1:
            raise ValueError("branching must be >= 1")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.playout_cost < 0:
            raise ValueError("playout_cost must be >= 0")
        if not 0.0 <= self.cost_spread < 1.0:
            raise ValueError("cost_spread must be in [0, 1)")


@dataclass(frozen=True)
class SyntheticState:
    params: SyntheticParams = field(default_factory=SyntheticParams)
    depth: int = 0
    path_hash: int = 0
    to_move: int = 0

    @property
    def player(self) -> int:
        return self.to_move

    def is_terminal(self) -> bool:
        return self.depth >= self.params.depth

    def legal_actions(self) -> list:
        if self.is_terminal():
            return []
        return list(range(self.params.branching))

    def apply(self, action: Action) -> "SyntheticState":
        if self.is_terminal():
            raise IllegalActionError("no legal actions in a terminal state")
        if not 0 <= action < self.params.branching:
            raise IllegalActionError(
                f"action {action} not in 0..{self.params.branching - 1}"
            )
        return replace(
            self,
            depth=self.depth + 1,
            path_hash=hash_step_py(self.path_hash, action),
            to_move=1 - self.to_move,
        )

    def terminal_reward(self, perspective: int) -> float:
        if not self.is_terminal():
            raise NonTerminalError("terminal_reward on a non-terminal state")
        value = hash_unit_py(self.path_hash, self.params.seed)
        return value if perspective == 0 else 1.0 - value


GameState = Union[TicTacToeState, SyntheticState]


def legal_actions(state: GameState) -> list:
    """All legal action indices of ``state``; empty iff terminal."""
    return state.legal_actions()


def apply_action(state: GameState, action: Action) -> GameState:
    """Successor of ``state`` after ``action``; the original is unchanged."""
    return state.apply(action)


def is_terminal(state: GameState) -> bool:
    return state.is_terminal()


def terminal_reward(state: GameState, perspective: int) -> float:
    """Reward in [0, 1] of a terminal state as seen by ``perspective``."""
    return state.terminal_reward(perspective)


def _player_bits(board, player: int) -> int:
    bits = 0
    for i in range(9):
        if board[i] == player:
            bits |= 1 << i
    return bits


# ---------------------------------------------------------------------------
# packed encoding shared with the compiled kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GameCode:
    """Scalar description of a game domain, passed into kernels."""

    game_id: int
    branching: int = 0
    depth_limit: int = 0
    playout_cost: int = 0
    cost_spread: float = 0.0
    seed: int = 0

    def kernel_args(self) -> tuple:
        return (
            self.game_id,
            self.branching,
            self.depth_limit,
            self.playout_cost,
            self.cost_spread,
            _seed_u64(self.seed),
        )

    @property
    def max_branching(self) -> int:
        return 9 if self.game_id == GAME_TICTACTOE else self.branching

    @property
    def max_depth(self) -> int:
        return 9 if self.game_id == GAME_TICTACTOE else self.depth_limit


def encode_state(state: GameState) -> tuple:
    """Pack ``state`` as ``(GameCode, s0, s1, to_move)`` kernel scalars."""
    if isinstance(state, TicTacToeState):
        x = _player_bits(state.board, 0)
        o = _player_bits(state.board, 1)
        return GameCode(GAME_TICTACTOE), x | (o << 9), 0, state.to_move
    if isinstance(state, SyntheticState):
        p = state.params
        code = GameCode(
            GAME_SYNTHETIC,
            branching=p.branching,
            depth_limit=p.depth,
            playout_cost=p.playout_cost,
            cost_spread=p.cost_spread,
            seed=p.seed,
        )
        return code, state.depth, state.path_hash, state.to_move
    raise TypeError(f"not a game state: {state!r}")


def decode_state(code: GameCode, s0: int, s1: int, to_move: int) -> GameState:
    """Inverse of :func:`encode_state`."""
    if code.game_id == GAME_TICTACTOE:
        x = int(s0) & 0x1FF
        o = (int(s0) >> 9) & 0x1FF
        board = tuple(
            0 if x & (1 << i) else (1 if o & (1 << i) else EMPTY) for i in range(9)
        )
        return TicTacToeState(board=board, to_move=int(to_move))
    params = SyntheticParams(
        branching=code.branching,
        depth=code.depth_limit,
        playout_cost=code.playout_cost,
        cost_spread=code.cost_spread,
        seed=code.seed,
    )
    return SyntheticState(
        params=params, depth=int(s0), path_hash=int(s1), to_move=int(to_move)
    )


def _seed_u64(seed: int):
    from .rng import _u64

    return _u64(seed)
