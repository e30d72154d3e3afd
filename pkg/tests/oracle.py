"""Brute-force tic-tac-toe oracle, independent of the library under test.

Boards here are 9-tuples of ``None``/0/1 indexed row-major; the side to move
is implied by the mark counts. ``negamax`` gives exact game values, and the
enumeration helpers produce every position reachable by legal play. The only
dependency on the package is the converter into its state type.
"""

from __future__ import annotations

from mctspipe.games import EMPTY, TicTacToeState

LINES = (
    (0, 1, 2), (3, 4, 5), (6, 7, 8),
    (0, 3, 6), (1, 4, 7), (2, 5, 8),
    (0, 4, 8), (2, 4, 6),
)

_EMPTY_BOARD = (None,) * 9


def winner(board):
    for a, b, c in LINES:
        if board[a] is not None and board[a] == board[b] == board[c]:
            return board[a]
    return None


def to_move(board) -> int:
    marks = sum(1 for cell in board if cell is not None)
    return marks % 2


def is_terminal(board) -> bool:
    return winner(board) is not None or all(cell is not None for cell in board)


def free_cells(board):
    return [i for i in range(9) if board[i] is None]


def play(board, cell: int):
    out = list(board)
    out[cell] = to_move(board)
    return tuple(out)


_NEGAMAX_CACHE: dict = {}


def negamax(board) -> int:
    """Exact value for the side to move: +1 win, 0 draw, -1 loss."""
    cached = _NEGAMAX_CACHE.get(board)
    if cached is not None:
        return cached
    win = winner(board)
    mover = to_move(board)
    if win is not None:
        value = 1 if win == mover else -1
    elif all(cell is not None for cell in board):
        value = 0
    else:
        value = max(-negamax(play(board, cell)) for cell in free_cells(board))
    _NEGAMAX_CACHE[board] = value
    return value


def winning_moves(board):
    """Cells whose game value after moving is a forced win for the mover."""
    if is_terminal(board):
        return []
    return [cell for cell in free_cells(board) if -negamax(play(board, cell)) == 1]


def immediate_winning_cells(board):
    """Cells that complete a line for the mover right away."""
    mover = to_move(board)
    out = []
    for cell in free_cells(board):
        if winner(play(board, cell)) == mover:
            out.append(cell)
    return out


def enumerate_reachable():
    """Every position reachable from the empty board by legal play."""
    seen = {_EMPTY_BOARD}
    frontier = [_EMPTY_BOARD]
    while frontier:
        board = frontier.pop()
        if is_terminal(board):
            continue
        for cell in free_cells(board):
            nxt = play(board, cell)
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return seen


def immediate_win_positions():
    """Non-terminal reachable positions where the mover can win this move."""
    out = []
    for board in enumerate_reachable():
        if is_terminal(board):
            continue
        cells = immediate_winning_cells(board)
        if cells:
            out.append(board)
    return out


def to_state(board) -> TicTacToeState:
    cells = tuple(EMPTY if cell is None else cell for cell in board)
    return TicTacToeState(board=cells, to_move=to_move(board))


def action_of_cell(board, cell: int) -> int:
    return free_cells(board).index(cell)


def cell_of_action(board, action: int) -> int:
    return free_cells(board)[action]
