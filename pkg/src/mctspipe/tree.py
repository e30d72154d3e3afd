"""Search tree arena and the four core operations.

The tree is a flat arena: one row of parallel numpy columns per node,
appended on expansion and never moved, so node ids stay valid for the whole
search. ``SearchNode`` is a cheap read view over a row. The sequential driver
(`run_sequential`) and the stage pipeline both mutate the arena through the
same kernels, which is what makes the pipeline's single-token mode reproduce
the sequential search bit for bit.

Visit/reward bookkeeping: ``w`` at a node accumulates rewards from the
viewpoint of the player who moved into the node (root: its own side to
move), and a node's ``n`` counts every backup that touched it. Every
created node therefore satisfies ``n == 1 + sum(child.n)`` once its subtree
is quiescent (its creation backup ended at it; later visits descended),
while the root, which no iteration created, satisfies
``n == sum(child.n)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels as K
from .games import GameCode, GameState, decode_state, encode_state
from .rng import MASK64, RngStream, _u64


class TreeInvariantError(AssertionError):
    """A structural or statistical tree invariant failed."""


@dataclass
class UctParams:
    """Search budget and selection constants.

    ``cp`` weights the exploration term (>= 0); ``budget`` is the exact
    number of iterations to run; ``seed`` keys every random stream.
    """

    budget: int
    cp: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.cp < 0:
            raise ValueError("cp must be >= 0")
        if not 0 <= self.seed <= MASK64:
            raise ValueError("seed must fit in 64 bits")


@dataclass
class Trajectory:
    """Root-to-leaf node path of one iteration."""

    path: list
    iteration_index: Optional[int] = None
    delta: Optional[float] = None

    @property
    def leaf(self) -> int:
        return self.path[-1]


@dataclass(frozen=True)
class ChildStat:
    action: int
    n: int
    w: float


@dataclass(eq=False)
class SearchResult:
    """Outcome of one search; ``elapsed_ns`` is a measurement and excluded
    from search-state comparisons (see ``search_fields``)."""

    best_action: int
    children: list
    tree_size: int
    root_n: int
    elapsed_ns: int
    tree: Optional["SearchTree"] = field(default=None, repr=False)

    def search_fields(self) -> tuple:
        return (
            self.best_action,
            tuple((c.action, c.n, c.w) for c in self.children),
            self.tree_size,
            self.root_n,
        )

    def same_search(self, other: "SearchResult") -> bool:
        return self.search_fields() == other.search_fields()

    def to_json(self) -> dict:
        return {
            "best_action": self.best_action,
            "children": [
                {"action": c.action, "n": c.n, "w": c.w} for c in self.children
            ],
            "tree_size": self.tree_size,
            "root_n": self.root_n,
            "elapsed_ns": self.elapsed_ns,
        }

    @classmethod
    def from_tree(cls, tree: "SearchTree", elapsed_ns: int) -> "SearchResult":
        return cls(
            best_action=best_action(tree),
            children=tree.root_child_stats(),
            tree_size=tree.size,
            root_n=int(tree.arrays[7][0]),
            elapsed_ns=elapsed_ns,
            tree=tree,
        )


class SearchTree:
    """Arena-allocated game tree; capacity is exact for a given budget
    (each iteration adds at most one node)."""

    def __init__(self, root_state: GameState, params: UctParams):
        code, s0, s1, tm = encode_state(root_state)
        self.code: GameCode = code
        self.params = params
        self.root_state = root_state
        cap = params.budget + 1
        slot_cap = max(1, cap * code.max_branching)
        self.arrays = (
            np.full(cap, -1, np.int32),        # parent
            np.full(cap, -1, np.int16),        # action
            np.zeros(cap, np.int8),            # to_move
            np.zeros(cap, np.int8),            # persp
            np.zeros(cap, np.uint8),           # terminal
            np.zeros(cap, np.int64),           # s0
            np.zeros(cap, np.uint64),          # s1
            np.zeros(cap, np.int64),           # n
            np.zeros(cap, np.float64),         # w
            np.zeros(cap, np.int64),           # child_base
            np.zeros(cap, np.int32),           # n_children
            np.zeros(cap, np.int32),           # n_legal
            np.zeros(cap, np.int32),           # untried
            np.zeros(slot_cap, np.int16),      # slot_actions
            np.full(slot_cap, -1, np.int32),   # slot_child
            np.zeros(4, np.int64),             # meta: [nodes, slots_used, -, -]
        )
        gid, gb, gd = code.game_id, code.branching, code.depth_limit
        K.make_root(*self.arrays, np.int64(s0), np.uint64(s1), np.int64(tm),
                    gid, gb, gd)
        self._path_buf = self.new_path_buffer()

    # -- views ------------------------------------------------------------

    @property
    def size(self) -> int:
        return int(self.arrays[15][0])

    @property
    def root(self) -> "SearchNode":
        return SearchNode(self, 0)

    def node(self, idx: int) -> "SearchNode":
        return SearchNode(self, idx)

    def state_at(self, idx: int) -> GameState:
        _, _, to_move, _, _, s0, s1 = self.arrays[:7]
        return decode_state(self.code, int(s0[idx]), int(s1[idx]), int(to_move[idx]))

    def root_child_stats(self) -> list:
        parent, action, _, _, _, _, _, n, w, child_base, n_children = self.arrays[:11]
        slot_child = self.arrays[14]
        base = int(child_base[0])
        stats = []
        for j in range(int(n_children[0])):
            c = int(slot_child[base + j])
            stats.append(ChildStat(int(action[c]), int(n[c]), float(w[c])))
        return stats

    def new_path_buffer(self) -> np.ndarray:
        return np.empty(self.code.max_depth + 2, np.int32)

    # -- checking ----------------------------------------------------------

    def check_invariants(self, budget: Optional[int] = None) -> None:
        """Raise ``TreeInvariantError`` on any violated tree invariant.

        Valid on a quiescent tree (after a run / after drain).
        """
        (parent, action, to_move, persp, terminal, s0, s1, n, w,
         child_base, n_children, n_legal, untried, slot_actions,
         slot_child, meta) = self.arrays
        size = int(meta[0])
        if budget is not None and int(n[0]) != budget:
            raise TreeInvariantError(f"root.n={int(n[0])} != budget={budget}")
        for i in range(size):
            if not 0.0 <= w[i] <= n[i]:
                raise TreeInvariantError(f"node {i}: w={w[i]} outside [0, n={n[i]}]")
            if int(untried[i]) + int(n_children[i]) != int(n_legal[i]):
                raise TreeInvariantError(f"node {i}: untried+children != legal")
            if terminal[i] and n_legal[i] != 0:
                raise TreeInvariantError(f"terminal node {i} has legal actions")
            if i > 0:
                p = int(parent[i])
                if not 0 <= p < size:
                    raise TreeInvariantError(f"node {i}: bad parent {p}")
            if terminal[i] or n[i] == 0:
                continue
            base = int(child_base[i])
            child_sum = 0
            for j in range(int(n_children[i])):
                c = int(slot_child[base + j])
                if int(parent[c]) != i:
                    raise TreeInvariantError(f"child {c} does not point back to {i}")
                child_sum += int(n[c])
            expected = child_sum if i == 0 else 1 + child_sum
            if int(n[i]) != expected:
                raise TreeInvariantError(
                    f"node {i}: n={int(n[i])} != {expected} (children sum {child_sum})"
                )


@dataclass(frozen=True)
class SearchNode:
    """Read-only view of one arena row."""

    tree: SearchTree
    idx: int

    @property
    def parent(self) -> Optional["SearchNode"]:
        p = int(self.tree.arrays[0][self.idx])
        return None if p < 0 else SearchNode(self.tree, p)

    @property
    def incoming_action(self) -> Optional[int]:
        a = int(self.tree.arrays[1][self.idx])
        return None if a < 0 else a

    @property
    def n(self) -> int:
        return int(self.tree.arrays[7][self.idx])

    @property
    def w(self) -> float:
        return float(self.tree.arrays[8][self.idx])

    @property
    def is_terminal(self) -> bool:
        return bool(self.tree.arrays[4][self.idx])

    @property
    def children(self) -> list:
        base = int(self.tree.arrays[9][self.idx])
        count = int(self.tree.arrays[10][self.idx])
        slot_child = self.tree.arrays[14]
        return [SearchNode(self.tree, int(slot_child[base + j])) for j in range(count)]

    @property
    def untried_actions(self) -> list:
        base = int(self.tree.arrays[9][self.idx])
        count = int(self.tree.arrays[12][self.idx])
        slot_actions = self.tree.arrays[13]
        return [int(slot_actions[base + j]) for j in range(count)]

    @property
    def state(self) -> GameState:
        return self.tree.state_at(self.idx)


# ---------------------------------------------------------------------------
# the four operations, Python-level
# ---------------------------------------------------------------------------

def uct_score(w_j: float, n_j: int, n_parent: int, cp: float) -> float:
    """Mean reward plus exploration bonus; +inf for unvisited children."""
    return float(K.uct_value(float(w_j), int(n_j), int(n_parent), float(cp)))


def select(tree: SearchTree, visit_mark: bool = False):
    """Walk from the root to the first expandable or terminal node.

    Returns ``(Trajectory, stop state)``. Not thread-safe; the pipeline
    engine serializes arena access itself.
    """
    buf = tree._path_buf
    plen = K.select_walk(*tree.arrays, 0, float(tree.params.cp),
                         0 if visit_mark else -1, buf)
    path = [int(buf[i]) for i in range(plen)]
    return Trajectory(path=path), tree.state_at(path[-1])


def expand(tree: SearchTree, traj: Trajectory, rng: RngStream) -> int:
    """Expand one random untried action of the trajectory's stop node and
    append the new node to the trajectory. No-op (returns -1) at terminals."""
    stop = traj.leaf
    terminal = tree.arrays[4]
    untried = tree.arrays[12]
    if terminal[stop] or untried[stop] == 0:
        return -1
    code = tree.code
    cid, state = K.expand_node(*tree.arrays, stop, _u64(rng.state),
                               code.game_id, code.branching, code.depth_limit)
    rng.state = int(state)
    traj.path.append(int(cid))
    return int(cid)


def playout(leaf_state: GameState, perspective: int, rng: RngStream) -> float:
    """Uniform random playout from ``leaf_state``; reward for
    ``perspective``. Terminal inputs are scored without consuming ``rng``."""
    code, s0, s1, tm = encode_state(leaf_state)
    delta, _, state = K.playout_value(np.int64(s0), np.uint64(s1), np.int64(tm),
                                      int(perspective), *code.kernel_args(),
                                      _u64(rng.state))
    rng.state = int(state)
    return float(delta)


def backup(tree: SearchTree, traj: Trajectory, delta: float,
           settle_prefix: int = 0) -> None:
    """Propagate ``delta`` (perspective of the trajectory's last node) along
    the path; ``settle_prefix`` nodes already carry their visit mark."""
    path = np.asarray(traj.path, np.int32)
    K.backup_path(*tree.arrays, path, len(path), float(delta), settle_prefix)
    traj.delta = float(delta)


def best_action(tree: SearchTree) -> int:
    """Most-visited root child's action; ties break to higher mean reward,
    then to creation order."""
    stats = tree.root_child_stats()
    if not stats:
        raise ValueError("root has no children")
    best = None
    best_key = (-1, -float("inf"))
    for c in stats:
        q = c.w / c.n if c.n > 0 else -float("inf")
        key = (c.n, q)
        if key > best_key:
            best_key = key
            best = c
    return best.action


def run_sequential(root_state: GameState, params: UctParams) -> SearchResult:
    """Run the full iteration budget single-threaded and pick a move."""
    t0 = time.perf_counter_ns()
    tree = SearchTree(root_state, params)
    K.run_iters(*tree.arrays, *tree.code.kernel_args(),
                params.budget, float(params.cp), _u64(params.seed),
                tree._path_buf)
    elapsed = time.perf_counter_ns() - t0
    return SearchResult.from_tree(tree, elapsed)
