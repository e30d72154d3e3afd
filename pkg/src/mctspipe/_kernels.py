"""Hot search kernels over a flat node arena.

The tree lives in parallel numpy arrays (one row per node, see
``tree.SearchTree``); kernels receive the whole column tuple plus scalar game
parameters. The same source serves both backends: compiled by numba when
enabled, executed as plain Python otherwise (see ``_backend``). All 64-bit
wraparound arithmetic is confined to the primitives in ``rng``.

Game scalars (``game_id, gb, gd, gcost, gspread, gseed``) describe the
domain: tic-tac-toe packs both bitboards into ``s0``; the synthetic tree
keeps depth in ``s0`` and the action-path hash in ``s1``.

Per-node reward sums use the perspective of the player who moved into the
node (the root uses its own side to move), so a parent's UCT ranking of its
children needs no sign flips.
"""

from __future__ import annotations

import math

from ._backend import kernel
from .rng import (
    TAG_EXPAND,
    TAG_PLAYOUT,
    hash_step,
    hash_unit,
    rng_below,
    spin,
    stream_state,
)

TTT_LINES = (
    0b000000111, 0b000111000, 0b111000000,
    0b001001001, 0b010010010, 0b100100100,
    0b100010001, 0b001010100,
)
TTT_FULL = 0x1FF

# salt appended to a leaf's path hash to derive its playout-cost jitter
SPREAD_SALT = 1000003

# arena column order shared with tree.SearchTree.arrays
ARENA_FIELDS = (
    "parent", "action", "to_move", "persp", "terminal", "s0", "s1",
    "n", "w", "child_base", "n_children", "n_legal", "untried",
    "slot_actions", "slot_child", "meta",
)


@kernel(nogil=True)
def ttt_won(bits):
    for line in TTT_LINES:
        if bits & line == line:
            return True
    return False


@kernel(nogil=True)
def state_is_terminal(s0v, s1v, game_id, gd):
    if game_id == 0:
        x = s0v & TTT_FULL
        o = (s0v >> 9) & TTT_FULL
        return ttt_won(x) or ttt_won(o) or (x | o) == TTT_FULL
    return s0v >= gd


@kernel(nogil=True)
def state_legal_count(s0v, s1v, game_id, gb, gd):
    if state_is_terminal(s0v, s1v, game_id, gd):
        return 0
    if game_id == 0:
        x = s0v & TTT_FULL
        o = (s0v >> 9) & TTT_FULL
        free = (~(x | o)) & TTT_FULL
        count = 0
        for c in range(9):
            if free & (1 << c):
                count += 1
        return count
    return gb


@kernel(nogil=True)
def state_apply(s0v, s1v, tm, a, game_id):
    if game_id == 0:
        x = s0v & TTT_FULL
        o = (s0v >> 9) & TTT_FULL
        free = (~(x | o)) & TTT_FULL
        cell = -1
        seen = 0
        for c in range(9):
            if free & (1 << c):
                if seen == a:
                    cell = c
                    break
                seen += 1
        if tm == 0:
            x |= 1 << cell
        else:
            o |= 1 << cell
        return x | (o << 9), s1v, 1 - tm
    return s0v + 1, hash_step(s1v, a), 1 - tm


@kernel(nogil=True)
def terminal_value(s0v, s1v, game_id, gseed, persp_player):
    """Reward of a terminal state for ``persp_player``."""
    if game_id == 0:
        x = s0v & TTT_FULL
        o = (s0v >> 9) & TTT_FULL
        if ttt_won(x):
            return 1.0 if persp_player == 0 else 0.0
        if ttt_won(o):
            return 1.0 if persp_player == 1 else 0.0
        return 0.5
    v = hash_unit(s1v, gseed)
    return v if persp_player == 0 else 1.0 - v


@kernel(nogil=True)
def uct_value(w_j, n_j, n_parent, cp):
    """UCT score; unvisited children get +inf so they are tried first."""
    if n_j <= 0:
        return math.inf
    if n_parent > 0:
        lp = math.log(float(n_parent))
    else:
        lp = 0.0
    return w_j / n_j + cp * math.sqrt(lp / n_j)


@kernel()
def init_node(parent, action, to_move, persp, terminal, s0, s1,
              n, w, child_base, n_children, n_legal, untried,
              slot_actions, slot_child, meta,
              idx, par, act, ns0, ns1, ntm, game_id, gb, gd):
    parent[idx] = par
    action[idx] = act
    to_move[idx] = ntm
    if par >= 0:
        persp[idx] = to_move[par]
    else:
        persp[idx] = ntm
    s0[idx] = ns0
    s1[idx] = ns1
    n[idx] = 0
    w[idx] = 0.0
    term = state_is_terminal(ns0, ns1, game_id, gd)
    terminal[idx] = 1 if term else 0
    count = state_legal_count(ns0, ns1, game_id, gb, gd)
    base = meta[1]
    child_base[idx] = base
    n_legal[idx] = count
    untried[idx] = count
    n_children[idx] = 0
    for j in range(count):
        slot_actions[base + j] = j
    meta[1] = base + count


@kernel()
def make_root(parent, action, to_move, persp, terminal, s0, s1,
              n, w, child_base, n_children, n_legal, untried,
              slot_actions, slot_child, meta,
              rs0, rs1, rtm, game_id, gb, gd):
    init_node(parent, action, to_move, persp, terminal, s0, s1,
              n, w, child_base, n_children, n_legal, untried,
              slot_actions, slot_child, meta,
              0, -1, -1, rs0, rs1, rtm, game_id, gb, gd)
    meta[0] = 1


@kernel()
def select_walk(parent, action, to_move, persp, terminal, s0, s1,
                n, w, child_base, n_children, n_legal, untried,
                slot_actions, slot_child, meta,
                start, cp, mark_from, path_out):
    """Descend from ``start`` by UCT until a node with untried actions or a
    terminal node; write node ids into ``path_out`` and return the length.

    Ties break to the lowest child index; unvisited children win outright.
    ``mark_from >= 0`` provisionally increments ``n`` along
    ``path_out[mark_from:]`` after the walk (virtual-visit diversification);
    the walk itself reads the counts as found.
    """
    node = start
    path_out[0] = node
    plen = 1
    while terminal[node] == 0 and untried[node] == 0:
        base = child_base[node]
        visits = n[node]
        best = -1
        best_score = -math.inf
        for j in range(n_children[node]):
            c = slot_child[base + j]
            score = uct_value(w[c], n[c], visits, cp)
            if score > best_score:
                best_score = score
                best = c
        node = best
        path_out[plen] = node
        plen += 1
    if mark_from >= 0:
        for i in range(mark_from, plen):
            n[path_out[i]] += 1
    return plen


@kernel()
def extend_walk(parent, action, to_move, persp, terminal, s0, s1,
                n, w, child_base, n_children, n_legal, untried,
                slot_actions, slot_child, meta,
                start, cp, mark_from, rng_state, path_out):
    """Collision recovery: continue the descent from a node whose untried
    actions were consumed by concurrent expansions.

    Same walk as ``select_walk`` except UCT ties break uniformly at random
    (reservoir over the tied set) instead of by child index: colliding
    tokens all see identical stale scores, so index ties would stack them
    under one unevaluated child.
    """
    node = start
    path_out[0] = node
    plen = 1
    while terminal[node] == 0 and untried[node] == 0:
        base = child_base[node]
        visits = n[node]
        best = -1
        best_score = -math.inf
        ties = 0
        for j in range(n_children[node]):
            c = slot_child[base + j]
            score = uct_value(w[c], n[c], visits, cp)
            if score > best_score:
                best_score = score
                best = c
                ties = 1
            elif score == best_score:
                ties += 1
                rng_state, r = rng_below(rng_state, ties)
                if r == 0:
                    best = c
        node = best
        path_out[plen] = node
        plen += 1
    if mark_from >= 0:
        for i in range(mark_from, plen):
            n[path_out[i]] += 1
    return plen, rng_state


@kernel()
def expand_node(parent, action, to_move, persp, terminal, s0, s1,
                n, w, child_base, n_children, n_legal, untried,
                slot_actions, slot_child, meta,
                stop, rng_state, game_id, gb, gd):
    """Create one child of ``stop`` from a uniformly drawn untried action.

    The caller guarantees ``stop`` is non-terminal with untried actions.
    """
    u = untried[stop]
    rng_state, r = rng_below(rng_state, u)
    base = child_base[stop]
    a = slot_actions[base + r]
    slot_actions[base + r] = slot_actions[base + u - 1]
    slot_actions[base + u - 1] = a
    untried[stop] = u - 1
    ns0, ns1, ntm = state_apply(s0[stop], s1[stop], to_move[stop], a, game_id)
    idx = meta[0]
    meta[0] = idx + 1
    init_node(parent, action, to_move, persp, terminal, s0, s1,
              n, w, child_base, n_children, n_legal, untried,
              slot_actions, slot_child, meta,
              idx, stop, a, ns0, ns1, ntm, game_id, gb, gd)
    slot_child[base + n_children[stop]] = idx
    n_children[stop] += 1
    return idx, rng_state


@kernel(nogil=True)
def playout_value(s0v, s1v, tm, persp_player, game_id, gb, gd, gcost, gspread,
                  gseed, rng_state):
    """Uniform random continuation to a terminal state; returns
    ``(reward for persp_player, busy-work checksum, final stream state)``.

    A terminal input is evaluated directly without consuming the stream. The
    synthetic game appends ``gcost`` busy-work units (scaled per leaf by
    ``gspread``); the checksum keeps the spin from being optimized away.
    """
    checksum = gseed ^ gseed  # typed zero
    delta = 0.0
    if game_id == 0:
        x = s0v & TTT_FULL
        o = (s0v >> 9) & TTT_FULL
        mover = tm
        while True:
            if ttt_won(x):
                delta = 1.0 if persp_player == 0 else 0.0
                break
            if ttt_won(o):
                delta = 1.0 if persp_player == 1 else 0.0
                break
            free = (~(x | o)) & TTT_FULL
            count = 0
            for c in range(9):
                if free & (1 << c):
                    count += 1
            if count == 0:
                delta = 0.5
                break
            rng_state, r = rng_below(rng_state, count)
            seen = 0
            for c in range(9):
                if free & (1 << c):
                    if seen == r:
                        if mover == 0:
                            x |= 1 << c
                        else:
                            o |= 1 << c
                        break
                    seen += 1
            mover = 1 - mover
    else:
        depth = s0v
        h = s1v
        while depth < gd:
            rng_state, a = rng_below(rng_state, gb)
            h = hash_step(h, a)
            depth += 1
        v = hash_unit(h, gseed)
        delta = v if persp_player == 0 else 1.0 - v
        if gcost > 0:
            units = gcost
            if gspread > 0.0:
                jitter = hash_unit(hash_step(h, SPREAD_SALT), gseed)
                units = int(gcost * (1.0 + gspread * (2.0 * jitter - 1.0)))
            checksum = spin(units, h)
    return delta, checksum, rng_state


@kernel()
def backup_path(parent, action, to_move, persp, terminal, s0, s1,
                n, w, child_base, n_children, n_legal, untried,
                slot_actions, slot_child, meta,
                path, plen, delta, settle_prefix):
    """Add ``delta`` (stated from the last path node's perspective) along the
    path, flipping for opposing viewpoints, and bump visit counts.

    ``settle_prefix`` > 0 settles provisional visit marks: the first that
    many nodes already received their ``n`` increment at selection time and
    only get the reward update here.
    """
    leaf_persp = persp[path[plen - 1]]
    for i in range(plen):
        node = path[i]
        if persp[node] == leaf_persp:
            w[node] += delta
        else:
            w[node] += 1.0 - delta
        if i >= settle_prefix:
            n[node] += 1


@kernel()
def run_iters(parent, action, to_move, persp, terminal, s0, s1,
              n, w, child_base, n_children, n_legal, untried,
              slot_actions, slot_child, meta,
              game_id, gb, gd, gcost, gspread, gseed,
              budget, cp, seed, path_buf):
    """Sequential driver: ``budget`` select/expand/playout/backup rounds.

    Per-iteration streams come from ``(seed, iteration, tag)``, so a stage
    pipeline replaying the same iterations draws identical randomness.
    Terminal stop nodes skip expand/playout and back up their exact value.
    """
    checksum = gseed ^ gseed
    for it in range(budget):
        plen = select_walk(parent, action, to_move, persp, terminal, s0, s1,
                           n, w, child_base, n_children, n_legal, untried,
                           slot_actions, slot_child, meta,
                           0, cp, -1, path_buf)
        stop = path_buf[plen - 1]
        if terminal[stop] != 0:
            delta = terminal_value(s0[stop], s1[stop], game_id, gseed, persp[stop])
        else:
            estream = stream_state(seed, it, TAG_EXPAND)
            cid, estream = expand_node(
                parent, action, to_move, persp, terminal, s0, s1,
                n, w, child_base, n_children, n_legal, untried,
                slot_actions, slot_child, meta,
                stop, estream, game_id, gb, gd)
            path_buf[plen] = cid
            plen += 1
            pstream = stream_state(seed, it, TAG_PLAYOUT)
            delta, chk, pstream = playout_value(
                s0[cid], s1[cid], to_move[cid], persp[cid],
                game_id, gb, gd, gcost, gspread, gseed, pstream)
            checksum ^= chk
        backup_path(parent, action, to_move, persp, terminal, s0, s1,
                    n, w, child_base, n_children, n_legal, untried,
                    slot_actions, slot_child, meta,
                    path_buf, plen, delta, 0)
    return checksum
