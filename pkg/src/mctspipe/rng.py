"""Counter-based random streams and 64-bit mixing hashes.

Every random decision in a search is drawn from a stream keyed by
``(seed, iteration_index, tag)``, so the same iteration produces the same
draws no matter which worker executes it or in which order iterations
complete. Streams are splitmix64: a 64-bit counter advanced by a golden-ratio
increment and finalized by an avalanche mix.

Two implementations live here with bit-identical outputs: a numba one
(wrapping uint64 arithmetic) and a plain-Python one (masked big ints). The
module-level names bind to whichever backend is active; both dialects stay
importable for the equivalence tests and the ``kernels`` benchmark.
"""

from __future__ import annotations

from ._backend import NUMBA_ENABLED

MASK64 = (1 << 64) - 1

# splitmix64 constants
GOLDEN = 0x9E3779B97F4A7C15
MIX_A = 0xBF58476D1CE4E5B9
MIX_B = 0x94D049BB133111EB

# salts separating the derived stream families
TAG_SALT = 0xD6E8FEB86659FD93
VALUE_SALT = 0x2545F4914F6CDD1D

# stream tags
TAG_EXPAND = 1
TAG_PLAYOUT = 2
TAG_MATCH = 3
TAG_EXTEND = 4
TAG_MISC = 7


# ---------------------------------------------------------------------------
# plain-Python dialect (masked arbitrary-precision ints)
# ---------------------------------------------------------------------------

def mix64_py(z):
    z = int(z) & MASK64
    z = ((z ^ (z >> 30)) * MIX_A) & MASK64
    z = ((z ^ (z >> 27)) * MIX_B) & MASK64
    return z ^ (z >> 31)


def stream_state_py(seed, index, tag):
    z = mix64_py((int(seed) ^ ((int(tag) * TAG_SALT) & MASK64)) & MASK64)
    return mix64_py(z ^ ((int(index) * GOLDEN) & MASK64))


def rng_next_py(state):
    state = (int(state) + GOLDEN) & MASK64
    return state, mix64_py(state)


def rng_below_py(state, k):
    state, v = rng_next_py(state)
    return state, v % int(k)


def rng_unit_py(state):
    state, v = rng_next_py(state)
    return state, (v >> 11) * (1.0 / 9007199254740992.0)


def hash_step_py(h, a):
    return mix64_py((int(h) ^ (((int(a) + 1) * GOLDEN) & MASK64)) & MASK64)


def hash_unit_py(h, seed):
    v = mix64_py((int(h) ^ mix64_py((int(seed) ^ VALUE_SALT) & MASK64)) & MASK64)
    # 32-bit resolution keeps 1 - value exactly representable (zero-sum games)
    return (v >> 32) * (1.0 / 4294967296.0)


def spin_py(units, salt):
    acc = int(salt) & MASK64
    for _ in range(int(units)):
        acc = mix64_py((acc + GOLDEN) & MASK64)
    return acc


PY_IMPL = {
    "mix64": mix64_py,
    "stream_state": stream_state_py,
    "rng_next": rng_next_py,
    "rng_below": rng_below_py,
    "rng_unit": rng_unit_py,
    "hash_step": hash_step_py,
    "hash_unit": hash_unit_py,
    "spin": spin_py,
}


# ---------------------------------------------------------------------------
# numba dialect (uint64 wraparound)
# ---------------------------------------------------------------------------

NB_IMPL = {}

if NUMBA_ENABLED:
    import numpy as np
    from numba import float64, int64, njit, types, uint64

    _GOLDEN = np.uint64(GOLDEN)
    _MIX_A = np.uint64(MIX_A)
    _MIX_B = np.uint64(MIX_B)
    _TAG_SALT = np.uint64(TAG_SALT)
    _VALUE_SALT = np.uint64(VALUE_SALT)
    _S30 = np.uint64(30)
    _S27 = np.uint64(27)
    _S31 = np.uint64(31)
    _S32 = np.uint64(32)
    _S11 = np.uint64(11)
    _ONE = np.uint64(1)

    @njit(uint64(uint64), cache=True, nogil=True)
    def mix64_nb(z):
        z = (z ^ (z >> _S30)) * _MIX_A
        z = (z ^ (z >> _S27)) * _MIX_B
        return z ^ (z >> _S31)

    @njit(uint64(uint64, uint64, uint64), cache=True, nogil=True)
    def stream_state_nb(seed, index, tag):
        z = mix64_nb(seed ^ (tag * _TAG_SALT))
        return mix64_nb(z ^ (index * _GOLDEN))

    @njit(types.Tuple((uint64, uint64))(uint64), cache=True, nogil=True)
    def rng_next_nb(state):
        state = state + _GOLDEN
        return state, mix64_nb(state)

    @njit(types.Tuple((uint64, int64))(uint64, int64), cache=True, nogil=True)
    def rng_below_nb(state, k):
        state, v = rng_next_nb(state)
        return state, int64(v % np.uint64(k))

    @njit(types.Tuple((uint64, float64))(uint64), cache=True, nogil=True)
    def rng_unit_nb(state):
        state, v = rng_next_nb(state)
        return state, (v >> _S11) * (1.0 / 9007199254740992.0)

    @njit(uint64(uint64, int64), cache=True, nogil=True)
    def hash_step_nb(h, a):
        return mix64_nb(h ^ ((np.uint64(a) + _ONE) * _GOLDEN))

    @njit(float64(uint64, uint64), cache=True, nogil=True)
    def hash_unit_nb(h, seed):
        v = mix64_nb(h ^ mix64_nb(seed ^ _VALUE_SALT))
        return (v >> _S32) * (1.0 / 4294967296.0)

    @njit(uint64(int64, uint64), cache=True, nogil=True)
    def spin_nb(units, salt):
        acc = salt
        for _ in range(units):
            acc = mix64_nb(acc + _GOLDEN)
        return acc

    NB_IMPL = {
        "mix64": mix64_nb,
        "stream_state": stream_state_nb,
        "rng_next": rng_next_nb,
        "rng_below": rng_below_nb,
        "rng_unit": rng_unit_nb,
        "hash_step": hash_step_nb,
        "hash_unit": hash_unit_nb,
        "spin": spin_nb,
    }


_ACTIVE = NB_IMPL if NUMBA_ENABLED else PY_IMPL

mix64 = _ACTIVE["mix64"]
stream_state = _ACTIVE["stream_state"]
rng_next = _ACTIVE["rng_next"]
rng_below = _ACTIVE["rng_below"]
rng_unit = _ACTIVE["rng_unit"]
hash_step = _ACTIVE["hash_step"]
hash_unit = _ACTIVE["hash_unit"]
spin = _ACTIVE["spin"]


class RngStream:
    """Mutable view over one counter-based stream (Python-level API)."""

    __slots__ = ("state",)

    def __init__(self, state: int):
        self.state = int(state) & MASK64

    @classmethod
    def for_iteration(cls, seed: int, iteration: int, tag: int) -> "RngStream":
        return cls(stream_state(_u64(seed), _u64(iteration), _u64(tag)))

    def below(self, k: int) -> int:
        state, r = rng_below(_u64(self.state), k)
        self.state = int(state)
        return int(r)

    def unit(self) -> float:
        state, u = rng_unit(_u64(self.state))
        self.state = int(state)
        return float(u)


def _u64(x: int):
    """Coerce a Python int to the active backend's 64-bit state type."""
    if NUMBA_ENABLED:
        import numpy as np

        return np.uint64(int(x) & MASK64)
    return int(x) & MASK64
