"""Set-associative cache storage with LRU and tensor-aware replacement.

A cache is a ``[sets, ways, NFIELDS]`` int64 array. The njit kernels below are
shared by the standalone :class:`Cache` and by the simulation engine, which
keeps one such array per private cache and one for the shared L3.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Optional

import numpy as np
from numba import njit

from .config import CacheGeometry, ReplacementPolicy

# per-line fields
TAG = 0
STATE = 1  # 0 = invalid; private L2 lines hold a MESI code, other caches use VALID
DIRTY = 2
RANK = 3  # LRU rank, 0 = most recent, -1 for invalid ways
CLASS = 4  # PriorityClass code
PREFETCHED = 5  # filled speculatively and not yet demanded
READY = 6  # tick at which the line's data arrives
VERSION = 7  # last-writer token, used by the coherence data oracle
SHARERS = 8  # L3 directory: bitmask of private hierarchies holding the line
OWNER = 9  # L3 directory: core holding the line in M or E, else -1
NFIELDS = 10

INVALID_STATE = 0
VALID = 1

POLICY_LRU = 0
POLICY_TENSOR_AWARE = 1

CLASS_NORMAL = 0
CLASS_HIGH_REUSE = 1
CLASS_STREAMING = 2


class PriorityClass(IntEnum):
    NORMAL = CLASS_NORMAL
    HIGH_REUSE = CLASS_HIGH_REUSE
    STREAMING = CLASS_STREAMING


class ReuseClass(IntEnum):
    WEIGHT = 0
    ACTIVATION = 1
    GRADIENT = 2
    STREAMING = 3

    @property
    def letter(self) -> str:
        return "WAGS"[self]

    @classmethod
    def from_letter(cls, letter: str) -> "ReuseClass":
        return cls("WAGS".index(letter))


# reuse class -> replacement priority; index -1 (no hint) maps to Normal
_CLASS_OF_REUSE = np.array([CLASS_HIGH_REUSE, CLASS_NORMAL, CLASS_NORMAL, CLASS_STREAMING, CLASS_NORMAL],
                           dtype=np.int64)


@dataclass(frozen=True)
class TensorHint:
    tensor_id: int
    reuse_class: ReuseClass

    @property
    def priority(self) -> PriorityClass:
        return PriorityClass(int(_CLASS_OF_REUSE[self.reuse_class]))


def priority_of(hint: Optional[TensorHint]) -> int:
    return CLASS_NORMAL if hint is None else int(_CLASS_OF_REUSE[hint.reuse_class])


def policy_code(policy: ReplacementPolicy) -> int:
    return POLICY_TENSOR_AWARE if ReplacementPolicy(policy) is ReplacementPolicy.TENSOR_AWARE else POLICY_LRU


def new_lines(sets: int, ways: int, count: Optional[int] = None) -> np.ndarray:
    shape = (sets, ways, NFIELDS) if count is None else (count, sets, ways, NFIELDS)
    lines = np.zeros(shape, dtype=np.int64)
    lines[..., RANK] = -1
    lines[..., OWNER] = -1
    return lines


def decompose(address: int, geometry: CacheGeometry) -> tuple[int, int, int]:
    """Split an address into (tag, set_index, offset)."""
    line = address // geometry.line_bytes
    return line // geometry.sets, line % geometry.sets, address % geometry.line_bytes


def recompose(tag: int, set_index: int, offset: int, geometry: CacheGeometry) -> int:
    return (tag * geometry.sets + set_index) * geometry.line_bytes + offset


# --- kernels ---------------------------------------------------------------

@njit(cache=True)
def find_way(lines, s, tag):
    for w in range(lines.shape[1]):
        if lines[s, w, STATE] != INVALID_STATE and lines[s, w, TAG] == tag:
            return w
    return -1


@njit(cache=True)
def valid_count(lines, s):
    n = 0
    for w in range(lines.shape[1]):
        if lines[s, w, STATE] != INVALID_STATE:
            n += 1
    return n


@njit(cache=True)
def touch(lines, s, w):
    """Promote way w to most-recently-used."""
    r = lines[s, w, RANK]
    for x in range(lines.shape[1]):
        if lines[s, x, STATE] != INVALID_STATE and lines[s, x, RANK] < r:
            lines[s, x, RANK] += 1
    lines[s, w, RANK] = 0


@njit(cache=True)
def remove(lines, s, w):
    """Invalidate way w and re-compact the remaining ranks."""
    r = lines[s, w, RANK]
    for x in range(lines.shape[1]):
        if x != w and lines[s, x, STATE] != INVALID_STATE and lines[s, x, RANK] > r:
            lines[s, x, RANK] -= 1
    lines[s, w, TAG] = 0
    lines[s, w, STATE] = INVALID_STATE
    lines[s, w, DIRTY] = 0
    lines[s, w, RANK] = -1
    lines[s, w, CLASS] = CLASS_NORMAL
    lines[s, w, PREFETCHED] = 0
    lines[s, w, READY] = 0
    lines[s, w, VERSION] = 0
    lines[s, w, SHARERS] = 0
    lines[s, w, OWNER] = -1


@njit(cache=True)
def oldest_of_class(lines, s, cls):
    best = -1
    best_rank = -1
    for w in range(lines.shape[1]):
        if lines[s, w, STATE] != INVALID_STATE and lines[s, w, CLASS] == cls and lines[s, w, RANK] > best_rank:
            best = w
            best_rank = lines[s, w, RANK]
    return best


@njit(cache=True)
def select_victim(lines, s, policy):
    """Victim way of a full set.

    Tensor-aware order: oldest Streaming, then oldest Normal, then oldest
    HighReuse line. With a single class present this is plain LRU.
    """
    if policy == POLICY_TENSOR_AWARE:
        for cls in (CLASS_STREAMING, CLASS_NORMAL, CLASS_HIGH_REUSE):
            w = oldest_of_class(lines, s, cls)
            if w >= 0:
                return w
    best = 0
    for w in range(lines.shape[1]):
        if lines[s, w, RANK] > lines[s, best, RANK]:
            best = w
    return best


@njit(cache=True)
def choose_way(lines, s, policy):
    """A free way if the set has one, otherwise the policy's victim."""
    for w in range(lines.shape[1]):
        if lines[s, w, STATE] == INVALID_STATE:
            return w
    return select_victim(lines, s, policy)


@njit(cache=True)
def insert_rank(lines, s, policy, cls, prefetch):
    n = valid_count(lines, s)
    if policy == POLICY_TENSOR_AWARE and cls == CLASS_STREAMING:
        return n
    if prefetch:
        return min(lines.shape[1] // 2, n)
    return 0


@njit(cache=True)
def install(lines, s, w, tag, state, dirty, cls, prefetch, ready, version, policy):
    """Fill free way w; the caller has already evicted whatever was there."""
    pos = insert_rank(lines, s, policy, cls, prefetch)
    for x in range(lines.shape[1]):
        if lines[s, x, STATE] != INVALID_STATE and lines[s, x, RANK] >= pos:
            lines[s, x, RANK] += 1
    lines[s, w, TAG] = tag
    lines[s, w, STATE] = state
    lines[s, w, DIRTY] = dirty
    lines[s, w, RANK] = pos
    lines[s, w, CLASS] = cls
    lines[s, w, PREFETCHED] = 1 if prefetch else 0
    lines[s, w, READY] = ready
    lines[s, w, VERSION] = version
    lines[s, w, SHARERS] = 0
    lines[s, w, OWNER] = -1


@njit(cache=True)
def ranks_are_permutation(lines, s):
    n = valid_count(lines, s)
    seen = np.zeros(lines.shape[1], dtype=np.bool_)
    for w in range(lines.shape[1]):
        if lines[s, w, STATE] == INVALID_STATE:
            if lines[s, w, RANK] != -1:
                return False
            continue
        r = lines[s, w, RANK]
        if r < 0 or r >= n or seen[r]:
            return False
        seen[r] = True
    return True


# --- standalone cache ------------------------------------------------------

class AccessKind(str, Enum):
    HIT = "Hit"
    MISS = "Miss"


@dataclass(frozen=True)
class Eviction:
    address: int
    dirty: bool


@dataclass(frozen=True)
class AccessOutcome:
    kind: AccessKind
    victim: Optional[Eviction] = None
    filled: bool = False

    @property
    def hit(self) -> bool:
        return self.kind is AccessKind.HIT


@dataclass(frozen=True)
class CacheLine:
    tag: int
    valid: bool
    dirty: bool
    lru_rank: int
    priority_class: PriorityClass
    prefetched: bool


class Cache:
    """One set-associative, write-back, write-allocate cache.

    ``access`` only looks up; the caller decides when to ``fill`` so that miss
    latency can be modelled between the two.
    """

    def __init__(self, geometry: CacheGeometry, name: str = "cache"):
        self.geometry = geometry
        self.name = name
        self.policy = policy_code(geometry.replacement_policy)
        self.lines = new_lines(geometry.sets, geometry.associativity)
        self.hits = 0
        self.misses = 0
        self._set_bits = geometry.sets.bit_length() - 1
        self._line_shift = geometry.line_bytes.bit_length() - 1

    @property
    def accesses(self) -> int:
        return self.hits + self.misses

    def _locate(self, address: int) -> tuple[int, int]:
        line = address >> self._line_shift
        return line >> self._set_bits, line & (self.geometry.sets - 1)

    def _address(self, tag: int, s: int) -> int:
        return ((tag << self._set_bits) | s) << self._line_shift

    def contains(self, address: int) -> bool:
        tag, s = self._locate(address)
        return find_way(self.lines, s, tag) >= 0

    def access(self, address: int, is_write: bool = False, hint: Optional[TensorHint] = None,
               now: int = 0) -> AccessOutcome:
        tag, s = self._locate(address)
        w = find_way(self.lines, s, tag)
        if w < 0:
            self.misses += 1
            return AccessOutcome(AccessKind.MISS)
        self.hits += 1
        touch(self.lines, s, w)
        self.lines[s, w, PREFETCHED] = 0
        if is_write:
            self.lines[s, w, DIRTY] = 1
        return AccessOutcome(AccessKind.HIT)

    def fill(self, address: int, dirty: bool = False, hint: Optional[TensorHint] = None, now: int = 0,
             prefetch: bool = False) -> Optional[Eviction]:
        tag, s = self._locate(address)
        if find_way(self.lines, s, tag) >= 0:
            raise RuntimeError(f"{self.name}: double fill of resident line {address:#x}")
        w = choose_way(self.lines, s, self.policy)
        victim = None
        if self.lines[s, w, STATE] != INVALID_STATE:
            victim = Eviction(self._address(int(self.lines[s, w, TAG]), s), bool(self.lines[s, w, DIRTY]))
            remove(self.lines, s, w)
        install(self.lines, s, w, tag, VALID, int(dirty), priority_of(hint), prefetch, now, 0, self.policy)
        return victim

    def access_fill(self, address: int, is_write: bool = False, hint: Optional[TensorHint] = None,
                    now: int = 0) -> AccessOutcome:
        """Access and, on a miss, allocate the line (write-allocate)."""
        outcome = self.access(address, is_write, hint, now)
        if outcome.hit:
            return outcome
        victim = self.fill(address, dirty=is_write, hint=hint, now=now)
        return AccessOutcome(AccessKind.MISS, victim, True)

    def invalidate(self, address: int) -> bool:
        """Drop the line if present; True when its dirty data must be written back."""
        tag, s = self._locate(address)
        w = find_way(self.lines, s, tag)
        if w < 0:
            return False
        dirty = bool(self.lines[s, w, DIRTY])
        remove(self.lines, s, w)
        return dirty

    def set_lines(self, set_index: int) -> list[Optional[CacheLine]]:
        out: list[Optional[CacheLine]] = []
        for w in range(self.geometry.associativity):
            row = self.lines[set_index, w]
            if row[STATE] == INVALID_STATE:
                out.append(None)
            else:
                out.append(CacheLine(int(row[TAG]), True, bool(row[DIRTY]), int(row[RANK]),
                                     PriorityClass(int(row[CLASS])), bool(row[PREFETCHED])))
        return out

    def check_ranks(self) -> bool:
        return all(ranks_are_permutation(self.lines, s) for s in range(self.geometry.sets))
