"""Per-core prefetchers: a confidence-gated stride table and a delta-history
(Markov) table keyed on the last two line deltas.

Both predictors live in small int64 tables so the engine can drive them from
compiled code; :class:`Prefetcher` wraps one core's tables for direct use.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

import numpy as np
from numba import njit

from .config import PrefetcherKind

PF_NONE = 0
PF_STRIDE = 1
PF_DELTA = 2
PF_BOTH = 3

TRIG_STRIDE = 0
TRIG_DELTA = 1

REGION_SHIFT = 12  # stride table key and prefetch boundary: 4 KiB

STRIDE_ENTRIES = 256
S_KEY, S_LAST, S_STRIDE, S_CONF = 0, 1, 2, 3
S_FIELDS = 4
CONF_MAX = 3
CONF_ISSUE = 2

DELTA_ENTRIES = 1024
D_K1, D_K2, D_PRED, D_HITS, D_VALID = 0, 1, 2, 3, 4
D_FIELDS = 5
HITS_MAX = 3

# delta history: last line, the two most recent deltas, lines seen (capped at 3)
H_LAST, H_D1, H_D2, H_N = 0, 1, 2, 3
H_FIELDS = 4


def kind_code(kind: PrefetcherKind) -> int:
    return {
        PrefetcherKind.NONE: PF_NONE,
        PrefetcherKind.STRIDE: PF_STRIDE,
        PrefetcherKind.DELTA_HISTORY: PF_DELTA,
        PrefetcherKind.BOTH: PF_BOTH,
    }[PrefetcherKind(kind)]


def new_tables(count: int, stride_entries: int = STRIDE_ENTRIES, delta_entries: int = DELTA_ENTRIES):
    """Fresh (stride, delta, history) tables for ``count`` cores."""
    stride = np.zeros((count, stride_entries, S_FIELDS), dtype=np.int64)
    stride[:, :, S_KEY] = -1
    delta = np.zeros((count, delta_entries, D_FIELDS), dtype=np.int64)
    hist = np.zeros((count, H_FIELDS), dtype=np.int64)
    return stride, delta, hist


@njit(cache=True)
def _delta_slot(d1, d2, n):
    h = (d1 * 0x9E3779B1 + d2 * 0x85EBCA77) & 0x7FFFFFFF
    return h % n


@njit(cache=True)
def _region_entry(stride_t, region):
    i = region % stride_t.shape[0]
    if stride_t[i, S_KEY] == region:
        return i
    return -1


@njit(cache=True)
def stride_train(stride_t, addr):
    """Update the stride table; return the confirmed stride (0 if not confident)."""
    region = addr >> REGION_SHIFT
    i = region % stride_t.shape[0]
    if stride_t[i, S_KEY] != region:
        stride_t[i, S_KEY] = region
        stride_t[i, S_LAST] = addr
        stride_t[i, S_STRIDE] = 0
        stride_t[i, S_CONF] = 0
        # a confident stream walking in from a neighbouring region keeps its
        # training; only prefetch issue stops at the boundary
        for nb in (region - 1, region + 1):
            j = _region_entry(stride_t, nb) if nb >= 0 else -1
            if j >= 0 and stride_t[j, S_CONF] >= CONF_ISSUE and addr - stride_t[j, S_LAST] == stride_t[j, S_STRIDE]:
                stride_t[i, S_STRIDE] = stride_t[j, S_STRIDE]
                stride_t[i, S_CONF] = stride_t[j, S_CONF]
                return stride_t[i, S_STRIDE]
        return 0
    delta = addr - stride_t[i, S_LAST]
    if delta == 0:
        return stride_t[i, S_STRIDE] if stride_t[i, S_CONF] >= CONF_ISSUE else 0
    stride_t[i, S_LAST] = addr
    if delta == stride_t[i, S_STRIDE]:
        if stride_t[i, S_CONF] < CONF_MAX:
            stride_t[i, S_CONF] += 1
    else:
        if stride_t[i, S_CONF] > 0:
            stride_t[i, S_CONF] -= 1
        if stride_t[i, S_CONF] == 0:
            stride_t[i, S_STRIDE] = delta
            stride_t[i, S_CONF] = 1
    if stride_t[i, S_CONF] >= CONF_ISSUE:
        return stride_t[i, S_STRIDE]
    return 0


@njit(cache=True)
def delta_train(delta_t, hist, line):
    """Record the new line delta and return True when a prediction key is ready."""
    if hist[H_N] == 0:
        hist[H_LAST] = line
        hist[H_N] = 1
        return False
    d = line - hist[H_LAST]
    if d == 0:
        return hist[H_N] >= 3
    hist[H_LAST] = line
    if hist[H_N] >= 3:
        slot = _delta_slot(hist[H_D2], hist[H_D1], delta_t.shape[0])
        e = delta_t[slot]
        if e[D_VALID] == 1 and e[D_K1] == hist[H_D2] and e[D_K2] == hist[H_D1]:
            if e[D_PRED] == d:
                if e[D_HITS] < HITS_MAX:
                    e[D_HITS] += 1
            elif e[D_HITS] > 0:
                e[D_HITS] -= 1
            else:
                e[D_PRED] = d
        else:
            e[D_K1] = hist[H_D2]
            e[D_K2] = hist[H_D1]
            e[D_PRED] = d
            e[D_HITS] = 0
            e[D_VALID] = 1
    hist[H_D2] = hist[H_D1]
    hist[H_D1] = d
    if hist[H_N] < 3:
        hist[H_N] += 1
    return hist[H_N] >= 3


@njit(cache=True)
def _lookup(delta_t, d2, d1):
    slot = _delta_slot(d2, d1, delta_t.shape[0])
    e = delta_t[slot]
    if e[D_VALID] == 1 and e[D_K1] == d2 and e[D_K2] == d1:
        return True, e[D_PRED]
    return False, 0


@njit(cache=True)
def _push(out, n, line, trig):
    for i in range(n):
        if out[i, 0] == line:
            return n
    out[n, 0] = line
    out[n, 1] = trig
    return n + 1


@njit(cache=True)
def observe(stride_t, delta_t, hist, kind, addr, degree, distance, line_shift, out):
    """Train on one demand access and write up to ``degree`` candidate lines
    (line number, trigger) into ``out``; returns the candidate count.

    Candidates never leave the 4 KiB region of the triggering access.
    """
    n = 0
    region = addr >> REGION_SHIFT
    line = addr >> line_shift
    if kind == PF_STRIDE or kind == PF_BOTH:
        stride = stride_train(stride_t, addr)
        if stride != 0:
            for i in range(degree):
                target = addr + stride * (distance + i)
                if target < 0 or (target >> REGION_SHIFT) != region:
                    break
                t_line = target >> line_shift
                if t_line != line:
                    n = _push(out, n, t_line, TRIG_STRIDE)
    if kind == PF_DELTA or kind == PF_BOTH:
        ready = delta_train(delta_t, hist, line)
        if ready and n < degree:
            d2 = hist[H_D2]
            d1 = hist[H_D1]
            cur = line
            for k in range(degree + distance - 1):
                found, d = _lookup(delta_t, d2, d1)
                if not found or d == 0:
                    break
                cur = cur + d
                if cur < 0 or ((cur << line_shift) >> REGION_SHIFT) != region:
                    break
                d2 = d1
                d1 = d
                # with distance > 1 the first distance-1 predictions are skipped
                if k >= distance - 1:
                    n = _push(out, n, cur, TRIG_DELTA)
                    if n >= degree:
                        break
    return n


class Trigger(str, Enum):
    STRIDE = "Stride"
    DELTA = "Delta"


@dataclass(frozen=True)
class PrefetchRequest:
    address: int
    degree_index: int
    trigger: Trigger


class Prefetcher:
    """One core's prefetcher with accuracy accounting.

    ``observe`` filters candidates against ``resident`` (lines already cached)
    and against lines it has issued that are still outstanding.
    """

    def __init__(self, kind: PrefetcherKind = PrefetcherKind.STRIDE, degree: int = 2, distance: int = 1,
                 line_bytes: int = 64, stride_entries: int = STRIDE_ENTRIES, delta_entries: int = DELTA_ENTRIES):
        if degree < 0 or distance < 1:
            raise ValueError("degree must be >= 0 and distance >= 1")
        self.kind = PrefetcherKind(kind)
        self.degree = degree
        self.distance = distance
        self.line_bytes = line_bytes
        self._shift = line_bytes.bit_length() - 1
        stride, delta, hist = new_tables(1, stride_entries, delta_entries)
        self._stride, self._delta, self._hist = stride[0], delta[0], hist[0]
        self._out = np.zeros((max(degree, 1), 2), dtype=np.int64)
        self.in_flight: set[int] = set()
        self.issued = 0
        self.useful = 0
        self.useless = 0

    def observe(self, request, resident: Optional[Iterable[int]] = None) -> list[PrefetchRequest]:
        address = request if isinstance(request, int) else request.address
        n = observe(self._stride, self._delta, self._hist, kind_code(self.kind), address,
                    self.degree, self.distance, self._shift, self._out)
        skip = {a // self.line_bytes * self.line_bytes for a in resident} if resident else set()
        out = []
        for i in range(n):
            addr = int(self._out[i, 0]) << self._shift
            if addr in skip or addr in self.in_flight:
                continue
            trigger = Trigger.STRIDE if self._out[i, 1] == TRIG_STRIDE else Trigger.DELTA
            out.append(PrefetchRequest(addr, len(out), trigger))
            self.in_flight.add(addr)
            self.issued += 1
        return out

    def on_fill_feedback(self, address: int, was_useful: bool) -> None:
        self.in_flight.discard(address // self.line_bytes * self.line_bytes)
        if was_useful:
            self.useful += 1
        else:
            self.useless += 1

    @property
    def accuracy(self) -> Optional[float]:
        """useful / issued; None before anything is issued."""
        if self.issued == 0:
            return None
        return self.useful / self.issued
