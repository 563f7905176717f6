"""Trace-driven multicore memory-hierarchy engine.

Each requester owns a private L1 and L2; an optional inclusive L3 is shared
and carries the coherence directory. Without an L3 the private L2s snoop a
shared bus and misses go straight to memory. Caches are blocking, write-back
and write-allocate; the bus is atomic, so coherence messages cost energy but
no latency.

Requests are dispatched in order of effective start time, max(issue tick,
time the core's previous request completed), with ties going to the lower
core id. A request's latency is the sum of the hit latencies of every level
it probed, plus any wait for memory or for an in-flight prefetch.
"""

from __future__ import annotations

import time
from collections import namedtuple
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit, types
from numba.core import cgutils
from numba.extending import intrinsic
from numba.typed import Dict

from .cache import (
    _CLASS_OF_REUSE, CLASS_NORMAL, DIRTY, OWNER, PREFETCHED, READY, SHARERS, STATE, TAG, VALID, VERSION,
    TensorHint, choose_way, find_way, install, new_lines, policy_code, ranks_are_permutation,
    remove, touch,
)
from .coherence import (
    BUS_RD, BUS_RDX, BUS_UPGR, EXCLUSIVE, INVALID, MODIFIED, SHARED, WRITEBACK, BusEvent, BusEventKind,
    CoherenceState, snoop_reaction,
)
from .config import SimConfig
from .memory import (
    DRAM, HBM, M_ACCESSES, M_BYTES, M_PAGES, M_ROW_HITS, MemoryCapacityError, device_params, new_state,
    place_page, placement_code, service,
)
from .metrics import SimReport, bandwidth_gbs, energy_per_op, hit_rate_pct
from .prefetch import TRIG_STRIDE, kind_code, new_tables, observe
from .workload import WRITE, WorkloadError, check_monotonic, empty_trace

# integer parameters
I_LINE_SHIFT = 0
I_LINE_BYTES = 1
I_REQ = 2
I_HAS_L3 = 3
I_L1_BITS = 4
I_L1_LAT = 5
I_L1_POL = 6
I_L2_BITS = 7
I_L2_LAT = 8
I_L2_POL = 9
I_L3_BITS = 10
I_L3_LAT = 11
I_L3_POL = 12
I_PF_KIND = 13
I_PF_DEG = 14
I_PF_DIST = 15
I_PAGE_SHIFT = 16
I_PLACE = 17
I_TRACK = 18
I_CAPTURE = 19
I_FIELDS = 20

STAT_NAMES = (
    "requests", "memory_requests", "latency_cycles", "demand_bytes",
    "l1_hits", "l1_misses", "l2_hits", "l2_misses", "l3_hits", "l3_misses",
    "memory_demand_fills", "memory_writebacks", "memory_prefetch_fills",
    "bus_rd", "bus_rdx", "bus_upgr", "bus_writeback", "bus_prefetch",
    "prefetch_issued_stride", "prefetch_issued_delta", "prefetch_useful", "prefetch_useless",
    "prefetch_filtered", "prefetch_l3_hits",
    "split_requests", "cache_to_cache", "modified_exits", "back_invalidations", "prefetch_wait_cycles",
    "l2_inclusion_victims", "memory_wait_cycles",
    "error", "version_counter", "bus_log_count",
)
(ST_REQUESTS, ST_MEM_REQUESTS, ST_LATENCY, ST_DEMAND_BYTES,
 ST_L1_HIT, ST_L1_MISS, ST_L2_HIT, ST_L2_MISS, ST_L3_HIT, ST_L3_MISS,
 ST_MEM_DEMAND, ST_MEM_WB, ST_MEM_PF,
 ST_BUS_RD, ST_BUS_RDX, ST_BUS_UPGR, ST_BUS_WB, ST_BUS_PF,
 ST_PF_STRIDE, ST_PF_DELTA, ST_PF_USEFUL, ST_PF_USELESS,
 ST_PF_FILTERED, ST_PF_L3_HIT,
 ST_SPLITS, ST_C2C, ST_M_EXITS, ST_BACKINV, ST_WAIT,
 ST_INCL_VICTIMS, ST_MEM_WAIT,
 ST_ERROR, ST_VERSION, ST_BUSLOG_N) = range(len(STAT_NAMES))
NSTATS = len(STAT_NAMES)
_INTERNAL_STATS = {"error", "version_counter", "bus_log_count"}

# per-request record columns
R_INDEX, R_LATENCY, R_MEMORY, R_VERSION = 0, 1, 2, 3
R_FIELDS = 4

State = namedtuple("State", [
    "ip", "stats", "l1", "l2", "l3", "core_time",
    "stride", "delta", "hist", "pf_buf",
    "placement", "dev_params", "open_row", "busy", "dev_stats",
    "versions", "bus_log", "class_of_reuse",
])


# --- helpers ---------------------------------------------------------------

@intrinsic
def _borrow(typingctx, arr):
    """View of ``arr`` without a meminfo, so passing it around skips refcounting.

    Only valid while the caller keeps the original array alive.
    """
    def codegen(context, builder, sig, args):
        view = cgutils.create_struct_proxy(arr)(context, builder, value=args[0])
        view.meminfo = cgutils.get_null_value(view.meminfo.type)
        view.parent = cgutils.get_null_value(view.parent.type)
        return view._getvalue()
    return arr(arr), codegen


@njit(cache=True)
def _borrowed(st):
    # every helper takes the whole State; with owned arrays each call would
    # incref and decref all of them
    return State(_borrow(st.ip), _borrow(st.stats), _borrow(st.l1), _borrow(st.l2), _borrow(st.l3),
                 _borrow(st.core_time), _borrow(st.stride), _borrow(st.delta), _borrow(st.hist),
                 _borrow(st.pf_buf), _borrow(st.placement), _borrow(st.dev_params), _borrow(st.open_row),
                 _borrow(st.busy), _borrow(st.dev_stats), st.versions, _borrow(st.bus_log),
                 _borrow(st.class_of_reuse))


@njit(cache=True)
def _new_version(st):
    st.stats[ST_VERSION] += 1
    return st.stats[ST_VERSION]


@njit(cache=True)
def _log_bus(st, kind, src, line):
    st.stats[ST_BUS_RD + kind - 1] += 1
    if st.ip[I_CAPTURE] != 0:
        n = st.stats[ST_BUSLOG_N]
        if n < st.bus_log.shape[0]:
            st.bus_log[n, 0] = kind
            st.bus_log[n, 1] = src
            st.bus_log[n, 2] = line
            st.stats[ST_BUSLOG_N] = n + 1


@njit(cache=True)
def _memory_version(st, line):
    if st.ip[I_TRACK] == 0:
        return 0
    return st.versions.get(line, 0)


@njit(cache=True)
def _memory_access(st, line, now, cls, is_write, version):
    """One line transfer to or from the backend; returns ready time."""
    ip = st.ip
    page = line >> (ip[I_PAGE_SHIFT] - ip[I_LINE_SHIFT])
    dev = st.placement[page]
    if dev < 0:
        dev = place_page(st.placement, st.dev_params, st.dev_stats, page, ip[I_PLACE], cls)
        if dev < 0:
            st.stats[ST_ERROR] = 1
            return now
    ready, _ = service(st.dev_params, st.open_row, st.busy, st.dev_stats, dev, line << ip[I_LINE_SHIFT], now,
                       ip[I_LINE_BYTES], ip[I_LINE_SHIFT])
    if is_write and ip[I_TRACK] != 0:
        st.versions[line] = version
    return ready


@njit(cache=True)
def _l1_way(st, r, line):
    bits = st.ip[I_L1_BITS]
    s = line & ((1 << bits) - 1)
    return s, find_way(st.l1[r], s, line >> bits)


@njit(cache=True)
def _l2_way(st, r, line):
    bits = st.ip[I_L2_BITS]
    s = line & ((1 << bits) - 1)
    return s, find_way(st.l2[r], s, line >> bits)


@njit(cache=True)
def _l3_way(st, line):
    bits = st.ip[I_L3_BITS]
    s = line & ((1 << bits) - 1)
    return s, find_way(st.l3[0], s, line >> bits)


@njit(cache=True)
def _l1_drop(st, r, line):
    s, w = _l1_way(st, r, line)
    if w >= 0:
        remove(st.l1[r], s, w)


@njit(cache=True)
def _l1_update(st, r, line, dirty, version):
    s, w = _l1_way(st, r, line)
    if w >= 0:
        st.l1[r, s, w, DIRTY] = dirty
        st.l1[r, s, w, VERSION] = version


@njit(cache=True)
def _dir_remove(st, r, line):
    s3, w3 = _l3_way(st, line)
    if w3 >= 0:
        st.l3[0, s3, w3, SHARERS] &= ~(1 << r)
        if st.l3[0, s3, w3, OWNER] == r:
            st.l3[0, s3, w3, OWNER] = -1


@njit(cache=True)
def _writeback_below(st, line, version, now):
    """Dirty data leaving a private L2 lands in the L3, or in memory without one."""
    if st.ip[I_HAS_L3] != 0:
        s3, w3 = _l3_way(st, line)
        st.l3[0, s3, w3, DIRTY] = 1
        st.l3[0, s3, w3, VERSION] = version
    else:
        _memory_access(st, line, now, CLASS_NORMAL, True, version)
        st.stats[ST_MEM_WB] += 1


@njit(cache=True)
def _snoop_remote(st, r, line, kind, now):
    """Apply a bus event to requester r's copy; returns (supplied, version)."""
    s2, w2 = _l2_way(st, r, line)
    if w2 < 0:
        return False, 0
    l2 = st.l2[r]
    state = l2[s2, w2, STATE]
    new_state, supplied, writeback = snoop_reaction(state, kind)
    version = l2[s2, w2, VERSION]
    if writeback:
        st.stats[ST_M_EXITS] += 1
        _log_bus(st, WRITEBACK, r, line)
        _writeback_below(st, line, version, now)
    if new_state == INVALID:
        if l2[s2, w2, PREFETCHED] != 0:
            st.stats[ST_PF_USELESS] += 1
        _l1_drop(st, r, line)
        remove(l2, s2, w2)
        if st.ip[I_HAS_L3] != 0:
            _dir_remove(st, r, line)
    else:
        l2[s2, w2, STATE] = new_state
        if state == MODIFIED:
            l2[s2, w2, DIRTY] = 0
            _l1_update(st, r, line, 0, version)
        if st.ip[I_HAS_L3] != 0:
            s3, w3 = _l3_way(st, line)
            if st.l3[0, s3, w3, OWNER] == r:
                st.l3[0, s3, w3, OWNER] = -1
    return supplied, version


@njit(cache=True)
def _snoop_all(st, c, line, kind, now):
    """Deliver a bus event to every other holder; returns (holders, supplied, version)."""
    holders = 0
    supplied = False
    version = 0
    if st.ip[I_HAS_L3] != 0:
        s3, w3 = _l3_way(st, line)
        if w3 < 0:
            return 0, False, 0
        holders = st.l3[0, s3, w3, SHARERS] & ~(1 << c)
        r = 0
        rest = holders
        while rest != 0:
            if rest & 1:
                sup, v = _snoop_remote(st, r, line, kind, now)
                if sup:
                    supplied = True
                    version = v
            rest >>= 1
            r += 1
    else:
        for r in range(st.ip[I_REQ]):
            if r == c:
                continue
            s2, w2 = _l2_way(st, r, line)
            if w2 >= 0:
                holders |= 1 << r
                sup, v = _snoop_remote(st, r, line, kind, now)
                if sup:
                    supplied = True
                    version = v
    return holders, supplied, version


@njit(cache=True)
def _evict_l2_way(st, c, s2, w2, now):
    l2 = st.l2[c]
    line = (l2[s2, w2, TAG] << st.ip[I_L2_BITS]) | s2
    if _l1_way(st, c, line)[1] >= 0:
        st.stats[ST_INCL_VICTIMS] += 1
    _l1_drop(st, c, line)
    if l2[s2, w2, PREFETCHED] != 0:
        st.stats[ST_PF_USELESS] += 1
    if l2[s2, w2, STATE] == MODIFIED:
        st.stats[ST_M_EXITS] += 1
        _log_bus(st, WRITEBACK, c, line)
        _writeback_below(st, line, l2[s2, w2, VERSION], now)
    if st.ip[I_HAS_L3] != 0:
        _dir_remove(st, c, line)
    remove(l2, s2, w2)


@njit(cache=True)
def _evict_l3_way(st, s3, w3, now):
    """Evict an L3 line, back-invalidating every private copy first."""
    l3 = st.l3[0]
    line = (l3[s3, w3, TAG] << st.ip[I_L3_BITS]) | s3
    dirty = l3[s3, w3, DIRTY] != 0
    version = l3[s3, w3, VERSION]
    sharers = l3[s3, w3, SHARERS]
    r = 0
    while sharers != 0:
        if sharers & 1:
            st.stats[ST_BACKINV] += 1
            s2, w2 = _l2_way(st, r, line)
            if w2 >= 0:
                l2 = st.l2[r]
                if l2[s2, w2, STATE] == MODIFIED:
                    st.stats[ST_M_EXITS] += 1
                    _log_bus(st, WRITEBACK, r, line)
                    dirty = True
                    version = l2[s2, w2, VERSION]
                if l2[s2, w2, PREFETCHED] != 0:
                    st.stats[ST_PF_USELESS] += 1
                _l1_drop(st, r, line)
                remove(l2, s2, w2)
        sharers >>= 1
        r += 1
    if dirty:
        _memory_access(st, line, now, CLASS_NORMAL, True, version)
        st.stats[ST_MEM_WB] += 1
    remove(l3, s3, w3)


@njit(cache=True)
def _fill_l1(st, c, line, dirty, cls, version):
    l1 = st.l1[c]
    bits = st.ip[I_L1_BITS]
    s = line & ((1 << bits) - 1)
    w = choose_way(l1, s, st.ip[I_L1_POL])
    if l1[s, w, STATE] != INVALID:
        # the L2 copy already holds any dirty data of an L1 line
        remove(l1, s, w)
    install(l1, s, w, line >> bits, VALID, dirty, cls, False, 0, version, st.ip[I_L1_POL])


@njit(cache=True)
def _fill_l2(st, c, line, state, cls, prefetch, ready, version, now):
    l2 = st.l2[c]
    bits = st.ip[I_L2_BITS]
    s = line & ((1 << bits) - 1)
    w = choose_way(l2, s, st.ip[I_L2_POL])
    if l2[s, w, STATE] != INVALID:
        _evict_l2_way(st, c, s, w, now)
    install(l2, s, w, line >> bits, state, 1 if state == MODIFIED else 0, cls, prefetch, ready, version,
            st.ip[I_L2_POL])


@njit(cache=True)
def _fill_l3(st, line, cls, prefetch, ready, version, now):
    l3 = st.l3[0]
    bits = st.ip[I_L3_BITS]
    s = line & ((1 << bits) - 1)
    w = choose_way(l3, s, st.ip[I_L3_POL])
    if l3[s, w, STATE] != INVALID:
        _evict_l3_way(st, s, w, now)
    install(l3, s, w, line >> bits, VALID, 0, cls, prefetch, ready, version, st.ip[I_L3_POL])
    l3[s, w, PREFETCHED] = 0
    return s, w


@njit(cache=True)
def _set_owner(st, c, line, state):
    if st.ip[I_HAS_L3] != 0:
        s3, w3 = _l3_way(st, line)
        st.l3[0, s3, w3, SHARERS] |= 1 << c
        st.l3[0, s3, w3, OWNER] = c if state != SHARED else -1


# --- demand path -----------------------------------------------------------

@njit(cache=True)
def _write_hit(st, c, s2, w2, line, now):
    """Make c's L2 copy Modified; returns the new version."""
    l2 = st.l2[c]
    if l2[s2, w2, STATE] == SHARED:
        _log_bus(st, BUS_UPGR, c, line)
        _snoop_all(st, c, line, BUS_UPGR, now)
    version = _new_version(st)
    l2[s2, w2, STATE] = MODIFIED
    l2[s2, w2, DIRTY] = 1
    l2[s2, w2, VERSION] = version
    _set_owner(st, c, line, MODIFIED)
    return version


@njit(cache=True)
def _demand(st, c, line, is_write, cls, now):
    """Serve one line for requester c; returns (latency, reached_memory, version)."""
    ip = st.ip
    lat = ip[I_L1_LAT]
    s1, w1 = _l1_way(st, c, line)
    if w1 >= 0:
        st.stats[ST_L1_HIT] += 1
        touch(st.l1[c], s1, w1)
        if is_write:
            s2, w2 = _l2_way(st, c, line)
            version = _write_hit(st, c, s2, w2, line, now)
            st.l1[c, s1, w1, DIRTY] = 1
            st.l1[c, s1, w1, VERSION] = version
            return lat, False, version
        return lat, False, st.l1[c, s1, w1, VERSION]
    st.stats[ST_L1_MISS] += 1
    lat += ip[I_L2_LAT]
    l2 = st.l2[c]
    s2, w2 = _l2_way(st, c, line)
    if w2 >= 0:
        st.stats[ST_L2_HIT] += 1
        touch(l2, s2, w2)
        if l2[s2, w2, PREFETCHED] != 0:
            st.stats[ST_PF_USEFUL] += 1
            l2[s2, w2, PREFETCHED] = 0
        ready = l2[s2, w2, READY]
        if ready > now + lat:
            st.stats[ST_WAIT] += ready - (now + lat)
            lat = ready - now
        if is_write:
            version = _write_hit(st, c, s2, w2, line, now + lat)
        else:
            version = l2[s2, w2, VERSION]
        _fill_l1(st, c, line, 1 if is_write else 0, cls, version)
        return lat, False, version

    st.stats[ST_L2_MISS] += 1
    kind = BUS_RDX if is_write else BUS_RD
    _log_bus(st, kind, c, line)
    reached = False
    if ip[I_HAS_L3] != 0:
        lat += ip[I_L3_LAT]
        holders, _, _ = _snoop_all(st, c, line, kind, now + lat)
        s3, w3 = _l3_way(st, line)
        if w3 >= 0:
            st.stats[ST_L3_HIT] += 1
            touch(st.l3[0], s3, w3)
            ready = st.l3[0, s3, w3, READY]
            if ready > now + lat:
                st.stats[ST_WAIT] += ready - (now + lat)
                lat = ready - now
            version = st.l3[0, s3, w3, VERSION]
        else:
            st.stats[ST_L3_MISS] += 1
            t = now + lat
            version = _memory_version(st, line)
            ready = _memory_access(st, line, t, cls, False, 0)
            st.stats[ST_MEM_DEMAND] += 1
            st.stats[ST_MEM_WAIT] += ready - t
            lat += ready - t
            reached = True
            _fill_l3(st, line, cls, False, ready, version, now + lat)
    else:
        holders, supplied, version = _snoop_all(st, c, line, kind, now + lat)
        if supplied:
            st.stats[ST_C2C] += 1
        else:
            version = _memory_version(st, line)
            t = now + lat
            ready = _memory_access(st, line, t, cls, False, 0)
            st.stats[ST_MEM_DEMAND] += 1
            st.stats[ST_MEM_WAIT] += ready - t
            lat += ready - t
            reached = True
        # a remote copy that was only Shared or Exclusive supplies nothing
        # here; memory is current in that case
    if is_write:
        state = MODIFIED
        version = _new_version(st)
    elif holders != 0 and kind == BUS_RD:
        state = SHARED
    else:
        state = EXCLUSIVE
    _fill_l2(st, c, line, state, cls, False, 0, version, now + lat)
    _set_owner(st, c, line, state)
    _fill_l1(st, c, line, 1 if is_write else 0, cls, version)
    return lat, reached, version


@njit(cache=True)
def _prefetch(st, c, n, cls, now):
    """Issue the n candidates left in pf_buf by observe()."""
    ip = st.ip
    has_l3 = ip[I_HAS_L3] != 0
    for i in range(n):
        line = st.pf_buf[i, 0]
        if line >= st.placement.shape[0] << (ip[I_PAGE_SHIFT] - ip[I_LINE_SHIFT]):
            st.stats[ST_PF_FILTERED] += 1
            continue
        # the L1 is inclusive in the L2, so one lookup covers both
        s2, w2 = _l2_way(st, c, line)
        if w2 >= 0:
            st.stats[ST_PF_FILTERED] += 1
            continue
        s3 = 0
        w3 = -1
        if has_l3:
            s3, w3 = _l3_way(st, line)
            if w3 >= 0 and st.l3[0, s3, w3, SHARERS] & ~(1 << c) != 0:
                st.stats[ST_PF_FILTERED] += 1
                continue
        else:
            held = False
            for r in range(ip[I_REQ]):
                if r != c:
                    sr, wr = _l2_way(st, r, line)
                    if wr >= 0:
                        held = True
            if held:
                st.stats[ST_PF_FILTERED] += 1
                continue
        if st.pf_buf[i, 1] == TRIG_STRIDE:
            st.stats[ST_PF_STRIDE] += 1
        else:
            st.stats[ST_PF_DELTA] += 1
        st.stats[ST_BUS_PF] += 1
        if has_l3:
            t = now + ip[I_L3_LAT]
            if w3 >= 0:
                st.stats[ST_PF_L3_HIT] += 1
                touch(st.l3[0], s3, w3)
                ready = max(t, st.l3[0, s3, w3, READY])
                version = st.l3[0, s3, w3, VERSION]
            else:
                version = _memory_version(st, line)
                ready = _memory_access(st, line, t, cls, False, 0)
                st.stats[ST_MEM_PF] += 1
                _fill_l3(st, line, cls, True, ready, version, now)
        else:
            version = _memory_version(st, line)
            ready = _memory_access(st, line, now, cls, False, 0)
            st.stats[ST_MEM_PF] += 1
        if st.stats[ST_ERROR] != 0:
            return
        _fill_l2(st, c, line, EXCLUSIVE, cls, True, ready, version, now)
        _set_owner(st, c, line, EXCLUSIVE)


@njit(cache=True)
def _request(st, c, op, addr, size, reuse, tick):
    """Serve one trace request; returns (latency, reached_memory, version)."""
    ip = st.ip
    start = max(tick, st.core_time[c])
    cls = st.class_of_reuse[reuse]
    is_write = op == WRITE
    shift = ip[I_LINE_SHIFT]
    first = addr >> shift
    last = (addr + size - 1) >> shift
    n_pf = 0
    if ip[I_PF_KIND] != 0:
        n_pf = observe(st.stride[c], st.delta[c], st.hist[c], ip[I_PF_KIND], addr, ip[I_PF_DEG], ip[I_PF_DIST],
                       shift, st.pf_buf)
    lat = 0
    reached = False
    version = 0
    for line in range(first, last + 1):
        l, r, v = _demand(st, c, line, is_write, cls, start + lat)
        lat += l
        reached = reached or r
        version = v
    if last > first:
        st.stats[ST_SPLITS] += 1
    if n_pf > 0 and st.stats[ST_ERROR] == 0:
        _prefetch(st, c, n_pf, cls, start + lat)
    st.stats[ST_REQUESTS] += 1
    st.stats[ST_LATENCY] += lat
    st.stats[ST_DEMAND_BYTES] += size
    if reached:
        st.stats[ST_MEM_REQUESTS] += 1
    st.core_time[c] = start + lat
    return lat, reached, version


@njit(cache=True)
def _snapshot(st, lines, out_row):
    for j in range(lines.shape[0]):
        for r in range(st.ip[I_REQ]):
            s2, w2 = _l2_way(st, r, lines[j])
            out_row[j, r] = st.l2[r, s2, w2, STATE] if w2 >= 0 else INVALID


@njit(cache=True)
def _run(owned, ticks, ops, addrs, sizes, reuse, order, offsets, record, snap_lines, snaps):
    """Drive the per-core queues to completion; returns the index of a
    request that hit an error, or -1."""
    st = _borrowed(owned)
    n_req = st.ip[I_REQ]
    cursor = offsets[:-1].copy()
    end = offsets[1:]
    for k in range(order.shape[0]):
        best = -1
        best_t = 0
        for c in range(n_req):
            if cursor[c] < end[c]:
                t = max(ticks[order[cursor[c]]], st.core_time[c])
                if best < 0 or t < best_t:
                    best = c
                    best_t = t
        i = order[cursor[best]]
        cursor[best] += 1
        lat, reached, version = _request(st, best, ops[i], addrs[i], sizes[i], reuse[i], ticks[i])
        if st.stats[ST_ERROR] != 0:
            return i
        if record.shape[0] > 0:
            record[k, R_INDEX] = i
            record[k, R_LATENCY] = lat
            record[k, R_MEMORY] = 1 if reached else 0
            record[k, R_VERSION] = version
        if snaps.shape[0] > 0:
            _snapshot(st, snap_lines, snaps[k])
    return -1


# --- Python front end ------------------------------------------------------

@dataclass(frozen=True)
class AccessResult:
    latency: int
    reached_memory: bool
    version: int


@dataclass
class RunRecord:
    """Per-request outcomes in dispatch order (``index`` points into the trace)."""

    index: np.ndarray
    latency: np.ndarray
    reached_memory: np.ndarray
    version: np.ndarray
    states: Optional[np.ndarray] = None


def _empty_versions():
    return Dict.empty(key_type=types.int64, value_type=types.int64)


class Simulator:
    """Mutable simulation state for one configuration.

    ``track_versions`` enables the last-writer data tokens in memory;
    ``capture_events`` keeps a log of bus events for inspection.
    """

    def __init__(self, config: SimConfig, track_versions: bool = False, capture_events: bool = False,
                 event_capacity: int = 1 << 16):
        self.config = config
        req = config.requesters
        line = config.line_bytes
        ip = np.zeros(I_FIELDS, dtype=np.int64)
        ip[I_LINE_SHIFT] = line.bit_length() - 1
        ip[I_LINE_BYTES] = line
        ip[I_REQ] = req
        ip[I_HAS_L3] = 1 if config.l3 is not None else 0
        for geom, bits, lat, pol in ((config.l1, I_L1_BITS, I_L1_LAT, I_L1_POL),
                                     (config.l2, I_L2_BITS, I_L2_LAT, I_L2_POL),
                                     (config.l3, I_L3_BITS, I_L3_LAT, I_L3_POL)):
            if geom is None:
                continue
            ip[bits] = geom.sets.bit_length() - 1
            ip[lat] = geom.hit_latency
            ip[pol] = policy_code(geom.replacement_policy)
        ip[I_PF_KIND] = kind_code(config.prefetcher)
        ip[I_PF_DEG] = config.prefetch_degree
        ip[I_PF_DIST] = config.prefetch_distance
        ip[I_PAGE_SHIFT] = config.memory.page_bytes.bit_length() - 1
        ip[I_PLACE] = placement_code(config.memory.placement_policy)
        ip[I_TRACK] = 1 if track_versions else 0
        ip[I_CAPTURE] = 1 if capture_events else 0

        l3 = new_lines(config.l3.sets, config.l3.associativity, 1) if config.l3 else new_lines(1, 1, 1)
        stride, delta, hist = new_tables(req)
        pages = config.memory.capacity_bytes // config.memory.page_bytes
        open_row, busy, dev_stats = new_state(config.memory)
        self.st = State(
            ip=ip,
            stats=np.zeros(NSTATS, dtype=np.int64),
            l1=new_lines(config.l1.sets, config.l1.associativity, req),
            l2=new_lines(config.l2.sets, config.l2.associativity, req),
            l3=l3,
            core_time=np.zeros(req, dtype=np.int64),
            stride=stride,
            delta=delta,
            hist=hist,
            pf_buf=np.zeros((max(config.prefetch_degree, 1), 2), dtype=np.int64),
            placement=np.full(pages, -1, dtype=np.int8),
            dev_params=device_params(config.memory, line),
            open_row=open_row,
            busy=busy,
            dev_stats=dev_stats,
            versions=_empty_versions(),
            bus_log=np.zeros((event_capacity if capture_events else 0, 3), dtype=np.int64),
            class_of_reuse=_CLASS_OF_REUSE,
        )
        self.wall_seconds = 0.0

    # -- driving --

    def validate(self, trace: np.ndarray) -> None:
        """Reject traces the engine cannot simulate, before touching any state."""
        if len(trace) == 0:
            return
        cfg = self.config
        if int(trace["core"].max()) >= cfg.requesters:
            raise WorkloadError(f"trace uses core {int(trace['core'].max())} but config has {cfg.requesters} requesters")
        sizes = trace["size"]
        if int(sizes.min()) < 1 or int(sizes.max()) > cfg.line_bytes:
            raise WorkloadError(f"request sizes must lie in 1..{cfg.line_bytes}")
        end = trace["address"].astype(np.uint64) + sizes.astype(np.uint64)
        top = int(end.max())
        if top > cfg.memory.capacity_bytes:
            raise WorkloadError(f"trace address {top - 1:#x} is beyond total memory capacity "
                                f"{cfg.memory.capacity_bytes:#x}")
        if int(trace["reuse"].min()) < -1 or int(trace["reuse"].max()) > 3:
            raise WorkloadError("reuse class codes must lie in -1..3")
        check_monotonic(trace)

    def run_trace(self, trace: np.ndarray, record: bool = False,
                  snapshot_addresses: Optional[np.ndarray] = None) -> Optional[RunRecord]:
        self.validate(trace)
        n = len(trace)
        req = self.config.requesters
        cores = trace["core"].astype(np.int64)
        order = np.argsort(cores, kind="stable").astype(np.int64)
        offsets = np.zeros(req + 1, dtype=np.int64)
        offsets[1:] = np.cumsum(np.bincount(cores, minlength=req))
        rec = np.zeros((n if record else 0, R_FIELDS), dtype=np.int64)
        if snapshot_addresses is not None:
            snap_lines = np.asarray(snapshot_addresses, dtype=np.int64) >> int(self.st.ip[I_LINE_SHIFT])
            snaps = np.zeros((n, len(snap_lines), req), dtype=np.int8)
        else:
            snap_lines = np.zeros(0, dtype=np.int64)
            snaps = np.zeros((0, 0, req), dtype=np.int8)
        t0 = time.perf_counter()
        bad = _run(self.st, trace["tick"].astype(np.int64), trace["op"].astype(np.int64),
                   trace["address"].astype(np.int64), trace["size"].astype(np.int64),
                   trace["reuse"].astype(np.int64), order, offsets, rec, snap_lines, snaps)
        self.wall_seconds += time.perf_counter() - t0
        if bad >= 0:
            raise MemoryCapacityError(f"out of memory placing the page of request {bad}: DRAM and HBM are full")
        if not record and snapshot_addresses is None:
            return None
        return RunRecord(rec[:, R_INDEX], rec[:, R_LATENCY], rec[:, R_MEMORY].astype(bool), rec[:, R_VERSION],
                         snaps if snapshot_addresses is not None else None)

    def access(self, core: int, address: int, is_write: bool = False, size: Optional[int] = None,
               hint: Optional[TensorHint] = None, tick: Optional[int] = None) -> AccessResult:
        """Serve a single request immediately (issued when the core is free)."""
        size = self.config.line_bytes - address % self.config.line_bytes if size is None else size
        if not 0 <= core < self.config.requesters:
            raise ValueError(f"core {core} out of range")
        if not 1 <= size <= self.config.line_bytes or address + size > self.config.memory.capacity_bytes:
            raise ValueError("request outside memory or of invalid size")
        tick = int(self.st.core_time[core]) if tick is None else tick
        reuse = -1 if hint is None else int(hint.reuse_class)
        lat, reached, version = _request(self.st, core, WRITE if is_write else 0, address, size, reuse, tick)
        if self.st.stats[ST_ERROR]:
            raise MemoryCapacityError("out of memory: DRAM and HBM are full")
        return AccessResult(int(lat), bool(reached), int(version))

    # -- inspection --

    @property
    def stats(self) -> dict[str, int]:
        return {name: int(v) for name, v in zip(STAT_NAMES, self.st.stats) if name not in _INTERNAL_STATS}

    def _line(self, address: int) -> int:
        return address >> int(self.st.ip[I_LINE_SHIFT])

    def l2_state(self, core: int, address: int) -> CoherenceState:
        s, w = _l2_way(self.st, core, self._line(address))
        return CoherenceState(int(self.st.l2[core, s, w, STATE])) if w >= 0 else CoherenceState.INVALID

    def coherence_states(self, address: int) -> list[CoherenceState]:
        return [self.l2_state(r, address) for r in range(self.config.requesters)]

    def in_l1(self, core: int, address: int) -> bool:
        return _l1_way(self.st, core, self._line(address))[1] >= 0

    def in_l3(self, address: int) -> bool:
        return self.config.l3 is not None and _l3_way(self.st, self._line(address))[1] >= 0

    def directory(self, address: int) -> Optional[tuple[frozenset[int], Optional[int]]]:
        """(sharers, owner) recorded in the L3 for a line, None if not cached."""
        if self.config.l3 is None:
            return None
        s, w = _l3_way(self.st, self._line(address))
        if w < 0:
            return None
        mask = int(self.st.l3[0, s, w, SHARERS])
        owner = int(self.st.l3[0, s, w, OWNER])
        return frozenset(r for r in range(self.config.requesters) if mask >> r & 1), (None if owner < 0 else owner)

    def bus_events(self) -> list[BusEvent]:
        n = int(self.st.stats[ST_BUSLOG_N])
        shift = int(self.st.ip[I_LINE_SHIFT])
        return [BusEvent(BusEventKind(int(k)), int(src), int(line) << shift) for k, src, line in self.st.bus_log[:n]]

    def clear_bus_events(self) -> None:
        self.st.stats[ST_BUSLOG_N] = 0

    def check_structure(self) -> list[str]:
        """Inclusion, directory and rank-permutation checks; returns problems found."""
        problems = []
        st = self.st
        cfg = self.config
        for name, arr in (("l1", st.l1), ("l2", st.l2), ("l3", st.l3)):
            if name == "l3" and cfg.l3 is None:
                continue
            for r in range(arr.shape[0]):
                for s in range(arr.shape[1]):
                    if not ranks_are_permutation(arr[r], s):
                        problems.append(f"{name}[{r}] set {s}: ranks are not a permutation")
        b1, b2 = int(st.ip[I_L1_BITS]), int(st.ip[I_L2_BITS])
        for r in range(cfg.requesters):
            for s, w in zip(*np.nonzero(st.l1[r, :, :, STATE])):
                line = (int(st.l1[r, s, w, TAG]) << b1) | int(s)
                if _l2_way(st, r, line)[1] < 0:
                    problems.append(f"core {r}: line {line:#x} in L1 but not L2")
            for s, w in zip(*np.nonzero(st.l2[r, :, :, STATE])):
                line = (int(st.l2[r, s, w, TAG]) << b2) | int(s)
                if cfg.l3 is not None:
                    s3, w3 = _l3_way(st, line)
                    if w3 < 0:
                        problems.append(f"core {r}: line {line:#x} in L2 but not L3")
                    elif not int(st.l3[0, s3, w3, SHARERS]) >> r & 1:
                        problems.append(f"core {r}: line {line:#x} missing from directory")
        return problems

    # -- results --

    def events(self) -> dict[str, int]:
        s = self.st.stats
        d = self.st.dev_stats
        return {
            "l1_access": int(s[ST_L1_HIT] + s[ST_L1_MISS]),
            "l2_access": int(s[ST_L2_HIT] + s[ST_L2_MISS]),
            "l3_access": int(s[ST_L3_HIT] + s[ST_L3_MISS]),
            "dram_access": int(d[DRAM, M_ACCESSES]),
            "hbm_access": int(d[HBM, M_ACCESSES]),
            "bus_transfer": int(s[ST_BUS_RD] + s[ST_BUS_RDX] + s[ST_BUS_UPGR] + s[ST_BUS_WB] + s[ST_BUS_PF]),
        }

    def report(self, workload: str = "") -> SimReport:
        s = self.st.stats
        d = self.st.dev_stats
        requests = int(s[ST_REQUESTS])
        ticks = int(self.st.core_time.max()) if requests else 0
        levels = {"l1": (ST_L1_HIT, ST_L1_MISS), "l2": (ST_L2_HIT, ST_L2_MISS)}
        if self.config.l3 is not None:
            levels["l3"] = (ST_L3_HIT, ST_L3_MISS)
        hit_rates = {name: hit_rate_pct(int(s[h]), int(s[h] + s[m])) for name, (h, m) in levels.items()}
        hit_rates["overall"] = hit_rate_pct(requests - int(s[ST_MEM_REQUESTS]), requests)
        issued = int(s[ST_PF_STRIDE] + s[ST_PF_DELTA])
        counters = self.stats
        for dev, name in ((DRAM, "dram"), (HBM, "hbm")):
            counters[f"{name}_bytes"] = int(d[dev, M_BYTES])
            counters[f"{name}_accesses"] = int(d[dev, M_ACCESSES])
            counters[f"{name}_row_hits"] = int(d[dev, M_ROW_HITS])
            counters[f"{name}_pages"] = int(d[dev, M_PAGES])
        events = self.events()
        return SimReport(
            config=self.config.name,
            workload=workload,
            requests=requests,
            avg_latency_ns=int(s[ST_LATENCY]) / requests if requests else None,
            bandwidth_gbs=bandwidth_gbs(int(s[ST_DEMAND_BYTES]), ticks),
            memory_bandwidth_gbs=bandwidth_gbs(int(d[DRAM, M_BYTES] + d[HBM, M_BYTES]), ticks),
            hit_rate_pct=hit_rates,
            energy_uj_per_op=energy_per_op(events, requests, self.config.energy),
            prefetch_accuracy=int(s[ST_PF_USEFUL]) / issued if issued else None,
            simulated_ticks=ticks,
            total_latency_cycles=int(s[ST_LATENCY]),
            memory_requests=int(s[ST_MEM_REQUESTS]),
            counters=counters,
            events=events,
            wall_seconds=self.wall_seconds,
        )

    def placement(self) -> dict[int, int]:
        pages = np.nonzero(self.st.placement >= 0)[0]
        return {int(p): int(self.st.placement[p]) for p in pages}


def run(config: SimConfig, trace: Optional[np.ndarray] = None, workload: str = "") -> SimReport:
    """Simulate ``trace`` on a fresh hierarchy built from ``config``."""
    sim = Simulator(config)
    sim.run_trace(empty_trace() if trace is None else trace)
    return sim.report(workload)
