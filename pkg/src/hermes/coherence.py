"""MESI coherence: transition tables, snoop reactions, and invariant checks.

The engine applies these transitions to the private L2s (which hold the
authoritative state) and keeps an L3-resident directory of sharers.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Sequence

from numba import njit

INVALID = 0
SHARED = 1
EXCLUSIVE = 2
MODIFIED = 3

NO_BUS = 0
BUS_RD = 1
BUS_RDX = 2
BUS_UPGR = 3
WRITEBACK = 4


class CoherenceState(IntEnum):
    INVALID = INVALID
    SHARED = SHARED
    EXCLUSIVE = EXCLUSIVE
    MODIFIED = MODIFIED

    @property
    def letter(self) -> str:
        return "ISEM"[self]


class BusEventKind(IntEnum):
    BUS_RD = BUS_RD
    BUS_RDX = BUS_RDX
    BUS_UPGR = BUS_UPGR
    WRITEBACK = WRITEBACK


@dataclass(frozen=True)
class BusEvent:
    kind: BusEventKind
    source_core: int
    address: int


@dataclass(frozen=True)
class SnoopResponse:
    data_supplied: bool
    writeback: bool
    new_state: CoherenceState


@njit(cache=True)
def snoop_reaction(state, kind):
    """(new_state, data_supplied, writeback) of a cache observing a remote bus event."""
    if state == INVALID or kind == WRITEBACK:
        return state, False, False
    if kind == BUS_RD:
        if state == MODIFIED:
            return SHARED, True, True
        return SHARED, False, False
    # BusRdX and BusUpgr both demand exclusivity
    if state == MODIFIED:
        return INVALID, True, True
    return INVALID, False, False


@njit(cache=True)
def read_transition(state, others_hold):
    """(new_state, bus event) for a processor read."""
    if state != INVALID:
        return state, NO_BUS
    if others_hold:
        return SHARED, BUS_RD
    return EXCLUSIVE, BUS_RD


@njit(cache=True)
def write_transition(state):
    """(new_state, bus event) for a processor write."""
    if state == MODIFIED or state == EXCLUSIVE:
        return MODIFIED, NO_BUS
    if state == SHARED:
        return MODIFIED, BUS_UPGR
    return MODIFIED, BUS_RDX


def snoop(state: CoherenceState, event: BusEvent | BusEventKind) -> SnoopResponse:
    kind = event.kind if isinstance(event, BusEvent) else event
    new_state, supplied, writeback = snoop_reaction(int(state), int(kind))
    return SnoopResponse(bool(supplied), bool(writeback), CoherenceState(new_state))


def check_global_invariants(states: Iterable[CoherenceState | int]) -> bool:
    """Single-writer/multiple-reader check over every private copy of one line."""
    states = [int(s) for s in states]
    owners = sum(1 for s in states if s in (MODIFIED, EXCLUSIVE))
    if owners > 1:
        return False
    if MODIFIED in states:
        return all(s == INVALID for s in states if s != MODIFIED)
    return True


def on_core_read(system, core: int, address: int) -> tuple[list[BusEvent], CoherenceState]:
    """Run a read through ``system`` (an engine Simulator) and report the bus
    traffic it caused plus the requester's resulting state."""
    system.clear_bus_events()
    system.access(core, address, is_write=False)
    return system.bus_events(), system.l2_state(core, address)


def on_core_write(system, core: int, address: int) -> tuple[list[BusEvent], CoherenceState]:
    system.clear_bus_events()
    system.access(core, address, is_write=True)
    return system.bus_events(), system.l2_state(core, address)


def sharers_of(states: Sequence[CoherenceState]) -> frozenset[int]:
    return frozenset(i for i, s in enumerate(states) if s != CoherenceState.INVALID)
