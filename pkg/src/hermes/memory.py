"""DRAM + HBM backend: page placement, single-bank row-buffer timing per
channel, and bandwidth accounting."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

import numpy as np
from numba import njit

from .cache import CLASS_HIGH_REUSE, TensorHint, priority_of
from .config import HybridMemoryConfig, MemoryDeviceConfig, PlacementPolicy

DRAM = 0
HBM = 1

PLACE_STATIC_HOT_FIRST = 0
PLACE_ROUND_ROBIN = 1
PLACE_ALL_DRAM = 2

# device parameter columns
P_CHANNELS, P_ROW_HIT, P_ROW_MISS, P_XFER, P_ROW_BYTES, P_CAP_PAGES = 0, 1, 2, 3, 4, 5
P_FIELDS = 6

# device statistic columns
M_BYTES, M_ACCESSES, M_ROW_HITS, M_PAGES, M_BUSY = 0, 1, 2, 3, 4
M_FIELDS = 5


class Device(IntEnum):
    DRAM = DRAM
    HBM = HBM


class MemoryCapacityError(RuntimeError):
    """Both devices are full."""


def placement_code(policy: PlacementPolicy) -> int:
    return {
        PlacementPolicy.STATIC_HOT_FIRST: PLACE_STATIC_HOT_FIRST,
        PlacementPolicy.ROUND_ROBIN: PLACE_ROUND_ROBIN,
        PlacementPolicy.ALL_DRAM: PLACE_ALL_DRAM,
    }[PlacementPolicy(policy)]


def transfer_cycles(device: MemoryDeviceConfig, line_bytes: int) -> int:
    """Channel occupancy of one line, rounded up to whole cycles."""
    return max(1, int(np.ceil(line_bytes / device.bytes_per_cycle_per_channel)))


def device_params(config: HybridMemoryConfig, line_bytes: int) -> np.ndarray:
    params = np.zeros((2, P_FIELDS), dtype=np.int64)
    for d, dev in ((DRAM, config.dram), (HBM, config.hbm)):
        params[d] = (dev.channels, dev.row_hit_latency, dev.row_miss_latency, transfer_cycles(dev, line_bytes),
                     dev.row_bytes, dev.capacity_bytes // config.page_bytes)
    return params


def new_state(config: HybridMemoryConfig):
    """(open_row, busy_until, stats) arrays for a fresh backend."""
    width = max(config.dram.channels, config.hbm.channels)
    open_row = np.full((2, width), -1, dtype=np.int64)
    busy = np.zeros((2, width), dtype=np.int64)
    stats = np.zeros((2, M_FIELDS), dtype=np.int64)
    return open_row, busy, stats


@njit(cache=True)
def place_page(placement, params, stats, page, policy, cls):
    """Assign a device to an unplaced page; -1 when both devices are full."""
    dram_free = stats[DRAM, M_PAGES] < params[DRAM, P_CAP_PAGES]
    hbm_free = stats[HBM, M_PAGES] < params[HBM, P_CAP_PAGES]
    if policy == PLACE_ALL_DRAM:
        dev = DRAM if dram_free else -1
    elif policy == PLACE_STATIC_HOT_FIRST:
        if cls == CLASS_HIGH_REUSE and hbm_free:
            dev = HBM
        elif dram_free:
            dev = DRAM
        elif hbm_free:
            dev = HBM
        else:
            dev = -1
    else:
        first = (stats[DRAM, M_PAGES] + stats[HBM, M_PAGES]) % 2
        if first == DRAM:
            dev = DRAM if dram_free else (HBM if hbm_free else -1)
        else:
            dev = HBM if hbm_free else (DRAM if dram_free else -1)
    if dev >= 0:
        placement[page] = dev
        stats[dev, M_PAGES] += 1
    return dev


@njit(cache=True)
def service(params, open_row, busy, stats, dev, addr, now, line_bytes, line_shift):
    """Serve one line transfer; returns (ready_at, row_hit)."""
    ch = (addr >> line_shift) % params[dev, P_CHANNELS]
    row = addr // params[dev, P_ROW_BYTES]
    hit = open_row[dev, ch] == row
    latency = params[dev, P_ROW_HIT] if hit else params[dev, P_ROW_MISS]
    open_row[dev, ch] = row
    start = max(now, busy[dev, ch])
    busy[dev, ch] = start + params[dev, P_XFER]
    stats[dev, M_BYTES] += line_bytes
    stats[dev, M_ACCESSES] += 1
    stats[dev, M_BUSY] += params[dev, P_XFER]
    if hit:
        stats[dev, M_ROW_HITS] += 1
    return start + latency, hit


@dataclass(frozen=True)
class MemoryReply:
    ready_at: int
    device: Device
    row_hit: bool
    bytes: int


class HybridMemory:
    """Standalone backend with a transfer log for windowed bandwidth queries.

    Pages are placed explicitly with :meth:`place_page` (or on first touch via
    :meth:`ensure_placed`); :meth:`service` refuses unplaced pages.
    """

    def __init__(self, config: Optional[HybridMemoryConfig] = None, line_bytes: int = 64):
        self.config = config or HybridMemoryConfig()
        self.line_bytes = line_bytes
        self._line_shift = line_bytes.bit_length() - 1
        self._page_shift = self.config.page_bytes.bit_length() - 1
        self.params = device_params(self.config, line_bytes)
        self.open_row, self.busy, self.stats = new_state(self.config)
        self._policy = placement_code(self.config.placement_policy)
        self._placement_arr = np.full(1, -1, dtype=np.int8)
        self.placement: dict[int, Device] = {}
        self.transfers: list[tuple[int, int, int, int]] = []  # (device, begin, end, bytes)

    def place_page(self, page: int, hint: Optional[TensorHint] = None) -> Device:
        if page in self.placement:
            raise ValueError(f"page {page} is already placed on {self.placement[page].name}")
        dev = place_page(self._placement_arr, self.params, self.stats, 0, self._policy, priority_of(hint))
        if dev < 0:
            raise MemoryCapacityError(f"out of memory placing page {page}: DRAM and HBM are both full")
        self.placement[page] = Device(dev)
        return Device(dev)

    def ensure_placed(self, address: int, hint: Optional[TensorHint] = None) -> Device:
        page = address >> self._page_shift
        if page in self.placement:
            return self.placement[page]
        return self.place_page(page, hint)

    def allocated_pages(self, device: Device) -> int:
        return int(self.stats[device, M_PAGES])

    def service(self, address: int, now: int) -> MemoryReply:
        if address % self.line_bytes:
            raise ValueError(f"address {address:#x} is not line-aligned")
        page = address >> self._page_shift
        if page not in self.placement:
            raise ValueError(f"page {page} has not been placed")
        dev = int(self.placement[page])
        ch = (address >> self._line_shift) % int(self.params[dev, P_CHANNELS])
        begin = max(now, int(self.busy[dev, ch]))
        ready, hit = service(self.params, self.open_row, self.busy, self.stats, dev, address, now,
                             self.line_bytes, self._line_shift)
        self.transfers.append((dev, begin, begin + int(self.params[dev, P_XFER]), self.line_bytes))
        return MemoryReply(int(ready), Device(dev), bool(hit), self.line_bytes)

    def bytes_transferred(self, device: Device) -> int:
        return int(self.stats[device, M_BYTES])

    def achieved_bandwidth(self, device: Device, start: int, end: int) -> float:
        """GB/s moved by ``device`` during [start, end), prorating transfers
        that straddle the window edges."""
        if end <= start:
            raise ValueError("bandwidth window must be non-empty")
        moved = 0.0
        for dev, begin, finish, nbytes in self.transfers:
            if dev != device:
                continue
            overlap = min(finish, end) - max(begin, start)
            if overlap > 0:
                moved += nbytes * overlap / (finish - begin)
        return moved / (end - start)

    def peak_gbs(self, device: Device) -> float:
        dev = self.config.hbm if device == Device.HBM else self.config.dram
        return dev.peak_gbs
