import pytest

from hermes.cache import ReuseClass, TensorHint
from hermes.config import HybridMemoryConfig, MemoryDeviceConfig, PlacementPolicy
from hermes.memory import Device, HybridMemory, MemoryCapacityError, transfer_cycles

HOT = TensorHint(0, ReuseClass.WEIGHT)
COLD = TensorHint(1, ReuseClass.ACTIVATION)


def mem(policy=PlacementPolicy.STATIC_HOT_FIRST, dram_pages=16, hbm_pages=16):
    cfg = HybridMemoryConfig(
        dram=MemoryDeviceConfig(dram_pages * 4096, 2, 100, 180, 8.0),
        hbm=MemoryDeviceConfig(hbm_pages * 4096, 8, 60, 110, 16.0),
        placement_policy=policy,
    )
    return HybridMemory(cfg)


def test_transfer_cycles_round_up():
    dev = MemoryDeviceConfig(4096, 1, 1, 1, 24.0)
    assert transfer_cycles(dev, 64) == 3
    assert transfer_cycles(MemoryDeviceConfig(4096, 1, 1, 1, 128.0), 64) == 1


def test_row_miss_then_hit():
    m = mem(PlacementPolicy.ALL_DRAM)
    m.ensure_placed(0)
    first = m.service(0, now=0)
    # line 2 shares channel 0 and the open row
    second = m.service(128, now=1000)
    assert (first.ready_at, first.row_hit) == (180, False)
    assert (second.ready_at, second.row_hit) == (1100, True)
    assert first.device is Device.DRAM


def test_channel_queueing():
    m = mem(PlacementPolicy.ALL_DRAM)
    m.ensure_placed(0)
    a = m.service(0, now=0)
    b = m.service(128, now=0)  # same channel: waits for the 8-cycle transfer
    c = m.service(64, now=0)  # other channel: no wait
    assert a.ready_at == 180
    assert b.ready_at == 8 + 100
    assert c.ready_at == 180


def test_static_hot_first():
    m = mem()
    assert m.place_page(0, HOT) is Device.HBM
    assert m.place_page(1, COLD) is Device.DRAM
    assert m.place_page(2, None) is Device.DRAM


def test_hot_pages_spill_to_dram_when_hbm_full():
    m = mem(hbm_pages=1)
    assert m.place_page(0, HOT) is Device.HBM
    assert m.place_page(1, HOT) is Device.DRAM


def test_round_robin_alternates():
    m = mem(PlacementPolicy.ROUND_ROBIN)
    got = [m.place_page(p) for p in range(4)]
    assert got == [Device.DRAM, Device.HBM, Device.DRAM, Device.HBM]


def test_all_dram_and_oom():
    m = mem(PlacementPolicy.ALL_DRAM, dram_pages=2)
    assert [m.place_page(p, HOT) for p in range(2)] == [Device.DRAM, Device.DRAM]
    with pytest.raises(MemoryCapacityError):
        m.place_page(2)


def test_oom_when_both_full():
    m = mem(dram_pages=1, hbm_pages=1)
    m.place_page(0)
    m.place_page(1)
    with pytest.raises(MemoryCapacityError):
        m.place_page(2)
    assert m.allocated_pages(Device.DRAM) == m.allocated_pages(Device.HBM) == 1


def test_placement_is_sticky():
    m = mem()
    assert m.ensure_placed(0, HOT) is Device.HBM
    assert m.ensure_placed(100, COLD) is Device.HBM
    with pytest.raises(ValueError):
        m.place_page(0)


def test_service_preconditions():
    m = mem()
    with pytest.raises(ValueError, match="placed"):
        m.service(0, 0)
    m.ensure_placed(0)
    with pytest.raises(ValueError, match="aligned"):
        m.service(3, 0)


def test_bandwidth_window():
    m = mem(PlacementPolicy.ALL_DRAM)
    m.ensure_placed(0)
    for i in range(4):
        m.service(i * 64, now=0)
    # two channels, two 8-cycle transfers each: busy [0, 16)
    assert m.bytes_transferred(Device.DRAM) == 256
    assert m.achieved_bandwidth(Device.DRAM, 0, 16) == pytest.approx(16.0)
    assert m.achieved_bandwidth(Device.DRAM, 0, 4) == pytest.approx(16.0)
    assert m.achieved_bandwidth(Device.DRAM, 8, 24) == pytest.approx(8.0)
    assert m.achieved_bandwidth(Device.HBM, 0, 16) == 0.0
    assert m.achieved_bandwidth(Device.DRAM, 0, 16) <= m.peak_gbs(Device.DRAM)
    with pytest.raises(ValueError):
        m.achieved_bandwidth(Device.DRAM, 5, 5)
