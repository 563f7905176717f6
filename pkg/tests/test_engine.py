import dataclasses

import pytest

from hermes.cache import ReuseClass, TensorHint
from hermes.config import HybridMemoryConfig, MemoryDeviceConfig, PrefetcherKind, SimConfig, hermes_configs
from hermes.engine import Simulator, run
from hermes.memory import MemoryCapacityError
from hermes.workload import (
    AttentionSpec, GemmSpec, WorkloadError, gen_attention, gen_gemm, gen_random, parse_trace,
)

from conftest import small_config

BASELINE, SHARED, PREFETCH, TENSOR = hermes_configs()


def test_cold_read_latency_adds_every_level():
    assert Simulator(SimConfig()).access(0, 0).latency == 2 + 12 + 40 + 180
    assert Simulator(BASELINE).access(0, 0).latency == 2 + 12 + 180


def test_hit_latencies():
    sim = Simulator(small_config())
    sim.access(0, 0)
    assert sim.access(0, 0).latency == 2
    # evict line 0 from the 2-way L1 set 0 (4 sets) but not from the L2
    sim.access(0, 4 * 64)
    sim.access(0, 8 * 64)
    res = sim.access(0, 0)
    assert res.latency == 14 and not res.reached_memory


def test_row_buffer_hit_on_second_line():
    sim = Simulator(BASELINE)
    sim.access(0, 0)
    # line 2 is on channel 0 again and in the same open row
    assert sim.access(0, 128).latency == 2 + 12 + 100


def test_hinted_weight_goes_to_hbm():
    sim = Simulator(SHARED)
    res = sim.access(0, 0, hint=TensorHint(1, ReuseClass.WEIGHT))
    assert res.latency == 2 + 12 + 40 + 110
    assert sim.placement() == {0: 1}


def test_split_request():
    sim = Simulator(BASELINE)
    res = sim.access(0, 60, size=8)
    assert res.latency == 194 + 194  # two cold lines, probed one after the other
    assert sim.stats["split_requests"] == 1
    assert sim.stats["requests"] == 1
    assert sim.stats["l1_misses"] == 2


def test_dispatch_by_effective_start_then_core():
    trace = parse_trace("0 0 R 0x0 8\n0 1 R 0x40 8\n1 0 R 0x0 8\n1 1 R 0x40 8\n300 1 R 0x80 8\n")
    sim = Simulator(small_config(cores=2))
    rec = sim.run_trace(trace, record=True)
    # both cores start at 0 (core 0 first); afterwards each core waits for its own miss
    assert rec.index.tolist() == [0, 1, 2, 3, 4]
    trace = parse_trace("0 0 R 0x0 8\n5 0 R 0x1000 8\n1 1 R 0x40 8\n2 1 R 0x40 8\n")
    rec = Simulator(small_config(cores=2)).run_trace(trace, record=True)
    # core 0 is free again at 234, core 1 at 1 + 234 = 235, so core 0 goes first
    assert rec.index.tolist() == [0, 2, 1, 3]
    assert rec.latency.tolist()[:2] == [234, 234]


def test_run_record_latency_sums_to_total():
    trace = gen_random(3000, cores=4, lines=300, seed=2)
    sim = Simulator(small_config())
    rec = sim.run_trace(trace, record=True)
    assert int(rec.latency.sum()) == sim.stats["latency_cycles"]
    assert int(rec.reached_memory.sum()) == sim.stats["memory_requests"]
    assert sorted(rec.index.tolist()) == list(range(len(trace)))


@pytest.mark.parametrize("cfg", [small_config(l3=False), small_config(),
                                 small_config(prefetcher=PrefetcherKind.BOTH),
                                 small_config(prefetcher=PrefetcherKind.BOTH,
                                              l2=dataclasses.replace(small_config().l2,
                                                                     replacement_policy="TensorAware"),
                                              l3=dataclasses.replace(small_config().l3,
                                                                     replacement_policy="TensorAware"))],
                         ids=["no-l3", "l3", "prefetch", "tensor-aware"])
def test_structure_and_conservation_on_random_traffic(cfg):
    trace = gen_random(20_000, cores=4, lines=2000, write_fraction=0.3, seed=9)
    sim = Simulator(cfg)
    sim.run_trace(trace)
    assert sim.check_structure() == []
    s = sim.stats
    rep = sim.report()
    assert s["l1_hits"] + s["l1_misses"] == rep.events["l1_access"]
    assert s["l1_misses"] == s["l2_hits"] + s["l2_misses"]
    if cfg.l3 is not None:
        assert s["l2_misses"] == s["l3_hits"] + s["l3_misses"]
    mem_bytes = rep.counters["dram_bytes"] + rep.counters["hbm_bytes"]
    fills = s["memory_demand_fills"] + s["memory_prefetch_fills"] + s["memory_writebacks"]
    assert mem_bytes == 64 * fills


def test_prefetch_hides_streaming_misses():
    cfg = small_config(cores=1, prefetcher=PrefetcherKind.STRIDE, prefetch_degree=4)
    trace = gen_gemm(GemmSpec(1, 1024, 1, element_bytes=4))  # long unit-stride read of B
    plain = run(dataclasses.replace(cfg, prefetcher=PrefetcherKind.NONE), trace)
    fetched = run(cfg, trace)
    assert fetched.memory_requests < plain.memory_requests / 4
    assert fetched.counters["prefetch_useful"] > 0
    assert 0 < fetched.prefetch_accuracy <= 1


def test_tensor_aware_keeps_weights_over_streaming():
    # one L2 set's worth of lines: weights then a streaming sweep through the same set
    cfg = small_config(cores=1, l2=dataclasses.replace(small_config().l2, replacement_policy="TensorAware"))
    sim = Simulator(cfg)
    l2_sets = cfg.l2.sets
    w = TensorHint(0, ReuseClass.WEIGHT)
    s = TensorHint(1, ReuseClass.STREAMING)
    for k in range(3):
        sim.access(0, k * l2_sets * 64, hint=w)
    for k in range(3, 20):
        sim.access(0, k * l2_sets * 64, hint=s)
    for k in range(3):
        assert sim.l2_state(0, k * l2_sets * 64) != 0


def test_validation_errors():
    sim = Simulator(small_config(cores=2))
    bad_core = parse_trace("0 5 R 0x0 4\n")
    with pytest.raises(WorkloadError, match="core"):
        sim.run_trace(bad_core)
    with pytest.raises(WorkloadError, match="capacity"):
        sim.run_trace(parse_trace("0 0 R 0xffffffffff 4\n"))
    trace = parse_trace("0 0 R 0x0 4\n")
    trace["reuse"] = 9
    with pytest.raises(WorkloadError, match="reuse"):
        sim.run_trace(trace)
    with pytest.raises(ValueError):
        sim.access(7, 0)
    assert sim.stats["requests"] == 0


def test_out_of_memory():
    tiny_mem = HybridMemoryConfig(dram=MemoryDeviceConfig(8192, 1, 10, 20, 8.0),
                                  hbm=MemoryDeviceConfig(4096, 1, 10, 20, 8.0))
    cfg = small_config(cores=1, memory=tiny_mem)
    trace = parse_trace("0 0 R 0x0 4\n1 0 R 0x1000 4\n2 0 R 0x2000 4\n")
    Simulator(cfg).run_trace(trace)
    over = dataclasses.replace(cfg, memory=dataclasses.replace(tiny_mem, hbm=MemoryDeviceConfig(4096, 1, 10, 20, 8.0),
                                                                dram=MemoryDeviceConfig(4096, 1, 10, 20, 8.0)))
    with pytest.raises(WorkloadError, match="capacity"):
        Simulator(over).run_trace(trace)


def test_out_of_memory_from_placement():
    # RoundRobin would place page 1 on the HBM, which is already full of page 0
    mem = HybridMemoryConfig(dram=MemoryDeviceConfig(4096, 1, 10, 20, 8.0),
                             hbm=MemoryDeviceConfig(4096, 1, 10, 20, 8.0), placement_policy="AllDram")
    trace = parse_trace("0 0 R 0x0 4\n1 0 R 0x1000 4\n")
    with pytest.raises(MemoryCapacityError):
        Simulator(small_config(cores=1, memory=mem)).run_trace(trace)


def test_empty_run_report():
    rep = run(SHARED)
    assert rep.requests == 0 and rep.avg_latency_ns is None
    assert rep.bandwidth_gbs == 0.0 and rep.energy_uj_per_op == 0.0
    assert rep.hit_rate_pct["overall"] is None


def test_report_shape():
    trace = gen_attention(AttentionSpec(8, 16))
    rep = run(BASELINE, trace, "attn")
    assert "l3" not in rep.hit_rate_pct
    assert rep.workload == "attn" and rep.config == "baseline"
    assert rep.requests == len(trace)
    assert rep.prefetch_accuracy is None
    assert rep.simulated_ticks > 0
    assert rep.bandwidth_gbs == pytest.approx(int(trace["size"].sum()) / rep.simulated_ticks)


def test_reports_are_deterministic():
    trace = gen_random(5000, cores=4, lines=500, seed=4)
    for cfg in hermes_configs():
        assert run(cfg, trace).to_json() == run(cfg, trace).to_json()


def test_bus_event_capacity_is_bounded():
    sim = Simulator(small_config(), capture_events=True, event_capacity=4)
    sim.run_trace(gen_random(200, cores=4, lines=32, seed=0))
    assert len(sim.bus_events()) == 4
    assert sim.stats["bus_rd"] + sim.stats["bus_rdx"] > 4
