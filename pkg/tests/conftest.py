import dataclasses

import numpy as np

from hermes.coherence import EXCLUSIVE, INVALID, MODIFIED, check_global_invariants
from hermes.config import CacheGeometry, HybridMemoryConfig, MemoryDeviceConfig, PlacementPolicy, SimConfig
from hermes.engine import Simulator
from hermes.workload import gen_random

from oracles import LastWriterOracle

KiB = 1024
MiB = 1024 * KiB


def small_config(cores=4, l3=True, **kwargs) -> SimConfig:
    """A tiny hierarchy so short traces exercise evictions everywhere."""
    memory = HybridMemoryConfig(
        dram=MemoryDeviceConfig(4 * MiB, 2, 100, 180, 8.0),
        hbm=MemoryDeviceConfig(4 * MiB, 4, 60, 110, 16.0),
        placement_policy=kwargs.pop("placement_policy", PlacementPolicy.ALL_DRAM if not l3 else
                                    PlacementPolicy.STATIC_HOT_FIRST),
    )
    base = SimConfig(
        name="small",
        cores=cores,
        l1=CacheGeometry(512, 2, 64, 2),
        l2=CacheGeometry(1 * KiB, 4, 64, 12),
        l3=CacheGeometry(32 * KiB, 8, 64, 40) if l3 else None,
        memory=memory,
    )
    return dataclasses.replace(base, **kwargs)


def coherence_fuzz(config, events, lines, seed):
    """Run a random trace; return (violations, structure problems)."""
    trace = gen_random(events, cores=config.requesters, lines=lines, write_fraction=0.4, seed=seed)
    sim = Simulator(config, track_versions=True)
    addrs = np.arange(lines, dtype=np.int64) * 64
    rec = sim.run_trace(trace, record=True, snapshot_addresses=addrs)
    snaps = rec.states  # [step, line, core]
    m = (snaps == MODIFIED).sum(axis=2)
    owners = m + (snaps == EXCLUSIVE).sum(axis=2)
    holders = (snaps != INVALID).sum(axis=2)
    problems = []
    bad = np.argwhere((owners > 1) | ((m == 1) & (holders > 1)))
    if len(bad):
        problems.append(f"single-writer violated at (step, line) {tuple(bad[0])}")
    oracle = LastWriterOracle()
    touched = trace["address"][rec.index].astype(np.int64) // 64
    writes = trace["op"][rec.index] == 1
    for step, (line, w, v) in enumerate(zip(touched.tolist(), writes.tolist(), rec.version.tolist())):
        if not check_global_invariants(snaps[step, line]):
            problems.append(f"step {step}: invariant failed on line {line}")
            break
        oracle.observe(step, line, w, v)
    problems += oracle.violations[:5]
    return problems, sim.check_structure()
