"""HERMES: a trace-driven simulator of a multicore memory hierarchy for ML
workloads (private L1/L2, shared inclusive L3 with MESI, prefetchers,
tensor-aware replacement, hybrid DRAM + HBM)."""

from .config import ConfigError, SimConfig, bundled_config, hermes_configs, parse_config, render_config
from .engine import Simulator, run
from .metrics import EnergyTable, SimReport, energy_per_op, overall_hit_rate
from .workload import MemoryRequest, preset, read_trace, write_trace

__all__ = [
    "ConfigError", "EnergyTable", "MemoryRequest", "SimConfig", "SimReport", "Simulator", "bundled_config",
    "energy_per_op", "hermes_configs", "overall_hit_rate", "parse_config", "preset", "read_trace",
    "render_config", "run", "write_trace",
]

__version__ = "0.1.0"
