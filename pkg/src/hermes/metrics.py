"""Energy table, simulation report, and the derived metrics computed from it."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from typing import Any, Mapping, Optional

ENERGY_EVENTS = ("l1_access", "l2_access", "l3_access", "dram_access", "hbm_access", "bus_transfer")


@dataclass(frozen=True)
class EnergyTable:
    """Per-event energy in microjoules.

    The defaults are calibration constants for the bundled workloads; only the
    relative ordering of configurations is meaningful.
    """

    l1_access: float = 0.2
    l2_access: float = 1.0
    l3_access: float = 5.0
    dram_access: float = 45.0
    hbm_access: float = 25.0
    bus_transfer: float = 1.0

    def __post_init__(self):
        for name in ENERGY_EVENTS:
            value = getattr(self, name)
            if not value >= 0:
                raise ValueError(f"energy.{name} must be non-negative, got {value!r}")

    def scaled(self, factor: float) -> "EnergyTable":
        return EnergyTable(**{name: getattr(self, name) * factor for name in ENERGY_EVENTS})


def energy_per_op(events: Mapping[str, int], requests: int, table: EnergyTable) -> float:
    """Total event energy divided by the number of demand requests.

    Summed as exact rationals so the result does not depend on summation order.
    Returns 0.0 for a run with no requests.
    """
    if requests == 0:
        return 0.0
    total = sum((Fraction(getattr(table, name)) * events[name] for name in ENERGY_EVENTS), Fraction(0))
    return float(total / requests)


def bandwidth_gbs(nbytes: int, ticks: int) -> float:
    """Bytes per cycle at 1 GHz, i.e. GB/s. An empty window moves nothing."""
    if ticks <= 0:
        return 0.0
    return nbytes / ticks


def hit_rate_pct(hits: int, probes: int) -> Optional[float]:
    if probes == 0:
        return None
    return 100.0 * hits / probes


@dataclass
class SimReport:
    config: str
    workload: str
    requests: int
    avg_latency_ns: Optional[float]
    bandwidth_gbs: float
    memory_bandwidth_gbs: float
    hit_rate_pct: dict[str, Optional[float]]
    energy_uj_per_op: float
    prefetch_accuracy: Optional[float]
    simulated_ticks: int
    total_latency_cycles: int
    memory_requests: int
    counters: dict[str, int]
    events: dict[str, int]
    wall_seconds: float = field(default=0.0, compare=False)

    # wall time is excluded from serialized forms so equal runs give equal bytes
    def to_dict(self, include_wall: bool = False) -> dict[str, Any]:
        data = asdict(self)
        if not include_wall:
            del data["wall_seconds"]
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SimReport":
        names = {f.name for f in fields(cls)}
        missing = names - set(data) - {"wall_seconds"}
        if missing:
            raise ValueError(f"report is missing fields: {sorted(missing)}")
        return cls(**{k: v for k, v in data.items() if k in names})

    def to_json(self, include_wall: bool = False) -> str:
        return json.dumps(self.to_dict(include_wall), indent=2, sort_keys=True) + "\n"

    def flat_items(self, include_wall: bool = False) -> list[tuple[str, Any]]:
        items: list[tuple[str, Any]] = []
        for key, value in self.to_dict(include_wall).items():
            if isinstance(value, dict):
                items.extend((f"{key}.{k}", v) for k, v in value.items())
            else:
                items.append((key, value))
        return items

    def to_csv(self, include_wall: bool = False) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["key", "value"])
        for key, value in self.flat_items(include_wall):
            writer.writerow([key, "" if value is None else repr(value) if isinstance(value, float) else value])
        return buf.getvalue()

    def to_text(self, include_wall: bool = False) -> str:
        lines = []
        for key, value in self.flat_items(include_wall):
            shown = "none" if value is None else repr(value) if isinstance(value, float) else value
            lines.append(f"{key} = {shown}")
        return "\n".join(lines) + "\n"

    def serialize(self, fmt: str, include_wall: bool = False) -> str:
        if fmt == "json":
            return self.to_json(include_wall)
        if fmt == "csv":
            return self.to_csv(include_wall)
        if fmt == "text":
            return self.to_text(include_wall)
        raise ValueError(f"unknown report format {fmt!r}")


def overall_hit_rate(report: SimReport) -> Optional[float]:
    """Percentage of requests served without reaching memory; None when empty."""
    if report.requests == 0:
        return None
    return 100.0 * (report.requests - report.memory_requests) / report.requests


def report_energy_per_op(report: SimReport, table: EnergyTable) -> float:
    return energy_per_op(report.events, report.requests, table)


def parse_csv_report(text: str) -> dict[str, str]:
    rows = list(csv.reader(io.StringIO(text)))
    return {key: value for key, value in rows[1:]}
