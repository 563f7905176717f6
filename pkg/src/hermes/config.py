"""Simulation configuration: typed records, the dotted-key text format, and the
four HERMES configurations (baseline, shared-l3, prefetch, tensor-aware)."""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

from .metrics import ENERGY_EVENTS, EnergyTable

KiB = 1024
MiB = 1024 * KiB
GiB = 1024 * MiB


class ConfigError(ValueError):
    """Raised for malformed config text or a violated configuration invariant."""


class ReplacementPolicy(str, Enum):
    LRU = "LRU"
    TENSOR_AWARE = "TensorAware"


class PrefetcherKind(str, Enum):
    NONE = "None"
    STRIDE = "Stride"
    DELTA_HISTORY = "DeltaHistory"
    BOTH = "Both"


class PlacementPolicy(str, Enum):
    STATIC_HOT_FIRST = "StaticHotFirst"
    ROUND_ROBIN = "RoundRobin"
    ALL_DRAM = "AllDram"


def is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@dataclass(frozen=True)
class CacheGeometry:
    size_bytes: int
    associativity: int
    line_bytes: int = 64
    hit_latency: int = 1
    replacement_policy: ReplacementPolicy = ReplacementPolicy.LRU

    def __post_init__(self):
        object.__setattr__(self, "replacement_policy", ReplacementPolicy(self.replacement_policy))
        if self.size_bytes <= 0 or self.associativity <= 0 or self.line_bytes <= 0:
            raise ConfigError("invariant violated: cache size, associativity and line size must be positive")
        if self.hit_latency < 0:
            raise ConfigError("invariant violated: hit_latency must be non-negative")
        if not is_pow2(self.line_bytes) or self.line_bytes < 8:
            raise ConfigError(f"invariant violated: line_bytes {self.line_bytes} must be a power of two >= 8")
        way_bytes = self.associativity * self.line_bytes
        if self.size_bytes % way_bytes:
            raise ConfigError(
                f"invariant violated: size_bytes {self.size_bytes} is not divisible by "
                f"associativity x line_bytes = {way_bytes}"
            )
        if not is_pow2(self.sets):
            raise ConfigError(f"invariant violated: set count {self.sets} is not a power of two")

    @property
    def sets(self) -> int:
        return self.size_bytes // (self.associativity * self.line_bytes)


@dataclass(frozen=True)
class MemoryDeviceConfig:
    capacity_bytes: int
    channels: int
    row_hit_latency: int
    row_miss_latency: int
    bytes_per_cycle_per_channel: float
    row_bytes: int = 8 * KiB

    def __post_init__(self):
        if self.capacity_bytes <= 0 or self.channels <= 0:
            raise ConfigError("invariant violated: device capacity and channel count must be positive")
        if not self.row_miss_latency >= self.row_hit_latency >= 1:
            raise ConfigError("invariant violated: row_miss_latency >= row_hit_latency >= 1")
        if not self.bytes_per_cycle_per_channel > 0:
            raise ConfigError("invariant violated: bytes_per_cycle_per_channel must be positive")
        if self.row_bytes <= 0:
            raise ConfigError("invariant violated: row_bytes must be positive")

    @property
    def peak_gbs(self) -> float:
        return self.channels * self.bytes_per_cycle_per_channel


DEFAULT_DRAM = MemoryDeviceConfig(8 * GiB, channels=2, row_hit_latency=100, row_miss_latency=180,
                                  bytes_per_cycle_per_channel=8.0)
DEFAULT_HBM = MemoryDeviceConfig(4 * GiB, channels=8, row_hit_latency=60, row_miss_latency=110,
                                 bytes_per_cycle_per_channel=16.0)


@dataclass(frozen=True)
class HybridMemoryConfig:
    dram: MemoryDeviceConfig = DEFAULT_DRAM
    hbm: MemoryDeviceConfig = DEFAULT_HBM
    page_bytes: int = 4 * KiB
    placement_policy: PlacementPolicy = PlacementPolicy.STATIC_HOT_FIRST

    def __post_init__(self):
        object.__setattr__(self, "placement_policy", PlacementPolicy(self.placement_policy))
        if not is_pow2(self.page_bytes):
            raise ConfigError(f"invariant violated: page_bytes {self.page_bytes} must be a power of two")
        for name, dev in (("dram", self.dram), ("hbm", self.hbm)):
            if dev.capacity_bytes % self.page_bytes:
                raise ConfigError(f"invariant violated: memory.{name}.capacity_bytes is not a multiple of page_bytes")

    @property
    def capacity_bytes(self) -> int:
        return self.dram.capacity_bytes + self.hbm.capacity_bytes


L1_DEFAULT = CacheGeometry(32 * KiB, 8, 64, 2)
L2_DEFAULT = CacheGeometry(256 * KiB, 8, 64, 12)
L3_DEFAULT = CacheGeometry(8 * MiB, 16, 64, 40)


@dataclass(frozen=True)
class SimConfig:
    name: str = "hermes-default"
    cores: int = 4
    l1: CacheGeometry = L1_DEFAULT
    l2: CacheGeometry = L2_DEFAULT
    l3: Optional[CacheGeometry] = L3_DEFAULT
    prefetcher: PrefetcherKind = PrefetcherKind.NONE
    prefetch_degree: int = 2
    prefetch_distance: int = 1
    memory: HybridMemoryConfig = field(default_factory=HybridMemoryConfig)
    energy: EnergyTable = field(default_factory=EnergyTable)
    seed: int = 0
    accelerator: bool = False

    def __post_init__(self):
        object.__setattr__(self, "prefetcher", PrefetcherKind(self.prefetcher))
        if self.cores < 1:
            raise ConfigError("invariant violated: cores >= 1")
        if self.requesters > 62:
            raise ConfigError("invariant violated: at most 62 requesters are supported")
        levels = [self.l1, self.l2] + ([self.l3] if self.l3 else [])
        if len({g.line_bytes for g in levels}) != 1:
            raise ConfigError("invariant violated: all cache levels must share identical line_bytes")
        if self.l3 is not None and not self.l3.size_bytes > self.requesters * self.l2.size_bytes:
            raise ConfigError("invariant violated: l3.size_bytes must exceed cores x l2.size_bytes (inclusive hierarchy)")
        if self.l2.size_bytes < self.l1.size_bytes:
            raise ConfigError("invariant violated: l2 must be at least as large as l1 (inclusive hierarchy)")
        if self.memory.page_bytes < self.line_bytes:
            raise ConfigError("invariant violated: memory.page_bytes must be >= line_bytes")
        if self.prefetch_degree < 0 or self.prefetch_distance < 1:
            raise ConfigError("invariant violated: prefetch_degree >= 0 and prefetch_distance >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("invariant violated: seed must be a 64-bit unsigned integer")

    @property
    def line_bytes(self) -> int:
        return self.l1.line_bytes

    @property
    def requesters(self) -> int:
        """Cores plus the optional accelerator stream."""
        return self.cores + (1 if self.accelerator else 0)

    def features(self) -> frozenset[str]:
        flags = set()
        if self.l3 is not None:
            flags.add("shared-l3")
        if self.memory.placement_policy is not PlacementPolicy.ALL_DRAM:
            flags.add("hybrid-memory")
        if self.prefetcher is not PrefetcherKind.NONE:
            flags.add("prefetch")
        if any(g.replacement_policy is ReplacementPolicy.TENSOR_AWARE for g in (self.l1, self.l2, self.l3) if g):
            flags.add("tensor-aware")
        return frozenset(flags)


def hermes_configs() -> list[SimConfig]:
    """Baseline plus the three HERMES configurations in sweep order."""
    baseline = SimConfig(
        name="baseline",
        l3=None,
        memory=HybridMemoryConfig(placement_policy=PlacementPolicy.ALL_DRAM),
    )
    # the hybrid DRAM+HBM backend arrives together with the shared L3
    shared = dataclasses.replace(baseline, name="shared-l3", l3=L3_DEFAULT, memory=HybridMemoryConfig())
    prefetch = dataclasses.replace(shared, name="prefetch", prefetcher=PrefetcherKind.BOTH)
    tensor = dataclasses.replace(
        prefetch,
        name="tensor-aware",
        l2=dataclasses.replace(L2_DEFAULT, replacement_policy=ReplacementPolicy.TENSOR_AWARE),
        l3=dataclasses.replace(L3_DEFAULT, replacement_policy=ReplacementPolicy.TENSOR_AWARE),
    )
    return [baseline, shared, prefetch, tensor]


def bundled_config(name: str) -> SimConfig:
    if name == "hermes-default":
        return SimConfig()
    for cfg in hermes_configs():
        if cfg.name == name:
            return cfg
    raise KeyError(name)


BUNDLED_CONFIGS = ("hermes-default", "baseline", "shared-l3", "prefetch", "tensor-aware")

# --- text format -----------------------------------------------------------

_GEOMETRY_KEYS = ("size_bytes", "associativity", "line_bytes", "hit_latency", "replacement_policy")
_DEVICE_KEYS = ("capacity_bytes", "channels", "row_hit_latency", "row_miss_latency",
                "bytes_per_cycle_per_channel", "row_bytes")
_TOP_KEYS = ("name", "cores", "seed", "accelerator", "prefetcher", "prefetch_degree", "prefetch_distance")

_SUFFIX = {"k": KiB, "K": KiB, "M": MiB, "G": GiB}
_INT_TERM = re.compile(r"^([0-9][0-9_]*)([kKMG]?)$")
_LINE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_.]*)\s*=\s*(.*?)\s*$")


def _strip_comment(line: str) -> str:
    in_quote = False
    for i, ch in enumerate(line):
        if ch == '"':
            in_quote = not in_quote
        elif ch == "#" and not in_quote:
            return line[:i]
    return line


def _parse_value(raw: str, lineno: int) -> Any:
    if not raw:
        raise ConfigError(f"line {lineno}: missing value")
    if raw.startswith('"'):
        if len(raw) < 2 or not raw.endswith('"') or '"' in raw[1:-1]:
            raise ConfigError(f"line {lineno}: unterminated string {raw!r}")
        return raw[1:-1]
    lowered = raw.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered == "none":
        return None
    if re.fullmatch(r"[A-Za-z][A-Za-z0-9_-]*", raw):
        return raw
    product: Any = 1
    for term in raw.split("*"):
        term = term.strip()
        m = _INT_TERM.match(term)
        if m:
            product *= int(m.group(1).replace("_", "")) * _SUFFIX.get(m.group(2), 1)
            continue
        try:
            product *= float(term.replace("_", ""))
        except ValueError:
            raise ConfigError(f"line {lineno}: cannot parse value {raw!r}") from None
    return product


def _want_int(key: str, value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    return value


def _want_float(key: str, value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    return float(value)


def _want_enum(key: str, value: Any, enum: type[Enum]) -> Any:
    try:
        return enum(value)
    except ValueError:
        choices = ", ".join(e.value for e in enum)
        raise ConfigError(f"{key}: expected one of {choices}, got {value!r}") from None


def _geometry(prefix: str, base: CacheGeometry, values: dict[str, Any]) -> CacheGeometry:
    kwargs: dict[str, Any] = {}
    for key in _GEOMETRY_KEYS:
        full = f"{prefix}.{key}"
        if full in values:
            if key == "replacement_policy":
                kwargs[key] = _want_enum(full, values[full], ReplacementPolicy)
            else:
                kwargs[key] = _want_int(full, values[full])
    return dataclasses.replace(base, **kwargs)


def _device(prefix: str, base: MemoryDeviceConfig, values: dict[str, Any]) -> MemoryDeviceConfig:
    kwargs: dict[str, Any] = {}
    for key in _DEVICE_KEYS:
        full = f"{prefix}.{key}"
        if full in values:
            conv = _want_float if key == "bytes_per_cycle_per_channel" else _want_int
            kwargs[key] = conv(full, values[full])
    return dataclasses.replace(base, **kwargs)


def valid_keys() -> list[str]:
    keys = list(_TOP_KEYS)
    for level in ("l1", "l2", "l3"):
        keys += [f"{level}.{k}" for k in _GEOMETRY_KEYS]
    keys.append("l3")
    for dev in ("dram", "hbm"):
        keys += [f"memory.{dev}.{k}" for k in _DEVICE_KEYS]
    keys += ["memory.page_bytes", "memory.placement_policy"]
    keys += [f"energy.{k}" for k in ENERGY_EVENTS]
    return keys


def parse_config(text: str) -> SimConfig:
    """Parse the dotted-key text format into a fully defaulted SimConfig."""
    known = set(valid_keys())
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = _strip_comment(line).strip()
        if not line:
            continue
        m = _LINE.match(line)
        if not m:
            raise ConfigError(f"line {lineno}: syntax error, expected 'key = value'")
        key, raw = m.groups()
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(raw, lineno)

    if "l3" in values:
        if values["l3"] is not None:
            raise ConfigError("l3: only 'l3 = none' is accepted; set l3.* keys to configure the L3")
        if any(k.startswith("l3.") for k in values):
            raise ConfigError("l3: 'l3 = none' conflicts with l3.* keys")

    default = SimConfig()
    try:
        l1 = _geometry("l1", default.l1, values)
        l2 = _geometry("l2", default.l2, values)
        l3 = None if "l3" in values else _geometry("l3", L3_DEFAULT, values)
        memory = HybridMemoryConfig(
            dram=_device("memory.dram", default.memory.dram, values),
            hbm=_device("memory.hbm", default.memory.hbm, values),
            page_bytes=_want_int("memory.page_bytes", values.get("memory.page_bytes", default.memory.page_bytes)),
            placement_policy=_want_enum(
                "memory.placement_policy",
                values.get("memory.placement_policy", default.memory.placement_policy.value),
                PlacementPolicy,
            ),
        )
        energy = EnergyTable(**{
            k: _want_float(f"energy.{k}", values.get(f"energy.{k}", getattr(default.energy, k)))
            for k in ENERGY_EVENTS
        })
        name = values.get("name", default.name)
        if not isinstance(name, str):
            raise ConfigError(f"name: expected a string, got {name!r}")
        accelerator = values.get("accelerator", default.accelerator)
        if not isinstance(accelerator, bool):
            raise ConfigError(f"accelerator: expected true or false, got {accelerator!r}")
        return SimConfig(
            name=name,
            cores=_want_int("cores", values.get("cores", default.cores)),
            l1=l1,
            l2=l2,
            l3=l3,
            prefetcher=_want_enum("prefetcher", values.get("prefetcher", default.prefetcher.value), PrefetcherKind),
            prefetch_degree=_want_int("prefetch_degree", values.get("prefetch_degree", default.prefetch_degree)),
            prefetch_distance=_want_int("prefetch_distance",
                                        values.get("prefetch_distance", default.prefetch_distance)),
            memory=memory,
            energy=energy,
            seed=_want_int("seed", values.get("seed", default.seed)),
            accelerator=accelerator,
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"invariant violated: {exc}") from None


def _fmt(value: Any) -> str:
    if isinstance(value, Enum):
        return f'"{value.value}"'
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return f'"{value}"'
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_config(config: SimConfig) -> str:
    """Render a config in the text format; parse_config inverts it exactly."""
    out = [f"# HERMES simulation config: {config.name}"]
    for key in _TOP_KEYS:
        out.append(f"{key} = {_fmt(getattr(config, key))}")
    for level in ("l1", "l2", "l3"):
        geom = getattr(config, level)
        if geom is None:
            out.append(f"{level} = none")
            continue
        out += [f"{level}.{k} = {_fmt(getattr(geom, k))}" for k in _GEOMETRY_KEYS]
    for dev in ("dram", "hbm"):
        device = getattr(config.memory, dev)
        out += [f"memory.{dev}.{k} = {_fmt(getattr(device, k))}" for k in _DEVICE_KEYS]
    out.append(f"memory.page_bytes = {config.memory.page_bytes}")
    out.append(f"memory.placement_policy = {_fmt(config.memory.placement_policy)}")
    out += [f"energy.{k} = {_fmt(getattr(config.energy, k))}" for k in ENERGY_EVENTS]
    return "\n".join(out) + "\n"
