"""Synthetic ML-kernel traces (tiled GEMM, recurrent step, attention) and the
text trace format.

A trace is a numpy structured array with :data:`TRACE_DTYPE`; ``reuse`` is a
:class:`ReuseClass` code or -1 for an unhinted request. Element accesses are
coalesced into requests of at most one line, split at line boundaries.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from enum import IntEnum
from typing import Callable, Iterable, Optional, Sequence, TextIO, Union

import numpy as np
from numba import njit

from .cache import ReuseClass, TensorHint

TRACE_DTYPE = np.dtype([
    ("tick", "u8"),
    ("core", "u2"),
    ("op", "u1"),
    ("address", "u8"),
    ("size", "u2"),
    ("tensor_id", "u4"),
    ("reuse", "i1"),
])

MAX_REQUEST_BYTES = 64
NO_HINT = -1

READ = 0
WRITE = 1

W, A, G, S = (int(c) for c in ReuseClass)


class WorkloadError(ValueError):
    """Invalid workload spec or malformed trace file."""


class Op(IntEnum):
    READ = READ
    WRITE = WRITE

    @property
    def letter(self) -> str:
        return "RW"[self]


@dataclass(frozen=True)
class MemoryRequest:
    tick: int
    core: int
    op: Op
    address: int
    size_bytes: int
    hint: Optional[TensorHint] = None

    def __post_init__(self):
        if not 1 <= self.size_bytes <= MAX_REQUEST_BYTES:
            raise WorkloadError(f"request size {self.size_bytes} outside 1..{MAX_REQUEST_BYTES}")
        if self.tick < 0 or self.address < 0 or self.core < 0:
            raise WorkloadError("tick, core and address must be non-negative")


def empty_trace(n: int = 0) -> np.ndarray:
    return np.zeros(n, dtype=TRACE_DTYPE)


def to_requests(trace: np.ndarray) -> list[MemoryRequest]:
    out = []
    for rec in trace:
        reuse = int(rec["reuse"])
        hint = None if reuse < 0 else TensorHint(int(rec["tensor_id"]), ReuseClass(reuse))
        out.append(MemoryRequest(int(rec["tick"]), int(rec["core"]), Op(int(rec["op"])), int(rec["address"]),
                                 int(rec["size"]), hint))
    return out


def from_requests(requests: Iterable[MemoryRequest]) -> np.ndarray:
    requests = list(requests)
    trace = empty_trace(len(requests))
    for i, r in enumerate(requests):
        trace[i] = (r.tick, r.core, int(r.op), r.address, r.size_bytes,
                    r.hint.tensor_id if r.hint else 0, int(r.hint.reuse_class) if r.hint else NO_HINT)
    return trace


# --- emission kernels ------------------------------------------------------

B_ADDR, B_SIZE, B_OP, B_TID, B_REUSE = 0, 1, 2, 3, 4
B_FIELDS = 5


@njit(cache=True)
def _emit(buf, n, start, nbytes, op, tid, reuse, line):
    """Append the line-split requests covering [start, start + nbytes)."""
    end = start + nbytes
    a = start
    while a < end:
        nxt = min(end, (a // line + 1) * line)
        buf[n, B_ADDR] = a
        buf[n, B_SIZE] = nxt - a
        buf[n, B_OP] = op
        buf[n, B_TID] = tid
        buf[n, B_REUSE] = reuse
        n += 1
        a = nxt
    return n


@njit(cache=True)
def _emit_rmw(buf, n, start, nbytes, tid, reuse, line):
    """Read then write each line-sized piece of [start, start + nbytes)."""
    end = start + nbytes
    a = start
    while a < end:
        nxt = min(end, (a // line + 1) * line)
        for op in (READ, WRITE):
            buf[n, B_ADDR] = a
            buf[n, B_SIZE] = nxt - a
            buf[n, B_OP] = op
            buf[n, B_TID] = tid
            buf[n, B_REUSE] = reuse
            n += 1
        a = nxt
    return n


@njit(cache=True)
def _gemm_kernel(buf, m, n, k, tm, tn, tk, eb, base_a, base_b, base_c, tid, line):
    """i-j-k tiled loop nest: per tile step read the A and B tiles row by row,
    then read-modify-write the C tile."""
    c = 0
    for i0 in range(0, m, tm):
        im = min(tm, m - i0)
        for j0 in range(0, n, tn):
            jn = min(tn, n - j0)
            for k0 in range(0, k, tk):
                kk = min(tk, k - k0)
                for r in range(im):
                    c = _emit(buf, c, base_a + ((i0 + r) * k + k0) * eb, kk * eb, READ, tid, W, line)
                for r in range(kk):
                    c = _emit(buf, c, base_b + ((k0 + r) * n + j0) * eb, jn * eb, READ, tid + 1, A, line)
                for r in range(im):
                    c = _emit_rmw(buf, c, base_c + ((i0 + r) * n + j0) * eb, jn * eb, tid + 2, G, line)
    return c


@njit(cache=True)
def _rnn_kernel(buf, hidden, steps, eb, base_w, base_s, tid, line):
    c = 0
    for _ in range(steps):
        c = _emit(buf, c, base_w, hidden * hidden * eb, READ, tid, W, line)
        c = _emit(buf, c, base_s, hidden * eb, READ, tid + 1, A, line)
        c = _emit(buf, c, base_s, hidden * eb, WRITE, tid + 1, A, line)
    return c


@njit(cache=True)
def _attention_kernel(buf, seq, dim, eb, base_q, base_k, base_v, base_s, base_o, tid, line):
    c = 0
    row = dim * eb
    srow = seq * eb
    for i in range(seq):
        c = _emit(buf, c, base_q + i * row, row, READ, tid, A, line)
        for j in range(seq):
            c = _emit(buf, c, base_k + j * row, row, READ, tid + 1, W, line)
        c = _emit(buf, c, base_s + i * srow, srow, WRITE, tid + 3, S, line)
    for i in range(seq):
        c = _emit(buf, c, base_s + i * srow, srow, READ, tid + 3, S, line)
        for j in range(seq):
            c = _emit(buf, c, base_v + j * row, row, READ, tid + 2, W, line)
        c = _emit(buf, c, base_o + i * row, row, WRITE, tid + 4, A, line)
    return c


def _pieces(nbytes: int, line: int) -> int:
    """Upper bound on the requests one contiguous segment splits into."""
    return nbytes // line + 2


def _finish(buf: np.ndarray, count: int, core: int, start_tick: int) -> np.ndarray:
    trace = empty_trace(count)
    trace["tick"] = start_tick + np.arange(count, dtype=np.uint64)
    trace["core"] = core
    trace["op"] = buf[:count, B_OP]
    trace["address"] = buf[:count, B_ADDR]
    trace["size"] = buf[:count, B_SIZE]
    trace["tensor_id"] = buf[:count, B_TID]
    trace["reuse"] = buf[:count, B_REUSE]
    return trace


def _check_regions(regions: Sequence[tuple[str, int, int]]) -> None:
    spans = sorted((base, base + size, name) for name, base, size in regions)
    for name, base, size in regions:
        if base < 0 or size <= 0:
            raise WorkloadError(f"{name}: base must be non-negative and region non-empty")
    for (b0, e0, n0), (b1, e1, n1) in zip(spans, spans[1:]):
        if b1 < e0:
            raise WorkloadError(f"operand regions {n0} and {n1} overlap")


def _layout(sizes: Sequence[int], base: int, align: int = 4096) -> list[int]:
    out = []
    cur = base
    for size in sizes:
        out.append(cur)
        cur += (size + align - 1) // align * align
    return out


def _positive(spec, names: Sequence[str]) -> None:
    for name in names:
        value = getattr(spec, name)
        if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
            raise WorkloadError(f"{name} must be a positive integer, got {value!r}")
    if spec.element_bytes not in (2, 4, 8):
        raise WorkloadError(f"element_bytes must be 2, 4 or 8, got {spec.element_bytes!r}")


# --- specs -----------------------------------------------------------------

DEFAULT_TILE = 32


@dataclass(frozen=True)
class GemmSpec:
    """C[m, n] += A[m, k] @ B[k, n], row-major, tiled tile_m x tile_n x tile_k.

    Unset tiles default to min(32, dimension).
    """

    m: int
    n: int
    k: int
    tile_m: Optional[int] = None
    tile_n: Optional[int] = None
    tile_k: Optional[int] = None
    element_bytes: int = 4
    base_a: Optional[int] = None
    base_b: Optional[int] = None
    base_c: Optional[int] = None
    tensor_id: int = 0

    def __post_init__(self):
        for tile, dim in (("tile_m", self.m), ("tile_n", self.n), ("tile_k", self.k)):
            if getattr(self, tile) is None:
                object.__setattr__(self, tile, min(DEFAULT_TILE, dim) if isinstance(dim, int) else DEFAULT_TILE)
        _positive(self, ("m", "n", "k", "tile_m", "tile_n", "tile_k"))
        if self.tile_m > self.m or self.tile_n > self.n or self.tile_k > self.k:
            raise WorkloadError("tiles must not exceed the matrix dimensions")
        sizes = (self.m * self.k * self.element_bytes, self.k * self.n * self.element_bytes,
                 self.m * self.n * self.element_bytes)
        if None in (self.base_a, self.base_b, self.base_c):
            if (self.base_a, self.base_b, self.base_c) != (None, None, None):
                raise WorkloadError("give all of base_a, base_b, base_c or none of them")
            a, b, c = _layout(sizes, 0)
            object.__setattr__(self, "base_a", a)
            object.__setattr__(self, "base_b", b)
            object.__setattr__(self, "base_c", c)
        _check_regions([("A", self.base_a, sizes[0]), ("B", self.base_b, sizes[1]), ("C", self.base_c, sizes[2])])

    def regions(self) -> dict[str, tuple[int, int]]:
        eb = self.element_bytes
        return {"A": (self.base_a, self.m * self.k * eb), "B": (self.base_b, self.k * self.n * eb),
                "C": (self.base_c, self.m * self.n * eb)}

    def footprint(self) -> int:
        return max(b + s for b, s in self.regions().values()) - min(b for b, _ in self.regions().values())

    def at(self, base: int) -> "GemmSpec":
        """Same shape with operands packed from ``base``."""
        eb = self.element_bytes
        a, b, c = _layout((self.m * self.k * eb, self.k * self.n * eb, self.m * self.n * eb), base)
        return GemmSpec(self.m, self.n, self.k, self.tile_m, self.tile_n, self.tile_k, eb, a, b, c, self.tensor_id)


@dataclass(frozen=True)
class RnnSpec:
    hidden: int
    timesteps: int
    element_bytes: int = 4
    base_weights: Optional[int] = None
    base_state: Optional[int] = None
    tensor_id: int = 0

    def __post_init__(self):
        _positive(self, ("hidden", "timesteps"))
        sizes = (self.hidden * self.hidden * self.element_bytes, self.hidden * self.element_bytes)
        if self.base_weights is None or self.base_state is None:
            if (self.base_weights, self.base_state) != (None, None):
                raise WorkloadError("give both base_weights and base_state or neither")
            w, s = _layout(sizes, 0)
            object.__setattr__(self, "base_weights", w)
            object.__setattr__(self, "base_state", s)
        _check_regions([("weights", self.base_weights, sizes[0]), ("state", self.base_state, sizes[1])])

    def regions(self) -> dict[str, tuple[int, int]]:
        eb = self.element_bytes
        return {"weights": (self.base_weights, self.hidden * self.hidden * eb),
                "state": (self.base_state, self.hidden * eb)}

    def at(self, base: int) -> "RnnSpec":
        eb = self.element_bytes
        w, s = _layout((self.hidden * self.hidden * eb, self.hidden * eb), base)
        return RnnSpec(self.hidden, self.timesteps, eb, w, s, self.tensor_id)


@dataclass(frozen=True)
class AttentionSpec:
    seq_len: int
    head_dim: int
    element_bytes: int = 4
    base_q: Optional[int] = None
    base_k: Optional[int] = None
    base_v: Optional[int] = None
    base_scores: Optional[int] = None
    base_out: Optional[int] = None
    tensor_id: int = 0

    def _sizes(self) -> tuple[int, ...]:
        row = self.seq_len * self.head_dim * self.element_bytes
        return row, row, row, self.seq_len * self.seq_len * self.element_bytes, row

    def __post_init__(self):
        _positive(self, ("seq_len", "head_dim"))
        bases = (self.base_q, self.base_k, self.base_v, self.base_scores, self.base_out)
        names = ("base_q", "base_k", "base_v", "base_scores", "base_out")
        if None in bases:
            if any(b is not None for b in bases):
                raise WorkloadError("give all attention base addresses or none of them")
            for name, value in zip(names, _layout(self._sizes(), 0)):
                object.__setattr__(self, name, value)
        _check_regions([(n[5:], getattr(self, n), s) for n, s in zip(names, self._sizes())])

    def regions(self) -> dict[str, tuple[int, int]]:
        names = ("q", "k", "v", "scores", "out")
        return {n: (getattr(self, "base_" + n), s) for n, s in zip(names, self._sizes())}

    def at(self, base: int) -> "AttentionSpec":
        q, k, v, s, o = _layout(self._sizes(), base)
        return AttentionSpec(self.seq_len, self.head_dim, self.element_bytes, q, k, v, s, o, self.tensor_id)


# --- generators ------------------------------------------------------------

# seeds are accepted for interface uniformity; the kernel generators are
# fully determined by their spec

def gen_gemm(spec: GemmSpec, core: int = 0, seed: int = 0, start_tick: int = 0,
             line_bytes: int = MAX_REQUEST_BYTES) -> np.ndarray:
    eb = spec.element_bytes
    ti, tj, tk = -(-spec.m // spec.tile_m), -(-spec.n // spec.tile_n), -(-spec.k // spec.tile_k)
    per_step = (spec.tile_m * _pieces(spec.tile_k * eb, line_bytes) + spec.tile_k * _pieces(spec.tile_n * eb, line_bytes)
                + 2 * spec.tile_m * _pieces(spec.tile_n * eb, line_bytes))
    buf = np.empty((ti * tj * tk * per_step, B_FIELDS), dtype=np.int64)
    count = _gemm_kernel(buf, spec.m, spec.n, spec.k, spec.tile_m, spec.tile_n, spec.tile_k, eb,
                         spec.base_a, spec.base_b, spec.base_c, spec.tensor_id, line_bytes)
    return _finish(buf, count, core, start_tick)


def gen_rnn(spec: RnnSpec, core: int = 0, seed: int = 0, start_tick: int = 0,
            line_bytes: int = MAX_REQUEST_BYTES) -> np.ndarray:
    eb = spec.element_bytes
    per_step = _pieces(spec.hidden * spec.hidden * eb, line_bytes) + 2 * _pieces(spec.hidden * eb, line_bytes)
    buf = np.empty((spec.timesteps * per_step, B_FIELDS), dtype=np.int64)
    count = _rnn_kernel(buf, spec.hidden, spec.timesteps, eb, spec.base_weights, spec.base_state,
                        spec.tensor_id, line_bytes)
    return _finish(buf, count, core, start_tick)


def gen_attention(spec: AttentionSpec, core: int = 0, seed: int = 0, start_tick: int = 0,
                  line_bytes: int = MAX_REQUEST_BYTES) -> np.ndarray:
    eb = spec.element_bytes
    s, d = spec.seq_len, spec.head_dim
    row = _pieces(d * eb, line_bytes)
    srow = _pieces(s * eb, line_bytes)
    buf = np.empty((2 * s * (row + s * row + srow), B_FIELDS), dtype=np.int64)
    count = _attention_kernel(buf, s, d, eb, spec.base_q, spec.base_k, spec.base_v, spec.base_scores,
                              spec.base_out, spec.tensor_id, line_bytes)
    return _finish(buf, count, core, start_tick)


def gen_random(requests: int, cores: int = 4, lines: int = 64, write_fraction: float = 0.5, seed: int = 0,
               line_bytes: int = 64, base: int = 0) -> np.ndarray:
    """Uniformly random line-sized requests over ``lines`` lines, one per tick per core."""
    rng = np.random.default_rng(seed)
    trace = empty_trace(requests)
    core = rng.integers(0, cores, size=requests)
    trace["core"] = core
    trace["op"] = (rng.random(requests) < write_fraction).astype(np.uint8)
    trace["address"] = base + rng.integers(0, lines, size=requests).astype(np.uint64) * np.uint64(line_bytes)
    trace["size"] = line_bytes
    trace["reuse"] = NO_HINT
    trace["tick"] = np.arange(requests, dtype=np.uint64)
    return trace


def concat(parts: Sequence[np.ndarray]) -> np.ndarray:
    """Join per-core pieces back to back, re-numbering ticks consecutively."""
    if not parts:
        return empty_trace()
    trace = np.concatenate(parts)
    if len(trace):
        trace["tick"] = np.arange(len(trace), dtype=np.uint64) + trace["tick"][0]
    return trace


def merge_streams(streams: Sequence[np.ndarray]) -> np.ndarray:
    """Order by tick, ties by core id; per-core order is preserved."""
    if not streams:
        return empty_trace()
    for s in streams:
        check_monotonic(s)
    trace = np.concatenate(streams)
    order = np.lexsort((trace["core"], trace["tick"]))
    return trace[order]


def check_monotonic(trace: np.ndarray) -> None:
    for core in np.unique(trace["core"]):
        ticks = trace["tick"][trace["core"] == core]
        bad = np.nonzero(ticks[1:] < ticks[:-1])[0]
        if len(bad):
            raise WorkloadError(f"core {core}: tick {ticks[bad[0] + 1]} goes backwards after {ticks[bad[0]]}")


# --- trace file format -----------------------------------------------------

TRACE_HEADER = "# hermes trace: tick core R|W 0xADDRESS size [tensor_id:W|A|G|S]"


def format_trace(trace: np.ndarray, comments: Sequence[str] = ()) -> str:
    out = [TRACE_HEADER] + [f"# {c}" for c in comments]
    letters = "WAGS"
    for tick, core, op, addr, size, tid, reuse in trace.tolist():
        line = f"{tick} {core} {'RW'[op]} 0x{addr:x} {size}"
        if reuse >= 0:
            line += f" {tid}:{letters[reuse]}"
        out.append(line)
    return "\n".join(out) + "\n"


def write_trace(trace: np.ndarray, file: Union[str, os.PathLike, TextIO], comments: Sequence[str] = ()) -> None:
    text = format_trace(trace, comments)
    if hasattr(file, "write"):
        file.write(text)
        return
    with open(file, "w", encoding="utf-8") as fh:
        fh.write(text)


def parse_trace(text: str) -> np.ndarray:
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        parts = body.split()
        if len(parts) not in (5, 6):
            raise WorkloadError(f"line {lineno}: expected 5 or 6 fields, got {len(parts)}")
        try:
            tick = int(parts[0])
            core = int(parts[1])
            if parts[2] not in ("R", "W"):
                raise WorkloadError(f"line {lineno}: op must be R or W, got {parts[2]!r}")
            op = READ if parts[2] == "R" else WRITE
            if not parts[3].lower().startswith("0x"):
                raise WorkloadError(f"line {lineno}: address must be hexadecimal with 0x prefix")
            addr = int(parts[3], 16)
            size = int(parts[4])
            tid, reuse = 0, NO_HINT
            if len(parts) == 6:
                tid_text, _, letter = parts[5].partition(":")
                if letter not in ("W", "A", "G", "S"):
                    raise WorkloadError(f"line {lineno}: reuse class must be one of W, A, G, S")
                tid, reuse = int(tid_text), "WAGS".index(letter)
        except WorkloadError:
            raise
        except ValueError:
            raise WorkloadError(f"line {lineno}: malformed field in {body!r}") from None
        if tick < 0 or core < 0 or addr < 0 or not 1 <= size <= MAX_REQUEST_BYTES:
            raise WorkloadError(f"line {lineno}: field out of range in {body!r}")
        if core >= 2**16 or tid >= 2**32 or addr >= 2**64 or tick >= 2**64:
            raise WorkloadError(f"line {lineno}: field too large in {body!r}")
        rows.append((tick, core, op, addr, size, tid, reuse))
    trace = np.array(rows, dtype=TRACE_DTYPE) if rows else empty_trace()
    last: dict[int, tuple[int, int]] = {}
    for i, (tick, core) in enumerate(zip(trace["tick"].tolist(), trace["core"].tolist())):
        prev = last.get(core)
        if prev is not None and tick < prev[0]:
            raise WorkloadError(f"trace entry {i + 1}: core {core} tick {tick} goes backwards after {prev[0]}")
        last[core] = (tick, i)
    return trace


def read_trace(file: Union[str, os.PathLike, TextIO]) -> np.ndarray:
    if hasattr(file, "read"):
        return parse_trace(file.read())
    with open(file, encoding="utf-8") as fh:
        return parse_trace(fh.read())


# --- presets ---------------------------------------------------------------

PRESET_CORES = 4
CORE_STRIDE = 256 * 1024 * 1024  # disjoint per-core address bases


def _replicated(make: Callable[[int, int], np.ndarray], cores: int = PRESET_CORES) -> np.ndarray:
    return merge_streams([make(core, core * CORE_STRIDE) for core in range(cores)])


def preset_gemm_small(cores: int = PRESET_CORES) -> np.ndarray:
    return _replicated(lambda core, base: gen_gemm(GemmSpec(256, 256, 256).at(base), core), cores)


def preset_rnn_small(cores: int = PRESET_CORES) -> np.ndarray:
    return _replicated(lambda core, base: gen_rnn(RnnSpec(256, 64).at(base), core), cores)


def preset_attention_small(cores: int = PRESET_CORES) -> np.ndarray:
    return _replicated(lambda core, base: gen_attention(AttentionSpec(128, 64).at(base), core), cores)


PRESETS: dict[str, tuple[Callable[[], np.ndarray], str]] = {
    "gemm-small": (preset_gemm_small, "tiled GEMM m=n=k=256, tile 32, fp32, per core"),
    "rnn-small": (preset_rnn_small, "recurrent step hidden 256, 64 timesteps, per core"),
    "attention-small": (preset_attention_small, "attention seq 128, head_dim 64, per core"),
}


def preset(name: str) -> np.ndarray:
    try:
        make, _ = PRESETS[name]
    except KeyError:
        raise WorkloadError(f"unknown workload {name!r}; choose from {', '.join(PRESETS)}") from None
    return make()


def spec_fields(kind: str) -> list[str]:
    cls = {"gemm": GemmSpec, "rnn": RnnSpec, "attention": AttentionSpec}[kind]
    return [f.name for f in fields(cls)]
