"""Command-line front end.

Exit codes: 0 on success, 1 for invalid input (bad config, trace, spec or
flags), 2 for file-system errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import os
import sys
import tempfile
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

from .config import BUNDLED_CONFIGS, ConfigError, SimConfig, bundled_config, hermes_configs, parse_config, render_config
from .engine import Simulator
from .memory import MemoryCapacityError
from .metrics import SimReport, overall_hit_rate
from .workload import (
    CORE_STRIDE, PRESETS, AttentionSpec, GemmSpec, RnnSpec, WorkloadError, gen_attention, gen_gemm, gen_rnn,
    merge_streams, preset, read_trace, spec_fields, write_trace,
)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_IO = 2

SEED_ENV = "HERMES_SEED"
FORMATS = ("json", "csv", "text")

# published reference figures per configuration, in sweep order
REFERENCE = {
    "avg_latency_ns": (Fraction(120), Fraction(95), Fraction(85), Fraction(80)),
    "bandwidth_gbs": (Fraction(25), Fraction(35), Fraction(40), Fraction(42)),
    "hit_rate_pct": (Fraction(60), Fraction(75), Fraction(80), Fraction(90)),
    "energy_uj_per_op": (Fraction(50), Fraction(40), Fraction(38), Fraction(35)),
}
# +1: the metric should rise from one configuration to the next; -1: fall
DIRECTION = {"avg_latency_ns": -1, "bandwidth_gbs": 1, "hit_rate_pct": 1, "energy_uj_per_op": -1}
SWEEP_CONFIGS = ("baseline", "shared-l3", "prefetch", "tensor-aware")
COMPARISON_FILE = "comparison.csv"


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INVALID):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class ComparisonRow:
    config: str
    metric: str
    simulated: Optional[float]
    reference: Optional[Fraction]
    direction_ok: bool


# --- helpers ---------------------------------------------------------------

def atomic_write(path: Path, text: str) -> None:
    """Write via a temporary sibling and rename, so readers never see a partial file."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _emit(text: str, out: Optional[str]) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        atomic_write(Path(out), text)


def seed_override() -> Optional[int]:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return None
    try:
        seed = int(raw, 0)
    except ValueError:
        raise CliError(f"{SEED_ENV} must be an integer, got {raw!r}") from None
    if not 0 <= seed < 2**64:
        raise CliError(f"{SEED_ENV} must be a 64-bit unsigned integer")
    return seed


def load_config(source: Optional[str]) -> SimConfig:
    """A config file path, or the name of a bundled configuration."""
    if source is None:
        config = bundled_config("hermes-default")
    elif source in BUNDLED_CONFIGS and not Path(source).exists():
        config = bundled_config(source)
    else:
        try:
            text = Path(source).read_text(encoding="utf-8")
        except OSError as exc:
            raise CliError(f"cannot read config {source!r}: {exc.strerror or exc}", EXIT_IO) from None
        config = parse_config(text)
    seed = seed_override()
    return config if seed is None else dataclasses.replace(config, seed=seed)


def load_workload(trace: Optional[str], workload: Optional[str]):
    """(trace array, workload label)."""
    if trace is not None:
        try:
            return read_trace(trace), Path(trace).stem
        except OSError as exc:
            raise CliError(f"cannot read trace {trace!r}: {exc.strerror or exc}", EXIT_IO) from None
    return preset(workload), workload


def simulate(config: SimConfig, trace, label: str) -> SimReport:
    sim = Simulator(config)
    sim.run_trace(trace)
    return sim.report(label)


def metric_value(report: SimReport, metric: str) -> Optional[float]:
    if metric == "hit_rate_pct":
        return overall_hit_rate(report)
    return getattr(report, metric)


def comparison_rows(reports: Sequence[SimReport]) -> list[ComparisonRow]:
    """One row per (config, metric); direction_ok compares each config with
    the one before it and is vacuously true for the first."""
    rows = []
    for metric, refs in REFERENCE.items():
        prev = None
        for i, report in enumerate(reports):
            value = metric_value(report, metric)
            if prev is None:
                ok = value is not None
            else:
                ok = value is not None and (value - prev) * DIRECTION[metric] > 0
            reference = refs[i] if i < len(refs) and report.config == SWEEP_CONFIGS[i] else None
            rows.append(ComparisonRow(report.config, metric, value, reference, ok))
            prev = value
    return rows


def _num(value) -> str:
    if value is None:
        return ""
    if isinstance(value, Fraction):
        return str(value.numerator) if value.denominator == 1 else str(value)
    return repr(float(value))


def comparison_csv(rows: Sequence[ComparisonRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["config", "metric", "simulated", "reference", "direction_ok"])
    for row in rows:
        writer.writerow([row.config, row.metric, _num(row.simulated), _num(row.reference),
                         "true" if row.direction_ok else "false"])
    return buf.getvalue()


def parse_spec(kind: str, items: Sequence[str]):
    classes = {"gemm": GemmSpec, "rnn": RnnSpec, "attention": AttentionSpec}
    if kind not in classes:
        raise CliError(f"unknown trace kind {kind!r}; choose from {', '.join(classes)}")
    valid = spec_fields(kind)
    values = {}
    for item in items:
        key, sep, raw = item.partition("=")
        key = key.strip()
        if not sep or key not in valid:
            raise CliError(f"bad spec entry {item!r} for {kind}; valid keys: {', '.join(valid)}")
        try:
            values[key] = int(raw, 0)
        except ValueError:
            raise CliError(f"spec value for {key} must be an integer, got {raw!r}") from None
    try:
        return classes[kind](**values)
    except TypeError as exc:
        raise CliError(f"incomplete {kind} spec ({exc}); valid keys: {', '.join(valid)}") from None


# --- commands --------------------------------------------------------------

def cmd_run(args) -> int:
    config = load_config(args.config)
    trace, label = load_workload(args.trace, args.workload)
    report = simulate(config, trace, label)
    _emit(report.serialize(args.format), args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    trace, label = load_workload(args.trace, args.workload)
    seed = seed_override()
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {str(out)!r}: {exc.strerror or exc}", EXIT_IO) from None
    reports = []
    for config in hermes_configs():
        if seed is not None:
            config = dataclasses.replace(config, seed=seed)
        report = simulate(config, trace, label)
        atomic_write(out / f"{config.name}.{args.format}", report.serialize(args.format))
        reports.append(report)
    atomic_write(out / COMPARISON_FILE, comparison_csv(comparison_rows(reports)))
    if not args.quiet:
        for report in reports:
            print(f"{report.config:>13}  latency {report.avg_latency_ns:8.2f} ns  "
                  f"bandwidth {report.bandwidth_gbs:6.2f} GB/s  hit {overall_hit_rate(report):6.2f} %  "
                  f"energy {report.energy_uj_per_op:6.2f} uJ/op")
    return EXIT_OK


def cmd_gen_trace(args) -> int:
    spec = parse_spec(args.kind, args.spec)
    if args.cores < 1:
        raise CliError("--cores must be at least 1")
    seed = args.seed if args.seed is not None else (seed_override() or 0)
    gen = {"gemm": gen_gemm, "rnn": gen_rnn, "attention": gen_attention}[args.kind]
    if args.cores == 1:
        trace = gen(spec, 0, seed)
    else:
        trace = merge_streams([gen(spec.at(core * CORE_STRIDE), core, seed) for core in range(args.cores)])
    buf = io.StringIO()
    write_trace(trace, buf, [f"kind={args.kind} cores={args.cores} seed={seed}", repr(spec)])
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_config(args) -> int:
    if args.list:
        print("\n".join(BUNDLED_CONFIGS))
        return EXIT_OK
    _emit(render_config(load_config(args.name)), args.out)
    return EXIT_OK


# --- argument parsing ------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    # malformed flags are invalid input, not an I/O failure
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hermes", description="Trace-driven memory-hierarchy simulator.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="simulate one configuration on one workload")
    run.add_argument("--config", help=f"config file or bundled name ({', '.join(BUNDLED_CONFIGS)})")
    source = run.add_mutually_exclusive_group(required=True)
    source.add_argument("--trace", help="trace file")
    source.add_argument("--workload", help=f"bundled workload ({', '.join(PRESETS)})")
    run.add_argument("--out", help="report file (default: standard output)")
    run.add_argument("--format", choices=FORMATS, default="json")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run the four bundled configurations and compare")
    source = sweep.add_mutually_exclusive_group()
    source.add_argument("--workload", default="gemm-small", help="bundled workload (default gemm-small)")
    source.add_argument("--trace", help="trace file")
    sweep.add_argument("--out", required=True, help="output directory")
    sweep.add_argument("--format", choices=FORMATS, default="json", help="report format")
    sweep.add_argument("--quiet", action="store_true", help="no summary on standard output")
    sweep.set_defaults(func=cmd_sweep)

    gen = sub.add_parser("gen-trace", help="write a kernel trace")
    gen.add_argument("--kind", required=True, help="gemm, rnn or attention")
    gen.add_argument("--spec", nargs="*", default=[], metavar="KEY=VALUE")
    gen.add_argument("--cores", type=int, default=1)
    gen.add_argument("--seed", type=int)
    gen.add_argument("--out", help="trace file (default: standard output)")
    gen.set_defaults(func=cmd_gen_trace)

    cfg = sub.add_parser("config", help="print a configuration in file format")
    cfg.add_argument("name", nargs="?", help="config file or bundled name")
    cfg.add_argument("--list", action="store_true", help="list bundled configurations")
    cfg.add_argument("--out")
    cfg.set_defaults(func=cmd_config)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"hermes: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, WorkloadError, MemoryCapacityError, ValueError) as exc:
        print(f"hermes: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        where = f" {exc.filename!r}" if exc.filename else ""
        print(f"hermes: I/O error{where}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
