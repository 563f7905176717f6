import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hermes.cache import ReuseClass, TensorHint
from hermes.workload import (
    NO_HINT, PRESETS, AttentionSpec, GemmSpec, MemoryRequest, Op, RnnSpec, WorkloadError, check_monotonic, concat,
    empty_trace, format_trace, from_requests, gen_attention, gen_gemm, gen_random, gen_rnn, merge_streams,
    parse_trace, preset, read_trace, to_requests, write_trace,
)

from oracles import attention_bytes, gemm_bytes, gemm_request_count, rnn_bytes, trace_bytes

eb_st = st.sampled_from([2, 4, 8])


@st.composite
def gemm_specs(draw):
    m, n, k = (draw(st.integers(1, 40)) for _ in range(3))
    tiles = [draw(st.integers(1, d)) for d in (m, n, k)]
    return GemmSpec(m, n, k, *tiles, element_bytes=draw(eb_st), tensor_id=draw(st.integers(0, 50)))


@settings(max_examples=40, deadline=None)
@given(gemm_specs())
def test_gemm_bytes_match_oracle(spec):
    trace = gen_gemm(spec)
    expected = gemm_bytes(spec.m, spec.n, spec.k, spec.tile_m, spec.tile_n, spec.tile_k, spec.element_bytes,
                          spec.tensor_id)
    assert trace_bytes(trace) == expected


@settings(max_examples=40, deadline=None)
@given(gemm_specs())
def test_gemm_request_count_matches_loop_nest(spec):
    trace = gen_gemm(spec)
    bases = (spec.base_a, spec.base_b, spec.base_c)
    assert len(trace) == gemm_request_count(spec.m, spec.n, spec.k, spec.tile_m, spec.tile_n, spec.tile_k,
                                            spec.element_bytes, bases)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 64), st.integers(1, 8), eb_st)
def test_rnn_bytes_match_oracle(hidden, steps, eb):
    assert trace_bytes(gen_rnn(RnnSpec(hidden, steps, eb))) == rnn_bytes(hidden, steps, eb)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 24), st.integers(1, 40), eb_st)
def test_attention_bytes_match_oracle(seq, dim, eb):
    assert trace_bytes(gen_attention(AttentionSpec(seq, dim, eb))) == attention_bytes(seq, dim, eb)


@pytest.mark.parametrize("trace", [
    gen_gemm(GemmSpec(13, 17, 9, 5, 6, 4, element_bytes=8, base_a=40, base_b=8192, base_c=20000)),
    gen_attention(AttentionSpec(7, 19, 4)),
    gen_rnn(RnnSpec(37, 3, 2)),
], ids=["gemm", "attention", "rnn"])
def test_requests_stay_within_one_line(trace):
    addr = trace["address"].astype(np.int64)
    size = trace["size"].astype(np.int64)
    assert (size >= 1).all() and (size <= 64).all()
    assert ((addr // 64) == ((addr + size - 1) // 64)).all()
    assert (np.diff(trace["tick"].astype(np.int64)) == 1).all()


def test_minimal_gemm():
    trace = gen_gemm(GemmSpec(1, 1, 1))
    assert trace["op"].tolist() == [0, 0, 0, 1]
    assert trace["reuse"].tolist() == [ReuseClass.WEIGHT, ReuseClass.ACTIVATION, ReuseClass.GRADIENT,
                                       ReuseClass.GRADIENT]
    assert trace["tensor_id"].tolist() == [0, 1, 2, 2]


def test_minimal_attention():
    trace = gen_attention(AttentionSpec(1, 4))
    # Q, K, score write, score read, V, output write
    assert trace["op"].tolist() == [0, 0, 1, 0, 0, 1]
    assert trace["reuse"].tolist() == [1, 0, 3, 3, 0, 1]


def test_rnn_hints():
    trace = gen_rnn(RnnSpec(4, 2))
    assert set(trace["reuse"].tolist()) == {ReuseClass.WEIGHT, ReuseClass.ACTIVATION}


@pytest.mark.parametrize("make, fragment", [
    (lambda: GemmSpec(4, 4, 4, 8, 4, 4), "tiles"),
    (lambda: GemmSpec(0, 4, 4), "positive"),
    (lambda: GemmSpec(4, 4, 4, element_bytes=3), "element_bytes"),
    (lambda: GemmSpec(4, 4, 4, base_a=0, base_b=16, base_c=4096), "overlap"),
    (lambda: GemmSpec(4, 4, 4, base_a=0), "none of them"),
    (lambda: RnnSpec(4, 0), "positive"),
    (lambda: AttentionSpec(4, 4, base_q=0), "none of them"),
])
def test_spec_validation(make, fragment):
    with pytest.raises(WorkloadError, match=fragment):
        make()


def test_default_tiles_clamp_to_dimensions():
    spec = GemmSpec(8, 100, 3)
    assert (spec.tile_m, spec.tile_n, spec.tile_k) == (8, 32, 3)


def test_layout_is_page_aligned_and_disjoint():
    regions = GemmSpec(33, 17, 5).at(1 << 20).regions()
    spans = sorted(regions.values())
    assert all(base % 4096 == 0 for base, _ in spans)
    assert all(a + s <= b for (a, s), (b, _) in zip(spans, spans[1:]))


def test_text_round_trip():
    trace = merge_streams([gen_gemm(GemmSpec(3, 5, 2), core=c, start_tick=c) for c in range(2)])
    text = format_trace(trace, ["demo"])
    assert text.splitlines()[1] == "# demo"
    assert (parse_trace(text) == trace).all()
    buf = io.StringIO()
    write_trace(trace, buf)
    assert (read_trace(io.StringIO(buf.getvalue())) == trace).all()


def test_unhinted_round_trip():
    trace = gen_random(20, cores=2, seed=3)
    assert (trace["reuse"] == NO_HINT).all()
    assert (parse_trace(format_trace(trace)) == trace).all()


@pytest.mark.parametrize("text, fragment", [
    ("0 0 R 0x0\n", "line 1: expected 5 or 6"),
    ("# c\n0 0 X 0x0 4\n", "line 2: op"),
    ("0 0 R 100 4\n", "hexadecimal"),
    ("0 0 R 0x0 65\n", "out of range"),
    ("0 0 R 0x0 4 1:Q\n", "reuse class"),
    ("0 0 R 0x0 four\n", "malformed"),
    ("5 0 R 0x0 4\n3 0 R 0x0 4\n", "goes backwards"),
])
def test_parse_errors(text, fragment):
    with pytest.raises(WorkloadError, match=fragment):
        parse_trace(text)


def test_ticks_may_interleave_across_cores():
    trace = parse_trace("5 0 R 0x0 4\n3 1 R 0x40 4\n6 0 W 0x0 4\n")
    check_monotonic(trace)
    assert len(trace) == 3


def test_merge_orders_by_tick_then_core():
    a = gen_random(5, cores=1, seed=1)
    b = gen_random(5, cores=1, seed=2)
    b["core"] = 1
    merged = merge_streams([b, a])
    assert merged["tick"].tolist() == sorted(merged["tick"].tolist())
    assert merged["core"].tolist()[:2] == [0, 1]


def test_concat_renumbers():
    parts = [gen_rnn(RnnSpec(2, 1)), gen_rnn(RnnSpec(2, 1))]
    assert concat(parts)["tick"].tolist() == list(range(sum(len(p) for p in parts)))
    assert len(concat([])) == 0


def test_request_objects_round_trip():
    reqs = [MemoryRequest(0, 1, Op.READ, 64, 8, TensorHint(3, ReuseClass.STREAMING)),
            MemoryRequest(1, 0, Op.WRITE, 0, 64)]
    trace = from_requests(reqs)
    assert to_requests(trace) == reqs
    with pytest.raises(WorkloadError):
        MemoryRequest(0, 0, Op.READ, 0, 65)


def test_presets():
    for name in PRESETS:
        trace = preset(name)
        assert set(trace["core"].tolist()) == {0, 1, 2, 3}
        spans = [(trace["address"][trace["core"] == c].min(), trace["address"][trace["core"] == c].max())
                 for c in range(4)]
        assert all(hi < lo for (_, hi), (lo, _) in zip(spans, spans[1:]))
        check_monotonic(trace)
    assert len(preset("gemm-small")) == 4 * gemm_request_count(256, 256, 256, 32, 32, 32, 4, (0, 1 << 18, 2 << 18))
    with pytest.raises(WorkloadError, match="unknown workload"):
        preset("huge")


def test_empty_trace():
    assert len(empty_trace()) == 0
    assert format_trace(empty_trace()).count("\n") == 1
