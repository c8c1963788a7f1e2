import itertools

import numpy as np
import pytest

from prumux import bench
from prumux.bench import (BenchResult, BenchRun, CSV_HEADER, InsufficientWorkError, dense_flops, encoder_flops,
                          flop_count, measure, multiplier, mux_overhead)
from prumux.encoder import init_model
from prumux.mux import make_kit
from prumux.pruner import SparsitySpec, align_demux, compact, spec_for_sparsity


def test_flop_count_hand_example():
    # L=1, T=2, d=2, d_ff=4: per token 8*4 + 4*2*2 + 4*2*4 = 80
    m = init_model(0, d=2, n_heads=1, d_ff=4, n_layers=1)
    assert flop_count(m, 2) == 160
    assert dense_flops(1, 2, 4, 2) == 160


def test_fully_masked_encoder_costs_only_mux():
    m = init_model(0, d=4, n_heads=2, d_ff=8, n_layers=2)
    spec = SparsitySpec(np.zeros((2, 2)), np.zeros(2), np.zeros(2), np.ones(4), np.zeros((2, 8)))
    assert encoder_flops(m, 16, spec) == 0
    assert flop_count(m, 16, spec, n_mux=3) == 2 * 3 * 16 * 4 + 2 * 3 * 4 * 4
    assert flop_count(compact(m, spec), 16, None, n_mux=3) == flop_count(m, 16, spec, n_mux=3)


def test_halving_d_ff_halves_ffn_term():
    full = init_model(0, d=4, n_heads=2, d_ff=8, n_layers=1)
    half = init_model(0, d=4, n_heads=2, d_ff=4, n_layers=1)
    no_ffn = SparsitySpec(np.ones((1, 2)), [1], [0], np.ones(4), np.zeros((1, 8)))
    attn = encoder_flops(full, 16, no_ffn)
    assert encoder_flops(half, 16) - attn == (encoder_flops(full, 16) - attn) // 2


def test_masked_and_compacted_counts_agree():
    m = init_model(0, d=8, n_heads=2, d_ff=12, n_layers=2)
    rng = np.random.default_rng(0)
    for _ in range(10):
        spec = SparsitySpec(rng.random((2, 2)) < 0.7, rng.random(2) < 0.8, rng.random(2) < 0.8,
                            np.r_[1, rng.random(7) < 0.7], rng.random((2, 12)) < 0.7).canonical()
        assert flop_count(m, 32, spec, 2) == flop_count(compact(m, spec), 32, None, 2)


def _toy(n, s, d=32, d_ff=128, layers=2, heads=4, seqlen=128):
    m = init_model(0, d=d, n_heads=heads, d_ff=d_ff, n_layers=layers)
    spec = spec_for_sparsity(layers, heads, d, d_ff, s)
    kit = make_kit(n, d, seed=0) if n > 1 else None
    c = compact(m, spec)
    if kit is not None:
        kit = align_demux(kit, spec.hidden)
    res = measure(c, kit, BenchRun(mode="flops", n=n, sparsity=s, seqlen=seqlen))
    base = 1e9 / dense_flops(layers, d, d_ff, seqlen)
    return multiplier(res.throughput, base), res, m, spec


def test_n10_multiplier_within_mux_overhead_bound():
    mult, _, m, _ = _toy(10, 0.0)
    bound = mux_overhead(m, 128, 10)
    assert 10 * (1 - bound) <= mult <= 10
    assert 9.5 <= mult <= 10.0


@pytest.mark.parametrize("n", [1, 2, 5, 10])
def test_multiplier_monotone_in_sparsity(n):
    mults = [_toy(n, s)[0] for s in (0.0, 0.6, 0.9, 0.95)]
    assert all(a <= b for a, b in zip(mults, mults[1:]))


def test_flops_mode_is_deterministic():
    a, b = _toy(5, 0.6)[1], _toy(5, 0.6)[1]
    assert a.csv_row() == b.csv_row()
    assert a.reps == 1 and a.dispersion == 1.0


def test_multiplier_algebra():
    assert multiplier(3.0, 3.0) == 1.0
    assert multiplier(24.8, 12.4) == 2.0
    a, b, c = 7.0, 3.5, 1.75
    assert multiplier(a, b) * multiplier(b, c) == pytest.approx(multiplier(a, c), rel=1e-15)
    with pytest.raises(ValueError):
        multiplier(1.0, 0.0)


def test_bench_run_validation():
    assert BenchRun(n=5).batch == 640
    with pytest.raises(ValueError):
        BenchRun(mode="wall", reps=2)
    with pytest.raises(ValueError):
        BenchRun(mode="gpu")


def test_measure_rejects_width_mismatch():
    m = init_model(0, d=8, n_heads=2, d_ff=8, n_layers=1)
    with pytest.raises(ValueError):
        measure(m, make_kit(2, 8, seed=0), BenchRun(n=3))


def test_csv_row_layout():
    run = BenchRun(mode="flops", n=2, sparsity=0.5, seqlen=64, task="toy")
    row = BenchResult(run, 12.5, 1, 1.0, 2.0).csv_row().split(",")
    assert len(row) == len(CSV_HEADER.split(","))
    assert row == ["toy", "2", "0.5", "flops", "256", "64", "12.5", "2.0"]


def test_wall_mode_reports_reps_and_dispersion():
    m = init_model(0, d=16, n_heads=2, d_ff=32, n_layers=1)
    res = measure(m, make_kit(2, 16, seed=0), BenchRun(mode="wall", n=2, seqlen=16, reps=3))
    assert res.reps == 3 and res.dispersion >= 1.0 and res.throughput > 0


def test_wall_mode_rejects_masked_spec():
    m = init_model(0, d=8, n_heads=2, d_ff=8, n_layers=1)
    with pytest.raises(ValueError):
        measure(m, None, BenchRun(mode="wall", reps=3, seqlen=4), spec=SparsitySpec.for_model(m))


def test_wall_mode_detects_insufficient_work(monkeypatch):
    ticks = itertools.count()
    monkeypatch.setattr(bench.time, "perf_counter", lambda: next(ticks) * 1e-12)
    m = init_model(0, d=8, n_heads=2, d_ff=8, n_layers=1)
    with pytest.raises(InsufficientWorkError):
        measure(m, None, BenchRun(mode="wall", reps=3, seqlen=4))


def test_workers_give_same_logits():
    m = init_model(0, d=8, n_heads=2, d_ff=8, n_layers=1)
    kit = make_kit(2, 8, seed=0)
    raw = np.random.default_rng(0).normal(size=(2 * 8, 4, 8))
    full = bench._pipeline(m, kit, raw)
    per = raw.reshape(2, 8, 4, 8)
    parts = [bench._pipeline(m, kit, per[:, c].reshape(-1, 4, 8)) for c in (slice(0, 4), slice(4, 8))]
    assert full.shape == (16, 2)
    assert np.allclose(np.concatenate([p.reshape(2, 4, 2) for p in parts], axis=1).reshape(16, 2), full)
