"""Throughput of multiplexed, pruned encoders: a deterministic FLOP proxy and wall-clock timing.

FLOP model (multiply-add pairs counted as 2 FLOPs), per input sequence of
length T through a layer with live hidden width d, live attention width
d_a (live heads x head dim) and live intermediate width f:

    attention   T * (8 * d * d_a + 4 * T * d_a)   if the MHA sublayer is live
    feed-forward T * 4 * d * f                     if the FFN sublayer is live

Multiplexing adds 2*N*T*d (key products and stream sum) and the
demultiplexers add 2*N*d*d. The demux cost is taken at the pooled vector:
each demux is affine and pooling is a mean, so demuxing after pooling gives
identical classifier inputs. The dense N=1 baseline carries no mux/demux.
"""
from __future__ import annotations

import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import Rng
from .encoder import EncoderModel, forward
from .mux import MuxKit, multiplex

DEFAULT_SEQLEN = 128  # max sequence length of the reference recipe


class InsufficientWorkError(RuntimeError):
    pass


def _live_layers(model: EncoderModel, spec=None):
    """Yield (d_attn, d_ff) per layer; 0 means the sublayer is absent."""
    dh = model.head_dim
    for i, layer in enumerate(model.layers):
        if spec is None:
            da = 0 if layer.attn is None else layer.attn.n_heads * dh
            f = 0 if layer.ffn is None else layer.ffn.width
        else:
            s = spec.canonical()
            da = int(s.heads[i].sum()) * dh if s.mha[i] else 0
            f = int(s.intermediate[i].sum()) if s.ffn[i] else 0
        yield da, f


def encoder_flops(model: EncoderModel, seqlen: int, spec=None) -> int:
    d = model.d_hidden if spec is None else int(np.sum(spec.hidden))
    T = seqlen
    total = 0
    for da, f in _live_layers(model, spec):
        if da:
            total += T * (8 * d * da + 4 * T * da)
        if f:
            total += T * 4 * d * f
    return total


def mux_flops(d: int, seqlen: int, n: int) -> int:
    return 2 * n * seqlen * d + 2 * n * d * d


def flop_count(model: EncoderModel, seqlen: int = DEFAULT_SEQLEN, spec=None, n_mux: int | None = None) -> int:
    """FLOPs of one forward pass over one (multiplexed) sequence.

    ``spec`` masks a dense model; a compacted model needs none. With
    ``n_mux`` set, the multiplexer and N demultiplexers are included.
    """
    if seqlen < 1:
        raise ValueError("sequence length must be >= 1")
    total = encoder_flops(model, seqlen, spec)
    if n_mux is not None:
        d = model.d_hidden if spec is None else int(np.sum(spec.hidden))
        total += mux_flops(d, seqlen, n_mux)
    return total


def mux_overhead(model: EncoderModel, seqlen: int, n: int, spec=None) -> float:
    """Share of ``flop_count`` spent in the multiplexer and demultiplexers."""
    full = flop_count(model, seqlen, spec, n)
    return (full - encoder_flops(model, seqlen, spec)) / full


def dense_flops(n_layers: int, d: int, d_ff: int, seqlen: int = DEFAULT_SEQLEN) -> int:
    """Baseline cost: dense, unmultiplexed encoder with the original dimensions."""
    return n_layers * seqlen * (8 * d * d + 4 * seqlen * d + 4 * d * d_ff)


@dataclass(frozen=True)
class BenchRun:
    mode: str = "flops"  # "flops" (deterministic proxy) or "wall"
    n: int = 1
    sparsity: float = 0.0
    seqlen: int = DEFAULT_SEQLEN
    reps: int = 5
    warmup: int = 1
    seed: int = 0
    workers: int = 1
    task: str = "synthetic"

    def __post_init__(self):
        if self.mode not in ("flops", "wall"):
            raise ValueError(f"unknown bench mode {self.mode!r}")
        if self.mode == "wall" and self.reps < 3:
            raise ValueError("wall-clock mode needs at least 3 repetitions")

    @property
    def batch(self) -> int:
        return 128 * self.n


@dataclass(frozen=True)
class BenchResult:
    run: BenchRun
    throughput: float  # inputs per second (wall) or inputs per GFLOP (flops)
    reps: int
    dispersion: float  # max / median over repetitions; 1.0 in proxy mode
    multiplier: float | None = None

    def csv_row(self) -> str:
        r = self.run
        mult = "" if self.multiplier is None else repr(float(self.multiplier))
        return f"{r.task},{r.n},{r.sparsity!r},{r.mode},{r.batch},{r.seqlen},{self.throughput!r},{mult}"


CSV_HEADER = "task,n,sparsity,mode,batch,seqlen,throughput,multiplier"


def _pipeline(model: EncoderModel, kit: MuxKit | None, raw: np.ndarray) -> np.ndarray:
    """Classify raw (N*B, T, d) inputs; returns (N*B, C) logits."""
    if kit is None:
        pooled = forward(model, raw).pooled
        return pooled @ model.cls_w + model.cls_b
    n = kit.n
    x = multiplex(kit, raw.reshape(n, -1, *raw.shape[1:]))
    pooled = forward(model, x).pooled
    # demux after pooling: identical to pooling the demuxed sequences
    streams = np.einsum("bd,nde->nbe", pooled, kit.demux_w) + kit.demux_b[:, None, :]
    return (streams @ model.cls_w + model.cls_b).reshape(-1, model.n_classes)


def measure(model: EncoderModel, kit: MuxKit | None, run: BenchRun, spec=None) -> BenchResult:
    """Throughput of ``model`` (behind ``kit`` when multiplexed) under ``run``.

    Wall mode times ``reps`` batches of 128*N raw sequences and reports the
    median inputs/second; flops mode returns N / flop_count in inputs per
    GFLOP and is exactly reproducible.
    """
    n = 1 if kit is None else kit.n
    if n != run.n:
        raise ValueError(f"run.n={run.n} but kit multiplexes {n} streams")
    if run.mode == "flops":
        cost = flop_count(model, run.seqlen, spec, None if kit is None else kit.n)
        return BenchResult(run, n / cost * 1e9, reps=1, dispersion=1.0)
    if spec is not None:
        raise ValueError("wall mode times compacted models; compact the spec first")
    d = model.d_hidden
    raw = Rng(run.seed).normal((run.batch, run.seqlen, d))
    chunks = np.array_split(np.arange(128), max(1, run.workers))

    def one_pass():
        if run.workers == 1:
            return _pipeline(model, kit, raw)
        # split multiplexed rows across workers; each keeps its N streams together
        per = raw.reshape(n, 128, run.seqlen, d)
        with ThreadPoolExecutor(run.workers) as ex:
            return list(ex.map(lambda c: _pipeline(model, kit, per[:, c].reshape(-1, run.seqlen, d)), chunks))

    for _ in range(run.warmup):
        one_pass()
    resolution = time.get_clock_info("perf_counter").resolution
    rates = []
    for _ in range(run.reps):
        t0 = time.perf_counter()
        one_pass()
        elapsed = time.perf_counter() - t0
        if elapsed < 1000 * resolution:
            raise InsufficientWorkError(
                f"pass took {elapsed:.3g}s, too close to timer resolution {resolution:.1g}s")
        rates.append(run.batch / elapsed)
    med = statistics.median(rates)
    return BenchResult(run, med, reps=run.reps, dispersion=max(rates) / med)


def multiplier(candidate: float, baseline: float) -> float:
    if baseline <= 0:
        raise ValueError(f"baseline throughput must be positive, got {baseline}")
    return candidate / baseline
