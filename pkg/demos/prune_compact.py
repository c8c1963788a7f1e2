"""Structured pruning: a masked model and its compacted copy compute the same function, only cheaper."""
import numpy as np

from prumux import compact, encode, forward, init_model, sparsity_of
from prumux.bench import flop_count
from prumux.pruner import spec_for_sparsity

L, H, D, DFF = 4, 4, 32, 128
model = init_model(0, D, H, DFF, L)
x = np.random.default_rng(0).normal(size=(3, 10, D))

for target in (0.0, 0.6, 0.9, 0.95):
    spec = spec_for_sparsity(L, H, D, DFF, target)
    small = compact(model, spec)
    live = np.flatnonzero(spec.hidden)
    masked = encode(model, spec, x).pooled[:, live]
    gap = np.max(np.abs(masked - forward(small, x[..., live]).pooled))
    layers = sum(a is not None or f is not None for a, f in ((ly.attn, ly.ffn) for ly in small.layers))
    print(f"s={sparsity_of(spec):.3f}  live layers {layers}/{L}  hidden {small.d_hidden}/{D}  "
          f"FLOPs {flop_count(small, 128):>10,d}  masked-vs-compact gap {gap:.1e}")
