"""Throughput multipliers over an (N, s) grid: the exact FLOP proxy, plus one wall-clock spot check."""
from prumux import BenchRun, init_model, make_kit, measure
from prumux.bench import dense_flops, multiplier
from prumux.pruner import align_demux, compact, spec_for_sparsity

L, H, D, DFF = 2, 4, 64, 256
dense = init_model(0, D, H, DFF, L)
base = 1e9 / dense_flops(L, D, DFF)


def build(n, s):
    spec = spec_for_sparsity(L, H, D, DFF, s)
    kit = align_demux(make_kit(n, D, seed=0), spec.hidden) if n > 1 else None
    return compact(dense, spec), kit


print("FLOP-proxy multiplier vs dense N=1")
print("   s " + "".join(f"  N={n:<4d}" for n in (1, 2, 5, 10)))
for s in (0.0, 0.6, 0.8, 0.9, 0.95):
    row = [multiplier(measure(*build(n, s), BenchRun(n=n, sparsity=s)).throughput, base) for n in (1, 2, 5, 10)]
    print(f"{s:4.2f} " + "".join(f"  {m:6.1f}" for m in row))

wall = BenchRun(mode="wall", n=2, sparsity=0.9, reps=3)
t_dense = measure(dense, None, BenchRun(mode="wall", reps=3)).throughput
res = measure(*build(2, 0.9), wall)
print(f"wall clock (2, 0.90): {multiplier(res.throughput, t_dense):.1f}x  (dispersion {res.dispersion:.2f})")
