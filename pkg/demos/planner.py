"""Choose (N, s) under an accuracy-loss budget from a coarse grid of measurements."""
from prumux import PlannerQuery, data_path, fit_accuracy, fit_throughput, load_measurements, predict_topk
from prumux.planner import loocv_accuracy

records = load_measurements(data_path("published_qqp.csv"))
acc = fit_accuracy(records, "QQP", s_knots=(0.6, 0.7, 0.8, 0.9, 0.95))
thr = fit_throughput(records, "QQP")
candidates = tuple(sorted({(r.n, r.sparsity) for r in records}))
print(f"leave-one-out accuracy of the grid model (delta 1.5 pts): {loocv_accuracy(acc):.0%}")

for budget in (0.0, 0.01, 0.03, 0.05):
    top = predict_topk(acc, thr, records, PlannerQuery(budget, candidates))
    picks = "   ".join(f"({p.n}, {p.sparsity:.2f}) {p.throughput:.1f}x" for p in top)
    print(f"budget {budget:.0%}: {picks}")
