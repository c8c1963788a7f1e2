"""Command-line entry point: ``prumux {train,prune,bench,plan}``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench, planner, toytrain
from .distiller import LossWeights
from .encoder import init_model
from .io import (FormatError, ModelBundle, load_bundle, load_measurements, load_planner, load_spec,
                 save_bundle, save_history, save_planner)
from .mux import make_kit
from .pruner import SparsitySpec, align_demux, compact, sparsity_of

DEFAULT_CONFIG = {
    "seed": 0,
    "vocab": 32,
    "length": 8,
    "classes": 2,
    "count": 640,
    "d_hidden": 32,
    "heads": 4,
    "d_ff": 64,
    "layers": 2,
    "warmup_learning_rate": 0.01,
    "warmup_epochs": 200,
    "finetune_learning_rate": 0.03,
    "finetune_epochs": 20,
    "pruning_learning_rate": 0.03,
    "pruning_epochs": 5,
    "batch_size": 32,
    "distill_layer_loss_alpha": 0.5,
    "distill_ce_loss_alpha": 0.5,
    "distill_temp": 2.0,
}

PHASES = {"warmup": "retrieval-warmup", "task": "task", "prune": "prune-distill"}


class CLIError(Exception):
    pass


def _config(path) -> dict:
    cfg = dict(DEFAULT_CONFIG)
    if path:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CLIError(f"cannot read config {path}: {exc}") from None
        unknown = set(user) - set(cfg)
        if unknown:
            raise CLIError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(user)
    return cfg


def _is_dense(spec: SparsitySpec) -> bool:
    return all(np.all(a) for a in (spec.heads, spec.mha, spec.ffn, spec.hidden, spec.intermediate))


def _task(cfg, n):
    return toytrain.gen_task(cfg["seed"], cfg["vocab"], cfg["length"], cfg["classes"], n,
                             cfg["count"], dim=cfg["d_hidden"])


def cmd_train(args) -> int:
    cfg = _config(args.config)
    phase = PHASES[args.phase]
    task = _task(cfg, args.n)
    if args.bundle:
        b = load_bundle(args.bundle)
        if b.kit.n != args.n:
            raise CLIError(f"bundle multiplexes N={b.kit.n}, but --n {args.n} was given")
    else:
        if args.phase == "prune":
            raise CLIError("--phase prune needs a trained teacher --bundle")
        d = cfg["d_hidden"]
        model = init_model(cfg["seed"] + 1, d, cfg["heads"], cfg["d_ff"], cfg["layers"],
                           cfg["classes"], cfg["vocab"])
        b = ModelBundle(model, make_kit(args.n, d, cfg["seed"] + 2),
                        SparsitySpec.dense(cfg["layers"], cfg["heads"], d, cfg["d_ff"]),
                        {"seed": cfg["seed"], "phases": [],
                         "dense": {"layers": cfg["layers"], "heads": cfg["heads"], "d_hidden": d,
                                   "d_ff": cfg["d_ff"]}})
    if args.phase == "warmup":
        tc = toytrain.TrainConfig(cfg["warmup_learning_rate"], cfg["warmup_epochs"], cfg["batch_size"],
                                  phase, cfg["seed"] + 3)
        kit, model, hist = toytrain.train_phase1(b.kit, b.model, task, tc)
        out = ModelBundle(model, kit, b.spec, b.meta)
        metric = ("retrieval_accuracy", hist[-1]["accuracy"])
    elif args.phase == "task":
        tc = toytrain.TrainConfig(cfg["finetune_learning_rate"], cfg["finetune_epochs"], cfg["batch_size"],
                                  phase, cfg["seed"] + 4)
        kit, model, hist = toytrain.train_task(b.kit, b.model, task, tc)
        out = ModelBundle(model, kit, b.spec, b.meta)
        metric = ("task_accuracy", hist[-1]["accuracy"])
    else:
        if not args.spec:
            raise CLIError("--phase prune needs --spec")
        if not _is_dense(b.spec):
            raise CLIError("teacher bundle is already pruned")
        spec = load_spec(args.spec, b.model).canonical()
        tc = toytrain.TrainConfig(cfg["pruning_learning_rate"], cfg["pruning_epochs"], cfg["batch_size"],
                                  phase, cfg["seed"] + 5)
        w = LossWeights(cfg["distill_layer_loss_alpha"], cfg["distill_ce_loss_alpha"], cfg["distill_temp"])
        st = toytrain.train_prune_distill(b.kit, b.model, spec, task, tc, w)
        out = ModelBundle(st.model, st.kit, spec, b.meta)
        hist = st.history
        metric = ("task_accuracy", hist[-1]["accuracy"])
    entry = {"phase": args.phase, "n": args.n, "config": cfg, metric[0]: metric[1]}
    out.meta = dict(out.meta, phases=list(out.meta.get("phases", [])) + [entry])
    save_bundle(out, args.out)
    if args.history:
        save_history(hist, args.history)
    print(f"{args.phase}: {metric[0]}={metric[1]:.4f} -> {args.out}")
    return 0


def cmd_prune(args) -> int:
    b = load_bundle(args.bundle)
    if not _is_dense(b.spec):
        raise CLIError("bundle is already pruned; prune the dense model instead")
    spec = load_spec(args.spec, b.model).canonical()
    out = ModelBundle(compact(b.model, spec), align_demux(b.kit, spec.hidden), spec,
                      dict(b.meta, phases=list(b.meta.get("phases", [])) + [{"phase": "compact", "sparsity": sparsity_of(spec)}]))
    save_bundle(out, args.out)
    print(f"pruned to sparsity {sparsity_of(spec):.4f} -> {args.out}")
    return 0


def _dense_dims(b: ModelBundle) -> dict:
    dense = b.meta.get("dense")
    if dense:
        return dense
    return {"layers": len(b.spec.mha), "heads": b.spec.heads.shape[1], "d_hidden": len(b.spec.hidden),
            "d_ff": b.spec.intermediate.shape[1]}


def cmd_bench(args) -> int:
    b = load_bundle(args.bundle)
    dd = _dense_dims(b)
    n = b.kit.n
    s = sparsity_of(b.spec, b.model.head_dim)
    kit = b.kit if n > 1 else None
    run = bench.BenchRun(mode="flops" if args.mode == "flops" else "wall", n=n, sparsity=s, seqlen=args.seqlen,
                         reps=args.reps, warmup=1, seed=args.seed, workers=args.workers, task=args.task)
    res = bench.measure(b.model, kit, run)
    if run.mode == "flops":
        base = 1e9 / bench.dense_flops(dd["layers"], dd["d_hidden"], dd["d_ff"], args.seqlen)
    else:
        dense = init_model(args.seed, dd["d_hidden"], dd["heads"], dd["d_ff"], dd["layers"],
                           b.model.n_classes, b.model.vocab_size)
        base_run = bench.BenchRun(mode="wall", n=1, sparsity=0.0, seqlen=args.seqlen, reps=args.reps,
                                  seed=args.seed, workers=args.workers, task=args.task)
        base = bench.measure(dense, None, base_run).throughput
    res = bench.BenchResult(run, res.throughput, res.reps, res.dispersion, bench.multiplier(res.throughput, base))
    if args.header:
        print(bench.CSV_HEADER + ("" if run.mode == "flops" else ",reps,dispersion"))
    row = res.csv_row()
    if run.mode == "wall":
        row += f",{res.reps},{res.dispersion!r}"
    print(row)
    return 0


def cmd_plan_fit(args) -> int:
    records = load_measurements(args.measurements)
    tasks = sorted({r.task for r in records})
    acc = {}
    for t in tasks:
        try:
            acc[t] = planner.fit_accuracy(records, t, args.n_knots, args.s_knots)
        except planner.PlannerError as exc:
            if len(tasks) == 1:
                raise
            print(f"warning: skipping accuracy model for {t}: {exc}", file=sys.stderr)
    thr = planner.fit_throughput(records, args.reference_task)
    save_planner(acc, thr, args.out)
    print(f"fitted {len(acc)} accuracy model(s); throughput from {args.reference_task} -> {args.out}")
    return 0


def _pick_task(acc: dict, records, task):
    if task is None:
        tasks = sorted({r.task for r in records} & set(acc))
        if len(tasks) != 1:
            raise CLIError(f"several tasks available {tasks}; pass --task")
        task = tasks[0]
    if task not in acc:
        raise CLIError(f"no accuracy model for task {task!r}")
    return task


def cmd_plan_predict(args) -> int:
    acc, thr = load_planner(args.model)
    records = load_measurements(args.measurements)
    task = _pick_task(acc, records, args.task)
    query = planner.PlannerQuery(args.budget, tuple(sorted(thr.table)), args.top)
    preds = planner.predict_topk(acc[task], thr, records, query)
    if not preds:
        print(f"no feasible (N, s) for {task} at budget {args.budget}", file=sys.stderr)
        return 0
    for i, p in enumerate(preds, 1):
        print(f"({p.n}, {p.sparsity:.2f})  {p.throughput:.1f}x  acc={p.accuracy:.4f}  score={p.score:.4f}")
    return 0


def cmd_plan_eval(args) -> int:
    acc, thr = load_planner(args.model)
    records = load_measurements(args.measurements)
    task = _pick_task(acc, records, args.task)
    m = acc[task]
    try:
        ma = f"{planner.loocv_accuracy(m, args.delta):.4f}"
    except planner.DegenerateGridError as exc:
        ma = f"n/a ({exc})"
    mt = planner.eval_throughput_model(thr, records, task, args.band)
    truth = planner.truth_from_records(records, task)
    cands = []
    for c in sorted(truth):
        if c not in thr.table:
            continue
        try:
            planner.eval_accuracy(m, records, *c)
        except planner.PlannerError:
            continue
        cands.append(c)
    sweep = planner.budget_sweep(m, thr, records, cands, truth)
    print(f"task={task}")
    print(f"M_A={ma}")
    print(f"M_T={mt:.4f}")
    print(f"top3_hit_rate={sweep.hit_rate:.4f}")
    return 0


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="prumux", description="Multiplexed, structurally pruned encoders and the (N, s) planner")
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run a toy training phase")
    t.add_argument("--phase", choices=sorted(PHASES), required=True)
    t.add_argument("--n", type=int, required=True, help="multiplexing width")
    t.add_argument("--config", help="JSON config overriding the defaults")
    t.add_argument("--bundle", help="input bundle (required for --phase prune)")
    t.add_argument("--spec", help="sparsity spec JSON (for --phase prune)")
    t.add_argument("--history", help="write per-epoch CSV history here")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    p = sub.add_parser("prune", help="threshold, compact and align a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prune)

    b = sub.add_parser("bench", help="throughput of a bundle as one CSV row")
    b.add_argument("--bundle", required=True)
    b.add_argument("--mode", choices=["wall", "flops"], default="flops")
    b.add_argument("--reps", type=int, default=5)
    b.add_argument("--seqlen", type=int, default=bench.DEFAULT_SEQLEN)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--task", default="synthetic")
    b.add_argument("--header", action="store_true")
    b.set_defaults(func=cmd_bench)

    pl = sub.add_parser("plan", help="choose (N, s) under an accuracy-loss budget")
    psub = pl.add_subparsers(dest="plan_command", required=True)
    f = psub.add_parser("fit")
    f.add_argument("--measurements", required=True)
    f.add_argument("--reference-task", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--n-knots", type=_floats, help="comma list restricting the widths used as knots")
    f.add_argument("--s-knots", type=_floats, help="comma list restricting the sparsities used as knots")
    f.set_defaults(func=cmd_plan_fit)
    pr = psub.add_parser("predict")
    pr.add_argument("--model", required=True)
    pr.add_argument("--measurements", required=True)
    pr.add_argument("--budget", type=float, required=True)
    pr.add_argument("--top", type=int, default=3)
    pr.add_argument("--task")
    pr.set_defaults(func=cmd_plan_predict)
    e = psub.add_parser("eval")
    e.add_argument("--model", required=True)
    e.add_argument("--measurements", required=True)
    e.add_argument("--task")
    e.add_argument("--delta", type=float, default=0.015)
    e.add_argument("--band", type=float, default=0.20)
    e.set_defaults(func=cmd_plan_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CLIError, FormatError, planner.PlannerError, OSError, ValueError) as exc:
        print(f"prumux: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
