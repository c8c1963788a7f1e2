"""Prune a trained multiplexed classifier, then recover accuracy by distilling from the dense teacher."""
from prumux import LossWeights, TrainConfig, gen_task, init_model, make_kit, sparsity_of, train_prune_distill, train_task
from prumux.pruner import spec_for_sparsity
from prumux.toytrain import make_student, task_accuracy

N, D, L, H, DFF = 2, 16, 2, 2, 32

task = gen_task(0, vocab=16, length=6, n_classes=2, n_mux=N, count=1200, dim=D)
kit, teacher, _ = train_task(make_kit(N, D, seed=2), init_model(1, D, H, DFF, L, 2, task.vocab), task,
                             TrainConfig(lr=0.03, epochs=20, seed=4))
print(f"dense teacher accuracy      {task_accuracy(kit, teacher, task):.3f}")

spec = spec_for_sparsity(L, H, D, DFF, 0.25)
before = make_student(kit, teacher, spec)
print(f"pruned to s={sparsity_of(spec):.2f}, untuned  {task_accuracy(before.kit, before.model, task, before.live):.3f}")

st = train_prune_distill(kit, teacher, spec, task, TrainConfig(lr=0.03, epochs=5, phase="prune-distill", seed=5),
                         LossWeights(layer=0.5, ce=0.5))
print(f"after distillation          {task_accuracy(st.kit, st.model, task, st.live):.3f}")
