"""Retrieval warm-up: two token sequences share one forward pass and are recovered by their demuxers."""
from prumux import TrainConfig, gen_task, init_model, make_kit, train_phase1

N, D = 2, 16

task = gen_task(seed=0, vocab=16, length=6, n_classes=2, n_mux=N, count=320, dim=D)
model = init_model(1, D, 2, 32, 2, 2, task.vocab)
kit = make_kit(N, D, seed=2)

kit, model, history = train_phase1(kit, model, task, TrainConfig(lr=0.01, epochs=60, phase="retrieval-warmup", seed=3))
for h in history[::10] + history[-1:]:
    print(f"epoch {h['epoch']:3d}  loss {h['loss']:8.3f}  token retrieval accuracy {h['accuracy']:.3f}")
