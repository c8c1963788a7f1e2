"""Desk-scale training of multiplexed (and pruned) encoders on synthetic token tasks.

Three phases mirror the full recipe at toy scale: retrieval warm-up, task
fine-tuning, and prune-then-distill. Gradients are hand-derived and plain
SGD is used throughout; ``grad_check`` compares any gradient against
central finite differences.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import distiller
from .core import Rng, log_softmax, outer_sum, softmax
from .distiller import DistillMapping, LossWeights
from .encoder import EncoderModel, backward, flatten, forward, unflatten
from .mux import MuxKit, multiplex
from .pruner import SparsitySpec, align_demux, compact


class DivergenceError(RuntimeError):
    pass


@dataclass
class SyntheticTask:
    """Frozen random token embeddings plus train/eval splits.

    ``*_ids`` are (M, N, L) token ids; ``*_labels`` are (M, N) class ids, one
    per multiplexed stream.
    """

    vocab: int
    length: int
    n_classes: int
    n_mux: int
    embedding: np.ndarray
    seed: int
    rule: str
    train_ids: np.ndarray
    train_labels: np.ndarray
    eval_ids: np.ndarray
    eval_labels: np.ndarray

    @property
    def dim(self) -> int:
        return self.embedding.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    # BERT-base recipe values (40 epochs, lr 5e-5 at batch 32*N); toy
    # tasks need far larger SGD steps and more passes over small data.
    lr: float = 0.1
    epochs: int = 40
    batch_size: int = 32  # multiplexed examples per step; raw batch is 32 * N
    phase: str = "task"
    seed: int = 0
    divergence_factor: float = 10.0

    def __post_init__(self):
        if self.phase not in ("retrieval-warmup", "task", "prune-distill"):
            raise ValueError(f"unknown phase {self.phase!r}")
        if self.lr < 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("lr must be >= 0, epochs and batch_size >= 1")


def gen_task(seed: int, vocab: int, length: int, n_classes: int, n_mux: int, count: int,
             dim: int = 32, rule: str = "linear", eval_fraction: float = 0.2) -> SyntheticTask:
    """Random token sequences labelled by a fixed rule.

    ``rule="linear"`` labels a sequence by the argmax of fixed random
    projections of its (centred) mean token embedding; ``rule="first_token"`` uses the
    first token id modulo the class count.
    """
    if not vocab >= n_classes >= 2:
        raise ValueError("need vocab >= n_classes >= 2")
    rng = Rng(seed)
    emb = rng.normal((vocab, dim))
    proj = rng.normal((dim, n_classes))
    ids = rng.integers(vocab, (count, n_mux, length))
    if rule == "linear":
        # centring on the table mean keeps the classes balanced
        labels = np.argmax((emb[ids].mean(axis=2) - emb.mean(axis=0)) @ proj, axis=-1)
    elif rule == "first_token":
        labels = ids[..., 0] % n_classes
    else:
        raise ValueError(f"unknown labelling rule {rule!r}")
    n_eval = int(round(count * eval_fraction))
    n_train = count - n_eval
    return SyntheticTask(vocab=vocab, length=length, n_classes=n_classes, n_mux=n_mux,
                         embedding=emb, seed=seed, rule=rule,
                         train_ids=ids[:n_train], train_labels=labels[:n_train],
                         eval_ids=ids[n_train:], eval_labels=labels[n_train:])


def embed(task: SyntheticTask, ids: np.ndarray, live=None) -> np.ndarray:
    """(B, N, L) ids -> (N, B, L, d) embeddings, optionally restricted to live coordinates."""
    e = task.embedding if live is None else task.embedding[:, live]
    return e[ids].transpose(1, 0, 2, 3)


# composite network: multiplex -> encoder -> demux -> heads

def params_of(kit: MuxKit, model: EncoderModel) -> dict[str, np.ndarray]:
    p = {"enc." + k: v for k, v in flatten(model).items()}
    p["demux_w"] = kit.demux_w
    p["demux_b"] = kit.demux_b
    return p


def rebuild(kit: MuxKit, model: EncoderModel, p: dict) -> tuple[MuxKit, EncoderModel]:
    enc = unflatten(model, {k[4:]: v for k, v in p.items() if k.startswith("enc.")})
    return replace(kit, demux_w=p["demux_w"], demux_b=p["demux_b"]), enc


def _demux_back(kit, H, i, dh, grads):
    """Accumulate grads of h_i = H @ W_i + b_i; returns dH contribution."""
    grads["demux_w"][i] += outer_sum(H, dh)
    grads["demux_b"][i] += dh.sum((0, 1))
    return dh @ kit.demux_w[i].T


def _zero_demux_grads(kit):
    return {"demux_w": np.zeros_like(kit.demux_w), "demux_b": np.zeros_like(kit.demux_b)}


def _input_grad(kit, dx):
    """Gradient w.r.t. the (N, B, L, d) stream embeddings through the multiplexer."""
    return kit.keys[:, None, None, :] * dx[None] / kit.n


def retrieval_forward(kit, model, emb, targets, index):
    """Mean over the batch of the summed token NLL of stream ``index``; returns (loss, grads, d_emb)."""
    X = multiplex(kit, emb)
    tr = forward(model, X, keep_cache=True)
    H = tr.states[-1]
    h = H @ kit.demux_w[index] + kit.demux_b[index]
    logits = h @ model.vocab_w
    lp = log_softmax(logits)
    B, T = targets.shape
    bi, ti = np.meshgrid(np.arange(B), np.arange(T), indexing="ij")
    loss = -lp[bi, ti, targets].sum() / B
    dlogits = np.exp(lp)
    dlogits[bi, ti, targets] -= 1.0
    dlogits /= B
    grads = _zero_demux_grads(kit)
    dh = dlogits @ model.vocab_w.T
    dH = _demux_back(kit, H, index, dh, grads)
    dX, g = backward(model, tr, [None] * model.n_layers + [dH])
    g["vocab_w"] = outer_sum(h, dlogits)
    g["cls_w"] = np.zeros_like(model.cls_w)
    g["cls_b"] = np.zeros_like(model.cls_b)
    grads.update({"enc." + k: v for k, v in g.items()})
    return float(loss), grads, _input_grad(kit, dX)


def _stream_logits(kit, model, H):
    """(N, B, C) classifier logits for every demuxed stream, plus the pooled vectors."""
    pooled = np.stack([(H @ kit.demux_w[i] + kit.demux_b[i]).mean(axis=1) for i in range(kit.n)])
    return pooled @ model.cls_w + model.cls_b, pooled


def _heads_back(kit, model, H, pooled, dlogits, grads, enc_grads):
    """Backprop (N, B, C) logit grads through classifier, pooling and demux; returns dH."""
    enc_grads["cls_w"] = outer_sum(pooled, dlogits)
    enc_grads["cls_b"] = dlogits.sum((0, 1))
    dpooled = dlogits @ model.cls_w.T
    T = H.shape[1]
    dH = np.zeros_like(H)
    for i in range(kit.n):
        dh = np.broadcast_to(dpooled[i][:, None, :] / T, H.shape)
        dH += _demux_back(kit, H, i, dh, grads)
    return dH


def task_forward(kit, model, emb, labels):
    """Mean over streams and batch of the class cross-entropy; returns (loss, grads, d_emb).

    ``labels`` is (B, N).
    """
    X = multiplex(kit, emb)
    tr = forward(model, X, keep_cache=True)
    H = tr.states[-1]
    logits, pooled = _stream_logits(kit, model, H)
    lp = log_softmax(logits)
    y = labels.T  # (N, B)
    n, B = y.shape
    ni, bi = np.meshgrid(np.arange(n), np.arange(B), indexing="ij")
    loss = -lp[ni, bi, y].mean()
    dlogits = np.exp(lp)
    dlogits[ni, bi, y] -= 1.0
    dlogits /= n * B
    grads = _zero_demux_grads(kit)
    g = {}
    dH = _heads_back(kit, model, H, pooled, dlogits, grads, g)
    dX, ge = backward(model, tr, [None] * model.n_layers + [dH])
    ge.update(g)
    ge["vocab_w"] = np.zeros_like(model.vocab_w)
    grads.update({"enc." + k: v for k, v in ge.items()})
    return float(loss), grads, _input_grad(kit, dX)


def teacher_outputs(kit, model, emb, temperature):
    """Teacher trace and soft targets (N, B, C) at ``temperature``."""
    tr = forward(model, multiplex(kit, emb))
    logits, _ = _stream_logits(kit, model, tr.states[-1])
    return tr, softmax(logits / temperature)


def distill_forward(kit, model, mapping: DistillMapping, emb, teacher_trace, soft, weights: LossWeights):
    """Combined distillation loss for the student; returns (loss, ce, layer, grads).

    ``soft`` are the teacher's tempered class probabilities; the ce term is
    the cross-entropy of the tempered student against them, averaged over
    streams and batch.
    """
    X = multiplex(kit, emb)
    tr = forward(model, X, keep_cache=True)
    H = tr.states[-1]
    logits, pooled = _stream_logits(kit, model, H)
    T = weights.temperature
    lp = log_softmax(logits / T)
    n, B, _ = soft.shape
    ce = float(-(soft * lp).sum() / (n * B))
    layer = distiller.layer_loss(tr, teacher_trace, mapping)
    loss = distiller.combined_loss(ce, layer, weights)
    dlogits = weights.ce * (np.exp(lp) - soft) / (T * n * B)
    grads = _zero_demux_grads(kit)
    g = {}
    dH = _heads_back(kit, model, H, pooled, dlogits, grads, g)
    dws, d_states = distiller.layer_loss_grads(tr, teacher_trace, mapping)
    d_states = [None if d is None else weights.layer * d for d in d_states]
    d_states[-1] = dH if d_states[-1] is None else d_states[-1] + dH
    _, ge = backward(model, tr, d_states)
    ge.update(g)
    ge["vocab_w"] = np.zeros_like(model.vocab_w)
    grads.update({"enc." + k: v for k, v in ge.items()})
    for k, dw in enumerate(dws):
        grads[f"wl.{k}"] = weights.layer * dw
    return loss, ce, layer, grads


# evaluation

def retrieval_accuracy(kit, model, task: SyntheticTask, ids=None, live=None) -> float:
    """Per-token retrieval accuracy over every stream of every example."""
    ids = task.eval_ids if ids is None else ids
    H = forward(model, multiplex(kit, embed(task, ids, live))).states[-1]
    hits = 0
    for i in range(kit.n):
        pred = np.argmax((H @ kit.demux_w[i] + kit.demux_b[i]) @ model.vocab_w, axis=-1)
        hits += (pred == ids[:, i, :]).sum()
    return hits / ids.size


def retrieval_loss_mean(kit, model, task: SyntheticTask, ids=None, live=None) -> float:
    """Summed token NLL per sequence, averaged over every stream and example."""
    ids = task.train_ids if ids is None else ids
    H = forward(model, multiplex(kit, embed(task, ids, live))).states[-1]
    total = 0.0
    for i in range(kit.n):
        lp = log_softmax((H @ kit.demux_w[i] + kit.demux_b[i]) @ model.vocab_w)
        total -= np.take_along_axis(lp, ids[:, i, :, None], axis=-1).sum()
    return float(total / (kit.n * len(ids)))


def task_loss_mean(kit, model, task: SyntheticTask, live=None) -> float:
    H = forward(model, multiplex(kit, embed(task, task.train_ids, live))).states[-1]
    logits, _ = _stream_logits(kit, model, H)
    lp = log_softmax(logits)
    return float(-np.take_along_axis(lp, task.train_labels.T[..., None], axis=-1).mean())


def task_accuracy(kit, model, task: SyntheticTask, live=None, split: str = "eval") -> float:
    ids, labels = (task.eval_ids, task.eval_labels) if split == "eval" else (task.train_ids, task.train_labels)
    H = forward(model, multiplex(kit, embed(task, ids, live))).states[-1]
    logits, _ = _stream_logits(kit, model, H)
    return float((np.argmax(logits, axis=-1) == labels.T).mean())


# training loops

def _batches(n_examples: int, batch: int, rng: Rng):
    order = rng.permutation(n_examples)
    for start in range(0, n_examples, batch):
        yield order[start:start + batch]


def _sgd(params: dict, grads: dict, lr: float) -> dict:
    return {k: v - lr * grads[k] if k in grads else v for k, v in params.items()}


def _check_divergence(loss, initial, cfg):
    if not np.isfinite(loss) or loss > cfg.divergence_factor * initial:
        raise DivergenceError(f"loss {loss:.4g} exceeded {cfg.divergence_factor}x the initial {initial:.4g}")


def train_phase1(kit: MuxKit, model: EncoderModel, task: SyntheticTask, cfg: TrainConfig):
    """Retrieval warm-up: one stream index drawn uniformly per batch.

    Returns the updated (kit, model) and a history of per-epoch
    ``{"epoch", "loss", "accuracy"}`` records: the train-set retrieval loss
    over all streams and the eval retrieval accuracy, both after the epoch.
    """
    if cfg.phase != "retrieval-warmup":
        raise ValueError("train_phase1 needs cfg.phase == 'retrieval-warmup'")
    rng = Rng(cfg.seed)
    params = {k: v.copy() for k, v in params_of(kit, model).items()}
    history, initial = [], None
    for epoch in range(cfg.epochs):
        for idx in _batches(len(task.train_ids), cfg.batch_size, rng):
            index = int(rng.integers(kit.n, 1)[0])
            k, m = rebuild(kit, model, params)
            ids = task.train_ids[idx]
            loss, grads, _ = retrieval_forward(k, m, embed(task, ids), ids[:, index, :], index)
            initial = loss if initial is None else initial
            _check_divergence(loss, initial, cfg)
            params = _sgd(params, grads, cfg.lr)
        k, m = rebuild(kit, model, params)
        history.append({"epoch": epoch, "loss": retrieval_loss_mean(k, m, task),
                        "accuracy": retrieval_accuracy(k, m, task)})
    kit, model = rebuild(kit, model, params)
    return kit, model, history


def train_task(kit: MuxKit, model: EncoderModel, task: SyntheticTask, cfg: TrainConfig):
    """Joint cross-entropy over all N demuxed classification streams."""
    if cfg.phase != "task":
        raise ValueError("train_task needs cfg.phase == 'task'")
    rng = Rng(cfg.seed)
    params = {k: v.copy() for k, v in params_of(kit, model).items()}
    history, initial = [], None
    for epoch in range(cfg.epochs):
        for idx in _batches(len(task.train_ids), cfg.batch_size, rng):
            k, m = rebuild(kit, model, params)
            ids = task.train_ids[idx]
            loss, grads, _ = task_forward(k, m, embed(task, ids), task.train_labels[idx])
            initial = loss if initial is None else initial
            _check_divergence(loss, initial, cfg)
            params = _sgd(params, grads, cfg.lr)
        k, m = rebuild(kit, model, params)
        history.append({"epoch": epoch, "loss": task_loss_mean(k, m, task),
                        "accuracy": task_accuracy(k, m, task)})
    kit, model = rebuild(kit, model, params)
    return kit, model, history


@dataclass
class Student:
    kit: MuxKit
    model: EncoderModel
    spec: SparsitySpec
    mapping: DistillMapping
    history: list = field(default_factory=list)

    @property
    def live(self) -> np.ndarray:
        return np.flatnonzero(self.spec.hidden)


def make_student(kit: MuxKit, model: EncoderModel, spec: SparsitySpec) -> Student:
    spec = spec.canonical()
    s_model = compact(model, spec)
    s_kit = align_demux(kit, spec.hidden)
    mapping = distiller.build_mapping(distiller.live_layers(s_model), model.n_layers, spec.hidden)
    return Student(s_kit, s_model, spec, mapping)


def train_prune_distill(kit: MuxKit, model: EncoderModel, spec: SparsitySpec, task: SyntheticTask,
                        cfg: TrainConfig, weights: LossWeights = LossWeights()) -> Student:
    """Compact the teacher under ``spec`` and fine-tune the student by distillation."""
    if cfg.phase != "prune-distill":
        raise ValueError("train_prune_distill needs cfg.phase == 'prune-distill'")
    st = make_student(kit, model, spec)
    live = st.live
    rng = Rng(cfg.seed)
    params = {k: v.copy() for k, v in params_of(st.kit, st.model).items()}
    params.update({f"wl.{k}": w.copy() for k, w in enumerate(st.mapping.w)})
    initial = None
    for epoch in range(cfg.epochs):
        losses = []
        for idx in _batches(len(task.train_ids), cfg.batch_size, rng):
            ids = task.train_ids[idx]
            t_trace, soft = teacher_outputs(kit, model, embed(task, ids), weights.temperature)
            k, m = rebuild(st.kit, st.model, params)
            mp = replace(st.mapping, w=[params[f"wl.{j}"] for j in range(len(st.mapping.w))])
            loss, _, _, grads = distill_forward(k, m, mp, embed(task, ids, live), t_trace, soft, weights)
            initial = max(loss, 1e-12) if initial is None else initial
            _check_divergence(loss, initial, cfg)
            params = _sgd(params, grads, cfg.lr)
            losses.append(loss)
        k, m = rebuild(st.kit, st.model, params)
        st.history.append({"epoch": epoch, "loss": float(np.mean(losses)),
                           "accuracy": task_accuracy(k, m, task, live)})
    st.kit, st.model = rebuild(st.kit, st.model, params)
    st.mapping = replace(st.mapping, w=[params[f"wl.{j}"] for j in range(len(st.mapping.w))])
    return st


# gradient verification

def grad_check(loss_fn, grad_fn, point, eps: float = 1e-4, coords=None, floor: float = 1e-5,
               stencil: int = 5) -> float:
    """Max relative error between ``grad_fn(point)`` and central differences of ``loss_fn``.

    The denominator is max(|analytic|, |numeric|, floor) so coordinates
    whose true gradient is ~0 are compared absolutely. The default 5-point
    stencil has O(eps**4) truncation error, which lets eps stay large enough
    that cancellation roundoff (about ulp*|f|/eps) stays negligible; the
    3-point stencil (``stencil=3``) is O(eps**2) and misjudges small
    gradients on strongly curved coordinates. ``coords`` limits the check to
    a subset of indices.
    """
    if not 0 < eps <= 1e-2:
        raise ValueError("eps must lie in (0, 1e-2]")
    if stencil not in (3, 5):
        raise ValueError("stencil must be 3 or 5")
    p = np.asarray(point, dtype=np.float64).copy()
    g = np.asarray(grad_fn(p), dtype=np.float64).ravel()
    idx = range(p.size) if coords is None else coords
    worst = 0.0
    flat = p.ravel()

    def at(j, orig, h):
        flat[j] = orig + h
        v = loss_fn(p)
        flat[j] = orig
        return v

    for j in idx:
        orig = flat[j]
        d1 = at(j, orig, eps) - at(j, orig, -eps)
        if stencil == 3:
            num = d1 / (2 * eps)
        else:
            d2 = at(j, orig, 2 * eps) - at(j, orig, -2 * eps)
            num = (8 * d1 - d2) / (12 * eps)
        err = abs(num - g[j]) / max(abs(num), abs(g[j]), floor)
        worst = max(worst, err)
    return worst


def pack(params: dict[str, np.ndarray], keys=None) -> np.ndarray:
    keys = sorted(params) if keys is None else keys
    return np.concatenate([params[k].ravel() for k in keys])


def unpack(vec: np.ndarray, like: dict[str, np.ndarray], keys=None) -> dict[str, np.ndarray]:
    keys = sorted(like) if keys is None else keys
    out, off = dict(like), 0
    for k in keys:
        n = like[k].size
        out[k] = vec[off:off + n].reshape(like[k].shape)
        off += n
    return out
