"""Layer-wise distillation between a dense teacher trace and a pruned student trace."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import LayerTrace


@dataclass
class DistillMapping:
    """Student layer ``layers[k]`` is matched to teacher layer ``teacher[k]`` through ``w[k]``.

    Layer indices are block indices; the matched states are trace entries
    ``index + 1`` (the residual stream after the block).
    """

    layers: tuple[int, ...]
    teacher: tuple[int, ...]
    w: list[np.ndarray]

    def __post_init__(self):
        if len(set(self.teacher)) != len(self.teacher):
            raise ValueError("DistillMapping: layer map must be injective")
        if not (len(self.layers) == len(self.teacher) == len(self.w)):
            raise ValueError("DistillMapping: layers, teacher indices and transforms disagree in length")


@dataclass(frozen=True)
class LossWeights:
    # reference recipe grid: layer alpha in {0.9, 0.7, 0.5}, ce alpha = 1 - layer alpha, temp 2
    layer: float = 0.9
    ce: float = 0.1
    temperature: float = 2.0

    def __post_init__(self):
        if not (0.0 <= self.layer <= 1.0 and 0.0 <= self.ce <= 1.0):
            raise ValueError("loss weights must lie in [0, 1]")
        if abs(self.layer + self.ce - 1.0) > 1e-12:
            raise ValueError(f"layer and ce weights must sum to 1, got {self.layer + self.ce}")
        if self.temperature <= 0:
            raise ValueError("distillation temperature must be positive")


def build_mapping(student_layers, teacher_layers: int, hidden_mask) -> DistillMapping:
    """Match each surviving student layer to the teacher layer with the same index.

    Each transform starts as the rows of the identity picked out by the live
    hidden coordinates, so W maps the student's live coordinates back into
    the teacher's full hidden space.
    """
    layers = tuple(sorted(int(i) for i in student_layers))
    if not layers:
        raise ValueError("build_mapping: student has no live layers")
    if layers[-1] >= teacher_layers or layers[0] < 0:
        raise ValueError("build_mapping: student layer index outside the teacher")
    m = np.asarray(hidden_mask)
    sel = np.eye(len(m))[np.flatnonzero(m)]
    return DistillMapping(layers=layers, teacher=layers, w=[sel.copy() for _ in layers])


def live_layers(model) -> list[int]:
    return [i for i, layer in enumerate(model.layers) if layer.attn is not None or layer.ffn is not None]


def layer_loss(student: LayerTrace, teacher: LayerTrace, mapping: DistillMapping) -> float:
    """Sum over matched layers of mean((H_s W - H_t)^2)."""
    total = 0.0
    for s, t, w in zip(mapping.layers, mapping.teacher, mapping.w):
        hs, ht = student.states[s + 1], teacher.states[t + 1]
        if hs.shape[-1] != w.shape[0] or ht.shape[-1] != w.shape[1] or hs.shape[:-1] != ht.shape[:-1]:
            raise ValueError(f"layer_loss: shapes {hs.shape} @ {w.shape} vs {ht.shape} do not line up")
        r = hs @ w - ht
        total += float((r * r).mean())
    return total


def layer_loss_grads(student: LayerTrace, teacher: LayerTrace, mapping: DistillMapping):
    """Gradients of ``layer_loss`` w.r.t. each transform and each student state.

    Returns (dW list, d_states list of length L+1 with ``None`` for untouched entries).
    """
    d_states = [None] * len(student.states)
    dws = []
    for s, t, w in zip(mapping.layers, mapping.teacher, mapping.w):
        hs, ht = student.states[s + 1], teacher.states[t + 1]
        r = hs @ w - ht
        dr = 2.0 * r / r.size
        hs2 = hs.reshape(-1, hs.shape[-1])
        dws.append(hs2.T @ dr.reshape(-1, dr.shape[-1]))
        dh = dr @ w.T
        d_states[s + 1] = dh if d_states[s + 1] is None else d_states[s + 1] + dh
    return dws, d_states


def combined_loss(ce: float, layer: float, w: LossWeights) -> float:
    if ce < 0 or layer < 0:
        raise ValueError("loss terms must be non-negative")
    return w.ce * ce + w.layer * layer
