"""Structured sparsity: binary unit masks, thresholding, zeroing, and physical compaction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import FFN, Attention, EncoderModel, Layer
from .mux import MuxKit


def _bits(a) -> np.ndarray:
    return np.asarray(a, dtype=np.int8)


@dataclass(frozen=True)
class SparsitySpec:
    """Keep-masks (1 = live) for every prunable unit of a dense model.

    ``heads`` is (L, H), ``intermediate`` is (L, d_ff); ``mha`` and ``ffn``
    hold one bit per layer; ``hidden`` is shared by all layers.
    """

    heads: np.ndarray
    mha: np.ndarray
    ffn: np.ndarray
    hidden: np.ndarray
    intermediate: np.ndarray

    def __post_init__(self):
        for name in ("heads", "mha", "ffn", "hidden", "intermediate"):
            object.__setattr__(self, name, _bits(getattr(self, name)))
        L = len(self.mha)
        if len(self.ffn) != L or self.heads.shape[0] != L or self.intermediate.shape[0] != L:
            raise ValueError("SparsitySpec: per-layer masks disagree on the layer count")
        if self.heads.ndim != 2 or self.intermediate.ndim != 2 or self.hidden.ndim != 1:
            raise ValueError("SparsitySpec: heads/intermediate must be 2-D, hidden 1-D")
        for name in ("heads", "mha", "ffn", "hidden", "intermediate"):
            a = getattr(self, name)
            if not np.isin(a, (0, 1)).all():
                raise ValueError(f"SparsitySpec.{name} must contain only 0/1")

    @classmethod
    def dense(cls, n_layers: int, n_heads: int, d: int, d_ff: int) -> "SparsitySpec":
        return cls(heads=np.ones((n_layers, n_heads)), mha=np.ones(n_layers),
                   ffn=np.ones(n_layers), hidden=np.ones(d), intermediate=np.ones((n_layers, d_ff)))

    @classmethod
    def for_model(cls, model: EncoderModel) -> "SparsitySpec":
        return cls.dense(model.n_layers, model.n_heads, model.d_hidden, model.d_ff)

    def canonical(self) -> "SparsitySpec":
        """Force every fine unit of a removed sublayer to zero."""
        return SparsitySpec(heads=self.heads * self.mha[:, None], mha=self.mha, ffn=self.ffn,
                            hidden=self.hidden, intermediate=self.intermediate * self.ffn[:, None])

    def is_canonical(self) -> bool:
        c = self.canonical()
        return np.array_equal(c.heads, self.heads) and np.array_equal(c.intermediate, self.intermediate)

    def matches(self, n_layers: int, n_heads: int, d: int, d_ff: int) -> bool:
        return (self.heads.shape == (n_layers, n_heads) and self.intermediate.shape == (n_layers, d_ff)
                and self.hidden.shape == (d,))

    def to_dict(self) -> dict:
        return {"heads": self.heads.tolist(), "mha": self.mha.tolist(), "ffn": self.ffn.tolist(),
                "hidden": self.hidden.tolist(), "intermediate": self.intermediate.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SparsitySpec":
        return cls(**{k: np.asarray(d[k]) for k in ("heads", "mha", "ffn", "hidden", "intermediate")})


@dataclass(frozen=True)
class MaskScores:
    """Real-valued scores shaped like a SparsitySpec; units scoring below ``threshold`` are pruned."""

    heads: np.ndarray
    mha: np.ndarray
    ffn: np.ndarray
    hidden: np.ndarray
    intermediate: np.ndarray
    threshold: float = 0.5


def threshold_masks(scores: MaskScores) -> SparsitySpec:
    t = scores.threshold

    def keep(a):
        return (np.asarray(a, dtype=np.float64) >= t).astype(np.int8)

    return SparsitySpec(heads=keep(scores.heads), mha=keep(scores.mha), ffn=keep(scores.ffn),
                        hidden=keep(scores.hidden), intermediate=keep(scores.intermediate)).canonical()


def prunable_weights(spec: SparsitySpec, head_dim: int) -> tuple[int, int]:
    """(live, total) counts over the Q/K/V/O and FFN matrices.

    Embeddings, biases, layer norms and task heads are not counted.
    """
    spec = spec.canonical()
    L, H = spec.heads.shape
    d = len(spec.hidden)
    d_ff = spec.intermediate.shape[1]
    total = L * (4 * d * H * head_dim + 2 * d * d_ff)
    d_live = int(spec.hidden.sum())
    live = 0
    for i in range(L):
        if spec.mha[i]:
            live += 4 * d_live * int(spec.heads[i].sum()) * head_dim
        if spec.ffn[i]:
            live += 2 * d_live * int(spec.intermediate[i].sum())
    return live, total


def sparsity_of(spec: SparsitySpec, head_dim: int | None = None) -> float:
    """Fraction of prunable weights removed by ``spec``.

    ``head_dim`` defaults to d / H, the dense-model convention.
    """
    if head_dim is None:
        head_dim = len(spec.hidden) // spec.heads.shape[1]
    live, total = prunable_weights(spec, head_dim)
    return 1.0 - live / total


def apply_masks(model: EncoderModel, spec: SparsitySpec) -> EncoderModel:
    """Zero the weights (and biases) of every masked unit; shapes are unchanged.

    Hidden-dimension masking zeroes the projections touching dead coordinates,
    but layer-norm statistics still span all d coordinates in an unmasked
    forward, so only ``encode(..., spec)`` reproduces hidden pruning exactly.
    """
    if not spec.matches(model.n_layers, model.n_heads, model.d_hidden, model.d_ff):
        raise ValueError("apply_masks: spec shape does not match the model")
    spec = spec.canonical()
    out = model.copy()
    hm = spec.hidden.astype(np.float64)
    dh = model.head_dim
    for i, layer in enumerate(out.layers):
        a, f = layer.attn, layer.ffn
        cols = np.repeat(spec.heads[i], dh).astype(np.float64) * spec.mha[i]
        for w, b in ((a.wq, a.bq), (a.wk, a.bk), (a.wv, a.bv)):
            w *= hm[:, None] * cols[None, :]
            b *= cols
        a.wo *= cols[:, None] * hm[None, :]
        a.bo *= hm * spec.mha[i]
        im = spec.intermediate[i].astype(np.float64) * spec.ffn[i]
        f.w1 *= hm[:, None] * im[None, :]
        f.b1 *= im
        f.w2 *= im[:, None] * hm[None, :]
        f.b2 *= hm * spec.ffn[i]
        for g in (layer.ln1_g, layer.ln1_b, layer.ln2_g, layer.ln2_b):
            g *= hm
    out.cls_w *= hm[:, None]
    out.vocab_w *= hm[:, None]
    return out


def compact(model: EncoderModel, spec: SparsitySpec) -> EncoderModel:
    """Physically remove every masked unit, returning a smaller model."""
    if not spec.matches(model.n_layers, model.n_heads, model.d_hidden, model.d_ff):
        raise ValueError("compact: spec shape does not match the model")
    if not spec.is_canonical():
        raise ValueError("compact: spec is not canonical (call .canonical() first)")
    live = np.flatnonzero(spec.hidden)
    if live.size == 0:
        raise ValueError("compact: every hidden dimension is masked (degenerate model)")
    dh = model.head_dim
    layers = []
    for i, layer in enumerate(model.layers):
        attn = ffn = None
        if spec.mha[i]:
            a = layer.attn
            heads = np.flatnonzero(spec.heads[i])
            cols = (heads[:, None] * dh + np.arange(dh)[None, :]).ravel()
            attn = Attention(
                wq=a.wq[np.ix_(live, cols)].copy(), bq=a.bq[cols].copy(),
                wk=a.wk[np.ix_(live, cols)].copy(), bk=a.bk[cols].copy(),
                wv=a.wv[np.ix_(live, cols)].copy(), bv=a.bv[cols].copy(),
                wo=a.wo[np.ix_(cols, live)].copy(), bo=a.bo[live].copy(),
                n_heads=len(heads), head_dim=dh)
        if spec.ffn[i]:
            f = layer.ffn
            units = np.flatnonzero(spec.intermediate[i])
            ffn = FFN(w1=f.w1[np.ix_(live, units)].copy(), b1=f.b1[units].copy(),
                      w2=f.w2[np.ix_(units, live)].copy(), b2=f.b2[live].copy())
        layers.append(Layer(layer.ln1_g[live].copy(), layer.ln1_b[live].copy(),
                            layer.ln2_g[live].copy(), layer.ln2_b[live].copy(), attn, ffn))
    return EncoderModel(layers=layers, cls_w=model.cls_w[live].copy(), cls_b=model.cls_b.copy(),
                        vocab_w=model.vocab_w[live].copy(), n_heads=model.n_heads,
                        head_dim=dh, d_ff=model.d_ff)


def align_demux(kit: MuxKit, hidden_mask) -> MuxKit:
    """Restrict every demux map (both sides) and the keys to the live hidden coordinates."""
    m = np.asarray(hidden_mask)
    if m.shape != (kit.demux_dim,):
        raise ValueError(f"align_demux: mask length {m.shape} != demux dim {kit.demux_dim}")
    live = np.flatnonzero(m)
    if live.size == 0:
        raise ValueError("align_demux: no live coordinates (degenerate demultiplexer)")
    keys = kit.keys[:, live] if kit.dim == kit.demux_dim else kit.keys
    return MuxKit(keys=keys.copy(), demux_w=kit.demux_w[:, live][:, :, live].copy(),
                  demux_b=kit.demux_b[:, live].copy(), seed=kit.seed)


def spec_for_sparsity(n_layers: int, n_heads: int, d: int, d_ff: int, target: float) -> SparsitySpec:
    """Smallest nested spec reaching at least ``target`` sparsity.

    Units are removed in a fixed order (intermediate dimensions round-robin
    over layers from the top, then heads the same way) so specs for larger
    targets always contain those for smaller ones.
    """
    if not 0.0 <= target <= 1.0:
        raise ValueError(f"target sparsity {target} outside [0, 1]")
    dh = d // n_heads
    total = n_layers * (4 * d * d + 2 * d * d_ff)
    heads = np.ones((n_layers, n_heads), dtype=np.int8)
    inter = np.ones((n_layers, d_ff), dtype=np.int8)
    order = [("ffn", i, j) for j in range(d_ff - 1, -1, -1) for i in range(n_layers - 1, -1, -1)]
    order += [("head", i, h) for h in range(n_heads - 1, -1, -1) for i in range(n_layers - 1, -1, -1)]
    removed = 0
    for kind, i, j in order:
        if removed >= target * total - 1e-9:
            break
        if kind == "ffn":
            inter[i, j] = 0
            removed += 2 * d
        else:
            heads[i, j] = 0
            removed += 4 * d * dh
    mha = heads.any(axis=1).astype(np.int8)
    ffn = inter.any(axis=1).astype(np.int8)
    return SparsitySpec(heads=heads, mha=mha, ffn=ffn, hidden=np.ones(d), intermediate=inter)
