"""Pre-layer-norm transformer encoder with structural masks and a hand-written backward pass.

Row-vector convention throughout: activations are (..., T, d) and weights map
``x @ W``. A layer whose attention or FFN is ``None`` has had that sublayer
removed, so the residual stream passes through it untouched.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .core import Rng, gelu, gelu_grad, outer_sum, softmax

if TYPE_CHECKING:
    from .pruner import SparsitySpec

LN_EPS = 1e-6


@dataclass
class Attention:
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    n_heads: int
    head_dim: int


@dataclass
class FFN:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @property
    def width(self) -> int:
        return self.w1.shape[1]


@dataclass
class Layer:
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    attn: Attention | None
    ffn: FFN | None


@dataclass
class EncoderModel:
    layers: list[Layer]
    cls_w: np.ndarray  # (d, C)
    cls_b: np.ndarray  # (C,)
    vocab_w: np.ndarray  # (d, V)
    n_heads: int
    head_dim: int
    d_ff: int

    @property
    def d_hidden(self) -> int:
        return self.cls_w.shape[0]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def n_classes(self) -> int:
        return self.cls_w.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.vocab_w.shape[1]

    def copy(self) -> "EncoderModel":
        return unflatten(self, {k: v.copy() for k, v in flatten(self).items()})


@dataclass
class LayerTrace:
    """Residual-stream states: entry 0 is the (masked) input, entry l+1 follows block l."""

    states: list[np.ndarray]
    pooled: np.ndarray
    cache: list = field(default=None, repr=False)


def init_model(seed: int, d: int, n_heads: int, d_ff: int, n_layers: int,
               n_classes: int = 2, vocab: int = 32) -> EncoderModel:
    if d % n_heads:
        raise ValueError(f"d_hidden={d} is not divisible by n_heads={n_heads}")
    rng = Rng(seed)
    dh = d // n_heads
    s_in = 1.0 / np.sqrt(d)
    layers = []
    for _ in range(n_layers):
        attn = Attention(
            wq=rng.normal((d, d), s_in), bq=np.zeros(d),
            wk=rng.normal((d, d), s_in), bk=np.zeros(d),
            wv=rng.normal((d, d), s_in), bv=np.zeros(d),
            wo=rng.normal((d, d), s_in / np.sqrt(2 * n_layers)), bo=np.zeros(d),
            n_heads=n_heads, head_dim=dh)
        ffn = FFN(w1=rng.normal((d, d_ff), s_in), b1=np.zeros(d_ff),
                  w2=rng.normal((d_ff, d), 1.0 / np.sqrt(d_ff * 2 * n_layers)), b2=np.zeros(d))
        layers.append(Layer(np.ones(d), np.zeros(d), np.ones(d), np.zeros(d), attn, ffn))
    return EncoderModel(layers=layers,
                        cls_w=rng.normal((d, n_classes), s_in), cls_b=np.zeros(n_classes),
                        vocab_w=rng.normal((d, vocab), s_in),
                        n_heads=n_heads, head_dim=dh, d_ff=d_ff)


# parameter flattening, used by training and serialization

def flatten(model: EncoderModel) -> dict[str, np.ndarray]:
    out = {}
    for i, layer in enumerate(model.layers):
        p = f"layers.{i}."
        for name in ("ln1_g", "ln1_b", "ln2_g", "ln2_b"):
            out[p + name] = getattr(layer, name)
        if layer.attn is not None:
            for name in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"):
                out[p + "attn." + name] = getattr(layer.attn, name)
        if layer.ffn is not None:
            for name in ("w1", "b1", "w2", "b2"):
                out[p + "ffn." + name] = getattr(layer.ffn, name)
    out["cls_w"] = model.cls_w
    out["cls_b"] = model.cls_b
    out["vocab_w"] = model.vocab_w
    return out


def unflatten(template: EncoderModel, params: dict[str, np.ndarray]) -> EncoderModel:
    """Rebuild a model with ``template``'s structure and the given arrays."""
    layers = []
    for i, layer in enumerate(template.layers):
        p = f"layers.{i}."
        attn = ffn = None
        if layer.attn is not None:
            a = {n: params[p + "attn." + n] for n in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")}
            attn = Attention(**a, n_heads=layer.attn.n_heads, head_dim=layer.attn.head_dim)
        if layer.ffn is not None:
            ffn = FFN(**{n: params[p + "ffn." + n] for n in ("w1", "b1", "w2", "b2")})
        layers.append(Layer(params[p + "ln1_g"], params[p + "ln1_b"],
                            params[p + "ln2_g"], params[p + "ln2_b"], attn, ffn))
    return EncoderModel(layers=layers, cls_w=params["cls_w"], cls_b=params["cls_b"],
                        vocab_w=params["vocab_w"], n_heads=template.n_heads,
                        head_dim=template.head_dim, d_ff=template.d_ff)


# forward

def _check_spec(model: EncoderModel, spec: "SparsitySpec") -> None:
    d = model.d_hidden
    if len(spec.hidden) != d or len(spec.mha) != model.n_layers:
        raise ValueError("sparsity spec does not match model dimensions")
    for i, layer in enumerate(model.layers):
        if layer.attn is None or layer.ffn is None:
            raise ValueError("masked forward needs a dense model (no removed sublayers)")
        if len(spec.heads[i]) != layer.attn.n_heads or len(spec.intermediate[i]) != layer.ffn.width:
            raise ValueError(f"sparsity spec does not match layer {i} dimensions")


def _layer_norm(x, g, b, hmask, n_live):
    if hmask is None:
        mu = x.mean(-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(-1, keepdims=True)
    else:
        mu = (x * hmask).sum(-1, keepdims=True) / n_live
        xc = (x - mu) * hmask
        var = (xc * xc).sum(-1, keepdims=True) / n_live
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * rstd
    y = xhat * g + b
    if hmask is not None:
        y = y * hmask
    return y, (xhat, rstd)


def _attention(a: Attention, y, head_mask):
    B, T, _ = y.shape
    H, dh = a.n_heads, a.head_dim

    def split(z):
        return z.reshape(B, T, H, dh).transpose(0, 2, 1, 3)

    q = split(y @ a.wq + a.bq)
    k = split(y @ a.wk + a.bk)
    v = split(y @ a.wv + a.bv)
    p = softmax(q @ k.transpose(0, 1, 3, 2) / np.sqrt(dh))
    o = p @ v
    if head_mask is not None:
        o = o * head_mask[None, :, None, None]
    concat = o.transpose(0, 2, 1, 3).reshape(B, T, H * dh)
    return concat @ a.wo + a.bo, (y, q, k, v, p, concat)


def _ffn(f: FFN, y, inter_mask):
    z = y @ f.w1 + f.b1
    act = gelu(z)
    if inter_mask is not None:
        act = act * inter_mask
    return act @ f.w2 + f.b2, (y, z, act)


def forward(model: EncoderModel, x, spec: "SparsitySpec | None" = None,
            keep_cache: bool = False) -> LayerTrace:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.shape[-1] != model.d_hidden:
        raise ValueError(f"input dim {x.shape[-1]} != model hidden dim {model.d_hidden}")
    hmask = n_live = None
    if spec is not None:
        _check_spec(model, spec)
        hmask = np.asarray(spec.hidden, dtype=np.float64)
        n_live = hmask.sum()
        if n_live == 0:
            raise ValueError("all hidden dimensions are masked")
        x = x * hmask
    states = [x]
    caches = []
    for i, layer in enumerate(model.layers):
        c = {}
        use_attn = layer.attn is not None and (spec is None or spec.mha[i])
        use_ffn = layer.ffn is not None and (spec is None or spec.ffn[i])
        if use_attn:
            y, c["ln1"] = _layer_norm(x, layer.ln1_g, layer.ln1_b, hmask, n_live)
            hm = None if spec is None else np.asarray(spec.heads[i], dtype=np.float64)
            out, c["attn"] = _attention(layer.attn, y, hm)
            if hmask is not None:
                out = out * hmask
            x = x + out
        if use_ffn:
            y, c["ln2"] = _layer_norm(x, layer.ln2_g, layer.ln2_b, hmask, n_live)
            im = None if spec is None else np.asarray(spec.intermediate[i], dtype=np.float64)
            out, c["ffn"] = _ffn(layer.ffn, y, im)
            if hmask is not None:
                out = out * hmask
            x = x + out
        states.append(x)
        caches.append(c)
    pooled = x.mean(axis=-2)
    if squeeze:
        states = [s[0] for s in states]
        pooled = pooled[0]
    return LayerTrace(states=states, pooled=pooled, cache=(caches, squeeze) if keep_cache else None)


def encode(model: EncoderModel, spec: "SparsitySpec | None", inputs) -> LayerTrace:
    """Run the encoder on a (T, d) or (B, T, d) input, honouring ``spec`` if given."""
    return forward(model, inputs, spec)


def classify(model: EncoderModel, trace: LayerTrace) -> np.ndarray:
    """Class distribution from the mean-pooled final state."""
    return softmax(trace.pooled @ model.cls_w + model.cls_b)


# backward (unmasked models only: compacted students and dense teachers)

def _layer_norm_back(dy, g, cache):
    xhat, rstd = cache
    red = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(red)
    db = dy.sum(red)
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(-1, keepdims=True)
                 - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def _attention_back(a: Attention, dout, cache):
    y, q, k, v, p, concat = cache
    B, T, _ = dout.shape
    H, dh = a.n_heads, a.head_dim
    g = {"wo": outer_sum(concat, dout), "bo": dout.sum((0, 1))}
    do = (dout @ a.wo.T).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
    dv = p.transpose(0, 1, 3, 2) @ do
    dp = do @ v.transpose(0, 1, 3, 2)
    ds = p * (dp - (dp * p).sum(-1, keepdims=True)) / np.sqrt(dh)
    dq = ds @ k
    dk = ds.transpose(0, 1, 3, 2) @ q

    def merge(z):
        return z.transpose(0, 2, 1, 3).reshape(B, T, H * dh)

    dy = np.zeros_like(y)
    for name, dz in (("q", dq), ("k", dk), ("v", dv)):
        dz = merge(dz)
        g["w" + name] = outer_sum(y, dz)
        g["b" + name] = dz.sum((0, 1))
        dy += dz @ getattr(a, "w" + name).T
    return dy, g


def _ffn_back(f: FFN, dout, cache):
    y, z, act = cache
    g = {"w2": outer_sum(act, dout), "b2": dout.sum((0, 1))}
    dz = (dout @ f.w2.T) * gelu_grad(z)
    g["w1"] = outer_sum(y, dz)
    g["b1"] = dz.sum((0, 1))
    return dz @ f.w1.T, g


def backward(model: EncoderModel, trace: LayerTrace, d_states) -> tuple[np.ndarray, dict]:
    """Gradients of a loss with respect to the encoder parameters and its input.

    ``d_states`` holds dLoss/d(state) for each of the L+1 trace entries
    (``None`` where the loss does not touch that entry). The trace must come
    from ``forward(..., keep_cache=True)`` without a spec.
    """
    if trace.cache is None:
        raise ValueError("backward needs a trace produced with keep_cache=True")
    caches, squeeze = trace.cache
    L = model.n_layers

    def lift(z):
        return None if z is None else (z[None] if squeeze else z)

    ds = [lift(z) for z in d_states]
    shape = (trace.states[0][None] if squeeze else trace.states[0]).shape
    g = np.zeros(shape) if ds[L] is None else ds[L].copy()
    grads = {}
    for i in range(L - 1, -1, -1):
        layer, c, p = model.layers[i], caches[i], f"layers.{i}."
        if "ffn" in c:
            dy, gf = _ffn_back(layer.ffn, g, c["ffn"])
            dx, grads[p + "ln2_g"], grads[p + "ln2_b"] = _layer_norm_back(dy, layer.ln2_g, c["ln2"])
            g = g + dx
            grads.update({p + "ffn." + k: v for k, v in gf.items()})
        else:
            grads[p + "ln2_g"] = np.zeros_like(layer.ln2_g)
            grads[p + "ln2_b"] = np.zeros_like(layer.ln2_b)
        if "attn" in c:
            dy, ga = _attention_back(layer.attn, g, c["attn"])
            dx, grads[p + "ln1_g"], grads[p + "ln1_b"] = _layer_norm_back(dy, layer.ln1_g, c["ln1"])
            g = g + dx
            grads.update({p + "attn." + k: v for k, v in ga.items()})
        else:
            grads[p + "ln1_g"] = np.zeros_like(layer.ln1_g)
            grads[p + "ln1_b"] = np.zeros_like(layer.ln1_b)
        if ds[i] is not None:
            g = g + ds[i]
    return (g[0] if squeeze else g), grads
