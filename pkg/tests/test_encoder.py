import numpy as np
import pytest

from prumux.encoder import (Attention, EncoderModel, LayerTrace, backward, classify, encode, flatten, forward,
                            init_model, unflatten)
from prumux.pruner import SparsitySpec
from prumux.toytrain import grad_check, pack, unpack


def _x(seed=0, shape=(5, 8)):
    return np.random.default_rng(seed).normal(size=shape)


def test_shapes_and_pooling(tiny_model):
    tr = encode(tiny_model, None, _x(shape=(3, 5, 8)))
    assert len(tr.states) == tiny_model.n_layers + 1
    assert tr.states[-1].shape == (3, 5, 8)
    assert np.allclose(tr.pooled, tr.states[-1].mean(axis=1))


def test_unbatched_matches_batched(tiny_model):
    x = _x(shape=(2, 5, 8))
    full = forward(tiny_model, x)
    one = forward(tiny_model, x[1])
    assert np.allclose(full.states[-1][1], one.states[-1], atol=1e-13)


def test_all_sublayers_masked_passes_input_through(tiny_model):
    spec = SparsitySpec(heads=np.zeros((2, 2)), mha=np.zeros(2), ffn=np.zeros(2), hidden=np.ones(8),
                        intermediate=np.zeros((2, 12)))
    x = _x()
    assert np.array_equal(encode(tiny_model, spec, x).states[-1], x)


def test_dense_spec_is_a_no_op(tiny_model):
    x = _x()
    a = encode(tiny_model, None, x)
    b = encode(tiny_model, SparsitySpec.for_model(tiny_model), x)
    for s, t in zip(a.states, b.states):
        assert np.max(np.abs(s - t)) <= 1e-12


def test_masked_head_equals_hand_built_single_head_model():
    m = init_model(seed=4, d=8, n_heads=2, d_ff=12, n_layers=1)
    dh = m.head_dim
    keep = slice(dh, 2 * dh)  # head 1 survives
    a = m.layers[0].attn
    single = m.copy()
    single.layers[0].attn = Attention(wq=a.wq[:, keep], bq=a.bq[keep], wk=a.wk[:, keep], bk=a.bk[keep],
                                      wv=a.wv[:, keep], bv=a.bv[keep], wo=a.wo[keep, :], bo=a.bo,
                                      n_heads=1, head_dim=dh)
    single.n_heads = 1
    spec = SparsitySpec(heads=[[0, 1]], mha=[1], ffn=[1], hidden=np.ones(8), intermediate=np.ones((1, 12)))
    x = _x(1)
    got = encode(m, spec, x).states[-1]
    want = forward(single, x).states[-1]
    assert np.max(np.abs(got - want)) <= 1e-9


def test_spec_shape_mismatch(tiny_model):
    bad = SparsitySpec.dense(2, 2, 6, 12)
    with pytest.raises(ValueError):
        encode(tiny_model, bad, _x())
    with pytest.raises(ValueError):
        encode(tiny_model, None, _x(shape=(5, 7)))


def test_classify_examples(tiny_model):
    m = tiny_model.copy()
    m.cls_w[:] = 0.0
    tr = encode(m, None, _x())
    assert np.allclose(classify(m, tr), [1 / 3] * 3)

    m1 = init_model(seed=0, d=8, n_heads=2, d_ff=4, n_layers=1, n_classes=1)
    assert classify(m1, encode(m1, None, _x())).tolist() == [1.0]

    m2 = init_model(seed=0, d=2, n_heads=1, d_ff=4, n_layers=1, n_classes=2)
    m2.cls_w = np.array([[1.0, 0.0], [0.0, 2.0]])
    m2.cls_b = np.array([0.5, 0.0])
    tr = LayerTrace(states=[], pooled=np.array([1.0, 1.0]))
    # logits (1.5, 2.0): p0 = 1 / (1 + e^0.5)
    assert classify(m2, tr)[0] == pytest.approx(1 / (1 + np.exp(0.5)), abs=1e-15)


def test_flatten_round_trip(tiny_model):
    p = flatten(tiny_model)
    again = flatten(unflatten(tiny_model, p))
    assert p.keys() == again.keys()
    assert all(np.array_equal(p[k], again[k]) for k in p)
    assert "layers.1.attn.wq" in p and "cls_w" in p


def test_copy_is_deep(tiny_model):
    c = tiny_model.copy()
    c.layers[0].attn.wq[0, 0] += 1.0
    assert c.layers[0].attn.wq[0, 0] != tiny_model.layers[0].attn.wq[0, 0]


def test_backward_requires_cache(tiny_model):
    with pytest.raises(ValueError):
        backward(tiny_model, forward(tiny_model, _x()), [None] * 3)


def test_backward_matches_finite_differences():
    m = init_model(seed=2, d=4, n_heads=2, d_ff=6, n_layers=2)
    # random LN params and biases so every gradient path is exercised
    p0 = {k: v + 0.1 * np.random.default_rng(len(k)).normal(size=v.shape) for k, v in flatten(m).items()}
    keys = [k for k in p0 if k.startswith("layers.")]
    x = _x(3, (2, 3, 4))
    r = [np.random.default_rng(10 + i).normal(size=(2, 3, 4)) for i in range(3)]

    def loss(vec):
        mm = unflatten(m, unpack(vec, p0, keys) | {k: p0[k] for k in p0 if k not in keys})
        tr = forward(mm, x)
        return sum(float((s * ri).sum()) for s, ri in zip(tr.states, r))

    def grad(vec):
        mm = unflatten(m, unpack(vec, p0, keys) | {k: p0[k] for k in p0 if k not in keys})
        tr = forward(mm, x, keep_cache=True)
        _, g = backward(mm, tr, r)
        return pack(g, keys)

    assert grad_check(loss, grad, pack(p0, keys)) <= 1e-6


def test_backward_input_gradient():
    m = init_model(seed=2, d=4, n_heads=2, d_ff=6, n_layers=1)
    x0 = _x(4, (3, 4))
    r = np.random.default_rng(5).normal(size=(3, 4))

    def loss(v):
        return float((forward(m, v.reshape(3, 4)).states[-1] * r).sum())

    def grad(v):
        tr = forward(m, v.reshape(3, 4), keep_cache=True)
        return backward(m, tr, [None, r])[0].ravel()

    assert grad_check(loss, grad, x0.ravel()) <= 1e-6
