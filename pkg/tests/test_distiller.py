import numpy as np
import pytest

from prumux.distiller import (DistillMapping, LossWeights, build_mapping, combined_loss, layer_loss,
                              layer_loss_grads, live_layers)
from prumux.encoder import LayerTrace, forward
from prumux.pruner import SparsitySpec, compact
from prumux.toytrain import grad_check


def _trace(states):
    return LayerTrace(states=states, pooled=states[-1].mean(axis=-2))


def test_build_mapping_identity_when_nothing_pruned():
    m = build_mapping([0, 1, 2, 3], 4, np.ones(5))
    assert m.layers == m.teacher == (0, 1, 2, 3)
    assert all(np.array_equal(w, np.eye(5)) for w in m.w)


def test_build_mapping_index_retention():
    m = build_mapping({2, 0}, 4, np.ones(3))
    assert dict(zip(m.layers, m.teacher)) == {0: 0, 2: 2}


def test_build_mapping_row_selection():
    m = build_mapping([0], 1, [1, 0, 1, 1])
    assert np.array_equal(m.w[0], np.eye(4)[[0, 2, 3]])


def test_build_mapping_errors():
    with pytest.raises(ValueError):
        build_mapping([], 4, np.ones(2))
    with pytest.raises(ValueError):
        build_mapping([4], 4, np.ones(2))
    with pytest.raises(ValueError, match="injective"):
        DistillMapping(layers=(0, 1), teacher=(1, 1), w=[np.eye(2)] * 2)


def test_layer_loss_examples():
    rng = np.random.default_rng(0)
    st = [rng.normal(size=(3, 4)) for _ in range(3)]
    m = build_mapping([0, 1], 2, np.ones(4))
    assert layer_loss(_trace(st), _trace(st), m) == 0.0

    one = DistillMapping(layers=(0,), teacher=(0,), w=[np.eye(1)])
    s = _trace([np.zeros((1, 1)), np.array([[2.0]])])
    t = _trace([np.zeros((1, 1)), np.array([[5.0]])])
    assert layer_loss(s, t, one) == 9.0

    tt = [rng.normal(size=(3, 4)) for _ in range(3)]
    zero = DistillMapping(layers=(0, 1), teacher=(0, 1), w=[np.zeros((4, 4))] * 2)
    want = sum(float((h * h).mean()) for h in tt[1:])
    assert layer_loss(_trace(st), _trace(tt), zero) == pytest.approx(want, abs=1e-12)


def test_layer_loss_order_invariant():
    rng = np.random.default_rng(1)
    s = _trace([rng.normal(size=(3, 2)) for _ in range(4)])
    t = _trace([rng.normal(size=(3, 4)) for _ in range(4)])
    ws = [rng.normal(size=(2, 4)) for _ in range(3)]
    a = DistillMapping(layers=(0, 1, 2), teacher=(0, 1, 2), w=ws)
    b = DistillMapping(layers=(2, 0, 1), teacher=(2, 0, 1), w=[ws[2], ws[0], ws[1]])
    assert layer_loss(s, t, a) == pytest.approx(layer_loss(s, t, b), abs=1e-12)


def test_layer_loss_shape_error():
    s = _trace([np.zeros((3, 2)), np.zeros((3, 2))])
    t = _trace([np.zeros((3, 4)), np.zeros((3, 4))])
    with pytest.raises(ValueError):
        layer_loss(s, t, DistillMapping(layers=(0,), teacher=(0,), w=[np.eye(2)]))


def test_compacted_student_with_selection_matches_teacher_at_start(tiny_model):
    # pruning nothing but hidden-free units: row-selection W reproduces the dense states
    spec = SparsitySpec.for_model(tiny_model)
    student = compact(tiny_model, spec)
    x = np.random.default_rng(2).normal(size=(4, 8))
    m = build_mapping(live_layers(student), tiny_model.n_layers, spec.hidden)
    assert layer_loss(forward(student, x), forward(tiny_model, x), m) == 0.0


def test_layer_loss_grad_wrt_w():
    rng = np.random.default_rng(3)
    for _ in range(20):
        s = _trace([rng.normal(size=(2, 3, 3)) for _ in range(3)])
        t = _trace([rng.normal(size=(2, 3, 4)) for _ in range(3)])
        ws = [rng.normal(size=(3, 4)) for _ in range(2)]

        def loss(v):
            return layer_loss(s, t, DistillMapping((0, 1), (0, 1), [v[:12].reshape(3, 4), v[12:].reshape(3, 4)]))

        def grad(v):
            dws, _ = layer_loss_grads(s, t, DistillMapping((0, 1), (0, 1), [v[:12].reshape(3, 4),
                                                                          v[12:].reshape(3, 4)]))
            return np.concatenate([g.ravel() for g in dws])

        # quadratic in W: central differences are exact for any step, so a wide one limits roundoff
        assert grad_check(loss, grad, np.concatenate([w.ravel() for w in ws]), eps=1e-3) <= 1e-6


def test_layer_loss_grad_wrt_states():
    rng = np.random.default_rng(4)
    t = _trace([rng.normal(size=(3, 4)) for _ in range(3)])
    m = DistillMapping((0, 1), (1, 0), [rng.normal(size=(2, 4)) for _ in range(2)])
    base = [rng.normal(size=(3, 2)) for _ in range(3)]

    def loss(v):
        return layer_loss(_trace([base[0], v[:6].reshape(3, 2), v[6:].reshape(3, 2)]), t, m)

    def grad(v):
        _, d = layer_loss_grads(_trace([base[0], v[:6].reshape(3, 2), v[6:].reshape(3, 2)]), t, m)
        assert d[0] is None
        return np.concatenate([d[1].ravel(), d[2].ravel()])

    assert grad_check(loss, grad, np.concatenate([base[1].ravel(), base[2].ravel()]), eps=1e-3) <= 1e-6


def test_combined_loss_examples():
    assert combined_loss(2.0, 4.0, LossWeights(layer=0.0, ce=1.0)) == 2.0
    assert combined_loss(2.0, 4.0, LossWeights(layer=1.0, ce=0.0)) == 4.0
    assert combined_loss(2.0, 4.0, LossWeights(layer=0.9, ce=0.1)) == pytest.approx(3.8, abs=1e-15)


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(layer=0.7, ce=0.7)
    with pytest.raises(ValueError):
        LossWeights(temperature=0.0)
    with pytest.raises(ValueError):
        combined_loss(-1.0, 0.0, LossWeights())
