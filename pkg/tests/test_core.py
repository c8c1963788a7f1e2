import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prumux.core import Rng, gelu, gelu_grad, log_softmax, matmul, outer_sum, seeded_gaussian, softmax


def test_seeded_gaussian_is_deterministic():
    assert np.array_equal(seeded_gaussian(7, 3), seeded_gaussian(7, 3))


def test_seeded_gaussian_streams_differ():
    assert not np.array_equal(seeded_gaussian(7, 3), seeded_gaussian(8, 3))


def test_seeded_gaussian_moments():
    z = seeded_gaussian(7, 100_000)
    assert abs(z.mean()) <= 0.02
    assert abs(z.std() - 1.0) <= 0.02


def test_seeded_gaussian_frozen_values():
    # pinned so any change to the draw pipeline is caught
    z = seeded_gaussian(7, 3)
    assert z.tolist() == [0.22508795544212326, -1.382571205538431, 0.33095073950511766]


def test_seeded_gaussian_rejects_empty():
    with pytest.raises(ValueError):
        seeded_gaussian(7, 0)


def test_rng_uniform_range_and_integers():
    r = Rng(3)
    u = r.uniform(10_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    k = Rng(3).integers(5, 10_000)
    assert set(np.unique(k)) == {0, 1, 2, 3, 4}
    assert sorted(Rng(4).permutation(9)) == list(range(9))


def test_matmul_examples():
    a = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(matmul(np.eye(3), a), a)
    assert np.array_equal(matmul([[1, 2], [3, 4]], [[1], [1]]), [[3], [7]])
    assert np.array_equal(matmul(np.zeros((2, 3)), a), np.zeros((2, 3)))


def test_matmul_shape_errors():
    with pytest.raises(ValueError, match="mismatch"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ValueError):
        matmul(np.ones(3), np.ones((3, 1)))


def test_softmax_examples():
    assert np.allclose(softmax([0, 0, 0, 0]), [0.25] * 4)
    assert np.array_equal(softmax([3.7]), [1.0])
    assert np.allclose(softmax([np.log(1), np.log(3)]), [0.25, 0.75], atol=1e-15)


def test_softmax_is_stable_for_large_inputs():
    p = softmax([1000.0, 1000.0])
    assert np.allclose(p, [0.5, 0.5])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8))
def test_softmax_normalised_and_matches_log_softmax(v):
    p = softmax(v)
    assert abs(p.sum() - 1.0) < 1e-12
    assert np.allclose(np.log(p), log_softmax(v), atol=1e-9, rtol=0) or p.min() == 0


def test_outer_sum_matches_einsum():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4, 5)), rng.normal(size=(3, 4, 2))
    assert np.allclose(outer_sum(a, b), np.einsum("bti,btj->ij", a, b))


def test_gelu_grad_matches_finite_difference():
    x = np.linspace(-4, 4, 41)
    h = 1e-6
    fd = (gelu(x + h) - gelu(x - h)) / (2 * h)
    assert np.max(np.abs(fd - gelu_grad(x))) < 1e-8
    assert gelu(np.array([0.0]))[0] == 0.0
