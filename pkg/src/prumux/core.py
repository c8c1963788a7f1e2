"""Dense float64 linear algebra helpers and a platform-stable seeded RNG.

Gaussian draws use PCG64 raw 64-bit output, converted to uniforms on
[0, 1) with the top 53 bits, then the Box-Muller transform. numpy keeps
bit-generator streams stable across versions and platforms; the
higher-level ``Generator`` distributions carry no such guarantee, so
they are not used here.
"""
from __future__ import annotations

import numpy as np

_TWO_NEG_53 = 2.0 ** -53


class Rng:
    """Deterministic stream of uniforms, normals and integers from a seed."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._bits = np.random.PCG64(self.seed)

    def uniform(self, size) -> np.ndarray:
        n = int(np.prod(size))
        raw = self._bits.random_raw(n) if n else np.zeros(0, dtype=np.uint64)
        u = (np.asarray(raw, dtype=np.uint64) >> np.uint64(11)).astype(np.float64) * _TWO_NEG_53
        return u.reshape(size)

    def normal(self, size, scale: float = 1.0) -> np.ndarray:
        n = int(np.prod(size))
        m = (n + 1) // 2
        u1 = self.uniform(m)
        u2 = self.uniform(m)
        # 1 - u1 lies in (0, 1], so the log is finite
        r = np.sqrt(-2.0 * np.log1p(-u1))
        theta = 2.0 * np.pi * u2
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return (scale * z[:n]).reshape(size)

    def integers(self, high: int, size) -> np.ndarray:
        """Uniform integers in [0, high) (multiply-shift, bias < 2**-40)."""
        return np.floor(self.uniform(size) * high).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")


def seeded_gaussian(seed: int, n: int) -> np.ndarray:
    """Return ``n`` standard-normal draws fully determined by ``seed``."""
    if n < 1:
        raise ValueError("seeded_gaussian: empty request (n must be >= 1)")
    return Rng(seed).normal(n)


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D matrices, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def outer_sum(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Sum of outer products over all leading axes: (..., m), (..., n) -> (m, n)."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def softmax(v, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    z = np.exp(v - v.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def log_softmax(v, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    shifted = v - v.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x: np.ndarray) -> np.ndarray:
    # tanh approximation; smooth everywhere so finite differences behave
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * x * (1.0 + 0.044715 * x * x)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x2)
