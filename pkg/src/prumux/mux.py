"""Data multiplexing: key-mixed averaging of N streams and per-index demux maps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Rng

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class MuxKit:
    """Frozen Gaussian keys plus one affine demultiplexer per stream.

    ``keys`` has shape (N, d); ``demux_w`` (N, d', d') maps row vectors as
    ``h @ demux_w[i] + demux_b[i]``.
    """

    keys: np.ndarray
    demux_w: np.ndarray
    demux_b: np.ndarray
    seed: int = 0

    def __post_init__(self):
        n = self.keys.shape[0]
        if self.demux_w.shape[0] != n or self.demux_b.shape[0] != n:
            raise ValueError("MuxKit: keys and demux maps disagree on N")
        if self.demux_w.shape[1] != self.demux_w.shape[2] or self.demux_w.shape[1] != self.demux_b.shape[1]:
            raise ValueError(f"MuxKit: demux maps must be square, got {self.demux_w.shape}")

    @property
    def n(self) -> int:
        return self.keys.shape[0]

    @property
    def dim(self) -> int:
        return self.keys.shape[1]

    @property
    def demux_dim(self) -> int:
        return self.demux_w.shape[1]


def make_kit(n: int, d: int, seed: int, demux_dim: int | None = None,
             demux_init: str = "random") -> MuxKit:
    """Build a kit whose keys are drawn from ``seed`` and never trained.

    ``demux_init="identity"`` starts every demux at the identity map; the
    default ``"random"`` adds N(0, 1/d') noise so streams are distinguishable
    from the first step.
    """
    if n < 1:
        raise ValueError("multiplexing width must be >= 1")
    dd = d if demux_dim is None else demux_dim
    rng = Rng(seed)
    keys = rng.normal((n, d))
    eye = np.broadcast_to(np.eye(dd), (n, dd, dd)).copy()
    if demux_init == "identity":
        w = eye
    elif demux_init == "random":
        w = eye + Rng(seed + 1).normal((n, dd, dd), scale=1.0 / np.sqrt(dd))
    else:
        raise ValueError(f"unknown demux_init {demux_init!r}")
    return MuxKit(keys=keys, demux_w=w, demux_b=np.zeros((n, dd)), seed=seed)


def unit_kit(d: int) -> MuxKit:
    """N=1 kit with an all-ones key and identity demux (the no-multiplexing case)."""
    return MuxKit(keys=np.ones((1, d)), demux_w=np.eye(d)[None].copy(),
                  demux_b=np.zeros((1, d)), seed=0)


def multiplex(kit: MuxKit, inputs) -> np.ndarray:
    """Average the key-weighted streams.

    ``inputs`` has shape (N, ..., L, d); the result drops the leading axis.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim < 3 or x.shape[0] != kit.n:
        raise ValueError(f"multiplex expects {kit.n} input sequences, got shape {x.shape}")
    if x.shape[-1] != kit.dim:
        raise ValueError(f"multiplex: input dim {x.shape[-1]} != key dim {kit.dim}")
    keys = kit.keys.reshape((kit.n,) + (1,) * (x.ndim - 2) + (kit.dim,))
    return (keys * x).mean(axis=0)


def demultiplex(kit: MuxKit, mixed, index: int) -> np.ndarray:
    """Apply the ``index``-th (0-based) demux map at every position."""
    if not 0 <= index < kit.n:
        raise IndexError(f"demux index {index} out of range for N={kit.n}")
    h = np.asarray(mixed, dtype=np.float64)
    if h.shape[-1] != kit.demux_dim:
        raise ValueError(f"demultiplex: hidden dim {h.shape[-1]} != demux dim {kit.demux_dim}")
    return h @ kit.demux_w[index] + kit.demux_b[index]


def demultiplex_all(kit: MuxKit, mixed) -> np.ndarray:
    """All N streams at once: (..., L, d') -> (N, ..., L, d')."""
    h = np.asarray(mixed, dtype=np.float64)
    return np.stack([demultiplex(kit, h, i) for i in range(kit.n)])


def retrieval_loss(probs, targets) -> float:
    """Sum over positions of -log P(target) for the selected sentence.

    Probabilities below ``LOG_FLOOR`` are clamped so the loss stays finite.
    """
    p = np.asarray(probs, dtype=np.float64)
    t = np.asarray(targets, dtype=np.int64)
    if len(t) == 0:
        return 0.0
    if p.shape[0] != t.shape[0]:
        raise ValueError(f"retrieval_loss: {p.shape[0]} distributions for {t.shape[0]} targets")
    picked = p[np.arange(len(t)), t]
    return float(-np.log(np.maximum(picked, LOG_FLOOR)).sum())
