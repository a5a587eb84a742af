"""Numpy implementations of the hot kernels.

Fallback used when the compiled extension is unavailable; must stay
bit-identical to codemark._kernels (uint64 arithmetic wraps mod 2^64 in
both). Vectorized over the message axis.
"""
from __future__ import annotations

import numpy as np

from .core import CHAIN_SEED, mix64 as _scalar_mix64

BACKEND_NAME = "python"

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_BLOCK = 1 << 14


def mix64(z: int) -> int:
    return _scalar_mix64(z)


def mix64v(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def hash_bit_scalar(token: int, message: int, prev: int, kf: int, threshold: int) -> int:
    h = _scalar_mix64(CHAIN_SEED ^ token)
    h = _scalar_mix64(h ^ message)
    h = _scalar_mix64(h ^ prev)
    h = _scalar_mix64(h ^ kf)
    return 1 if h < threshold else 0

def pair_prefixes(tokens: np.ndarray) -> np.ndarray:
    """First absorption step, shared by every message: mix(seed ^ token)."""
    return mix64v(np.uint64(CHAIN_SEED) ^ tokens.astype(np.uint64))


def wm_fill(message: int, prev: int, kf: int, threshold: int, size: int) -> np.ndarray:
    """Indicator vector over token ids 0..size-1 for one (message, prev)."""
    h = pair_prefixes(np.arange(size, dtype=np.uint64))
    h = mix64v(h ^ np.uint64(message))
    h = mix64v(h ^ np.uint64(prev))
    h = mix64v(h ^ np.uint64(kf))
    return (h < np.uint64(threshold)).astype(np.float64)


def score_range(
    h1: np.ndarray,
    prevs: np.ndarray,
    counts: np.ndarray,
    m_start: int,
    n_msgs: int,
    kf: int,
    threshold: int,
) -> np.ndarray:
    """Green-pair counts for every message in [m_start, m_start + n_msgs)."""
    out = np.zeros(n_msgs, dtype=np.uint32)
    kf_u = np.uint64(kf)
    thr = np.uint64(threshold)
    tmp = np.empty(min(n_msgs, _BLOCK), dtype=np.uint64)
    for lo in range(0, n_msgs, _BLOCK):
        hi = min(lo + _BLOCK, n_msgs)
        ms = np.arange(m_start + lo, m_start + hi, dtype=np.uint64)
        block = out[lo:hi]
        h = tmp[: hi - lo]
        for i in range(len(h1)):
            np.bitwise_xor(ms, h1[i], out=h)
            h = mix64v(h)
            h ^= prevs[i]
            h = mix64v(h)
            h ^= kf_u
            h = mix64v(h)
            block += (h < thr).astype(np.uint32) * np.uint32(counts[i])
    return out


def beats_range(
    h1: np.ndarray,
    prevs: np.ndarray,
    counts: np.ndarray,
    m_start: int,
    n_msgs: int,
    kf: int,
    threshold: int,
    limit: int,
    strict: bool,
) -> int:
    """First message in the range whose score beats `limit`, else -1.

    strict=True looks for score > limit, otherwise score >= limit.
    Short-circuit evaluation only; per-message scores are exact.
    """
    for lo in range(0, n_msgs, _BLOCK):
        hi = min(lo + _BLOCK, n_msgs)
        scores = score_range(h1, prevs, counts, m_start + lo, hi - lo, kf, threshold)
        mask = scores > limit if strict else scores >= limit
        idx = np.flatnonzero(mask)
        if idx.size:
            return m_start + lo + int(idx[0])
    return -1
