"""Compiled extension vs numpy fallback: bit-identical outputs."""
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from codemark import _backend, _kernels_py
from codemark.core import substream

uint64s = st.integers(min_value=0, max_value=(1 << 64) - 1)

compiled = pytest.importorskip("codemark._kernels", reason="compiled kernels not built")


@given(uint64s)
def test_mix64_agrees(z):
    assert compiled.mix64(z) == _kernels_py.mix64(z)


@given(uint64s, uint64s, uint64s, uint64s, uint64s)
@settings(max_examples=200)
def test_hash_bit_scalar_agrees(token, message, prev, kf, threshold):
    assert compiled.hash_bit_scalar(token, message, prev, kf, threshold) == \
        _kernels_py.hash_bit_scalar(token, message, prev, kf, threshold)


def test_wm_fill_agrees():
    rng = substream(1, "backends-wm")
    for _ in range(20):
        m = int(rng.integers(0, 1 << 20))
        prev = int(rng.integers(0, 1 << 64, dtype=np.uint64))
        kf = int(rng.integers(0, 1 << 64, dtype=np.uint64))
        thr = int(rng.integers(0, 1 << 64, dtype=np.uint64))
        a = compiled.wm_fill(m, prev, kf, thr, 1024)
        b = _kernels_py.wm_fill(m, prev, kf, thr, 1024)
        assert np.array_equal(a, b)


def test_score_range_agrees():
    rng = substream(2, "backends-score")
    for _ in range(10):
        L = int(rng.integers(1, 64))
        tokens = rng.integers(0, 1 << 32, L).astype(np.uint64)
        prevs = rng.integers(0, 1 << 64, L, dtype=np.uint64)
        counts = rng.integers(1, 5, L).astype(np.uint32)
        h1 = _kernels_py.pair_prefixes(tokens)
        assert np.array_equal(h1, compiled.pair_prefixes(tokens))
        kf = int(rng.integers(0, 1 << 64, dtype=np.uint64))
        start = int(rng.integers(0, 1 << 20))
        a = compiled.score_range(h1, prevs, counts, start, 4096, kf, 1 << 63)
        b = _kernels_py.score_range(h1, prevs, counts, start, 4096, kf, 1 << 63)
        assert np.array_equal(a, b)


def test_beats_range_agrees():
    rng = substream(3, "backends-beats")
    for strict in (False, True):
        for _ in range(10):
            L = int(rng.integers(1, 32))
            tokens = rng.integers(0, 1 << 32, L).astype(np.uint64)
            prevs = rng.integers(0, 1 << 64, L, dtype=np.uint64)
            counts = np.ones(L, dtype=np.uint32)
            h1 = _kernels_py.pair_prefixes(tokens)
            kf = int(rng.integers(0, 1 << 64, dtype=np.uint64))
            limit = int(rng.integers(0, L + 1))
            a = compiled.beats_range(h1, prevs, counts, 0, 1 << 14, kf, 1 << 63, limit, strict)
            b = _kernels_py.beats_range(h1, prevs, counts, 0, 1 << 14, kf, 1 << 63, limit, strict)
            assert a == b


def test_backend_selection_reports_name():
    assert _backend.backend_name() in ("compiled", "python")


def test_throughput_soft_target_full_message_space():
    # 2^20 messages x 200 pairs in interactive time (engineering goal).
    if _backend.backend_name() != "compiled":
        pytest.skip("soft target applies to the compiled backend")
    rng = substream(4, "throughput")
    tokens = rng.integers(0, 800, 200).astype(np.uint64)
    prevs = rng.integers(0, 800, 200).astype(np.uint64)
    counts = np.ones(200, dtype=np.uint32)
    h1 = _backend.pair_prefixes(tokens)
    t0 = time.time()
    out = _backend.score_range(h1, prevs, counts, 0, 1 << 20, 12345, 1 << 63)
    elapsed = time.time() - t0
    assert out.shape == (1 << 20,)
    assert elapsed < 30.0
