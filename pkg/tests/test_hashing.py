from pathlib import Path

import numpy as np
import pytest

from codemark.core import Vocabulary, WatermarkKey, WatermarkMessage, substream
from codemark.hashing import SelectionPredicate, hash_bit, pair_score, watermark_logits

from oracles import ref_hash_bit, ref_sentinel

VECTORS = Path(__file__).parent / "data" / "hash_vectors.txt"


def load_vectors():
    rows = []
    for line in VECTORS.read_text().splitlines():
        if line.startswith("#") or not line.strip():
            continue
        lhs, bit = line.split("->")
        token, message, prev, key_hex = lhs.split()
        rows.append((int(token), int(message), int(prev), int(key_hex, 16), int(bit)))
    return rows


def test_golden_vectors_commit_exists_with_32_rows():
    assert len(load_vectors()) == 32


def test_golden_vectors_match():
    for token, message, prev, key, bit in load_vectors():
        got = hash_bit(token, message, prev, WatermarkKey(key))
        assert got == bit, (token, message, prev, key)


def test_oracle_agrees_on_fresh_inputs():
    rng = substream(123, "hash-oracle")
    for _ in range(200):
        token = int(rng.integers(0, 1 << 17))
        message = int(rng.integers(0, 1 << 20))
        prev = int(rng.integers(0, 1 << 63))
        key = int(rng.integers(0, 1 << 62))
        assert hash_bit(token, message, prev, WatermarkKey(key)) == ref_hash_bit(
            token, message, prev, key
        )


def test_determinism():
    key = WatermarkKey(99)
    first = hash_bit(5, 2024, 7, key)
    assert all(hash_bit(5, 2024, 7, key) == first for _ in range(10))


def test_sentinel_matches_oracle():
    key = 0x000102030405060708090A0B0C0D0E0F
    assert WatermarkKey(key).sentinel_prev == ref_sentinel(key)


def test_green_count_within_3_sigma_for_50k_vocab():
    key = WatermarkKey(2024)
    vec = watermark_logits(WatermarkMessage(2024, 20), prev=17, key=key, vocab=50000)
    count = int(vec.sum())
    sigma = (50000 * 0.25) ** 0.5
    assert abs(count - 25000) <= 3 * sigma


def test_popcount_band_1024():
    key = WatermarkKey(7)
    vec = watermark_logits(3, prev=2, key=key, vocab=1024)
    assert 402 <= int(vec.sum()) <= 622
    assert set(np.unique(vec)) <= {0.0, 1.0}


def test_two_messages_differ_in_about_half_the_entries():
    key = WatermarkKey(5)
    a = watermark_logits(111, prev=9, key=key, vocab=20000)
    b = watermark_logits(222, prev=9, key=key, vocab=20000)
    frac = float(np.mean(a != b))
    assert abs(frac - 0.5) <= 0.05


def test_pair_score_equals_indexed_logits():
    key = WatermarkKey(31337)
    vocab = Vocabulary([f"t{i}" for i in range(257)])
    rng = substream(5, "pair-consistency")
    for _ in range(300):
        message = int(rng.integers(0, 1 << 20))
        prev = int(rng.integers(0, vocab.size))
        token = int(rng.integers(0, vocab.size))
        vec = watermark_logits(message, prev, key, vocab)
        assert pair_score(token, prev, message, key) == vec[token]


def test_pair_score_mean_near_green_fraction():
    key = WatermarkKey(77)
    rng = substream(6, "pair-mean")
    n = 100_000
    tokens = rng.integers(0, 50000, n)
    prevs = rng.integers(0, 50000, n)
    mean = np.mean(
        [pair_score(int(t), int(p), 2024, key) for t, p in zip(tokens, prevs)]
    )
    assert abs(mean - 0.5) <= 0.02


def test_key_bit_flip_decorrelates():
    base = WatermarkKey(0x0123456789ABCDEF0123456789ABCDEF)
    flipped = WatermarkKey(base.key ^ (1 << 93))
    rng = substream(8, "key-flip")
    n = 100_000
    tokens = rng.integers(0, 1 << 16, n)
    prevs = rng.integers(0, 1 << 16, n)
    agree = np.mean(
        [
            hash_bit(int(t), 2024, int(p), base) == hash_bit(int(t), 2024, int(p), flipped)
            for t, p in zip(tokens, prevs)
        ]
    )
    assert abs(agree - 0.5) <= 0.02


def test_green_fraction_calibration_other_delta():
    key = WatermarkKey(4242)
    vec = watermark_logits(9, prev=4, key=key, vocab=20000, green_fraction=0.25)
    count = int(vec.sum())
    sigma = (20000 * 0.25 * 0.75) ** 0.5
    assert abs(count - 5000) <= 3 * sigma


def test_selection_predicate_caches_consistently():
    pred = SelectionPredicate(WatermarkKey(1), WatermarkMessage(2024, 20), 0.5)
    vec = pred.logits(prev=3, vocab=512)
    for token in (0, 17, 511):
        assert pred.bit(token, 3) == vec[token]


@pytest.mark.parametrize("delta", [0.1, 0.5, 0.9])
def test_bits_are_zero_or_one(delta):
    key = WatermarkKey(3)
    vec = watermark_logits(1, 1, key, 64, green_fraction=delta)
    assert set(np.unique(vec)) <= {0.0, 1.0}
