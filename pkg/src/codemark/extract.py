"""Message recovery: argmax of summed green-pair scores over the message space.

Scores are integer pair counts, so reduction order can never change a
result. The search is exhaustive (no pruning); extract_parallel chunks
the message space and reduces per-chunk maxima with the same
lowest-message tie-break, so results are identical for any worker count.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _backend
from .core import WatermarkKey, WatermarkMessage, green_threshold

CHUNK = 1 << 15


@dataclass(frozen=True)
class ExtractionResult:
    best_message: WatermarkMessage
    best_score: int
    runner_up_score: int
    margin: int
    L_pairs: int
    ambiguous: bool

    def to_dict(self) -> dict:
        return {
            "best_message": self.best_message.value,
            "bits": self.best_message.bits,
            "best_score": self.best_score,
            "runner_up_score": self.runner_up_score,
            "margin": self.margin,
            "L_pairs": self.L_pairs,
            "ambiguous": self.ambiguous,
        }


def _pair_arrays(ids: Sequence[int], key: WatermarkKey, mode: str):
    """Scored (prev, token) pairs, deduplicated with multiplicities.

    from_start scores the first token against the key sentinel; cropped
    starts at the second token because the true predecessor is unknown.
    """
    if mode not in ("from_start", "cropped"):
        raise ValueError("mode must be 'from_start' or 'cropped'")
    ids = list(ids)
    if mode == "from_start":
        prevs = [key.sentinel_prev] + ids[:-1]
        toks = ids
    else:
        prevs = ids[:-1]
        toks = ids[1:]
    if not toks:
        return (
            np.empty(0, dtype=np.uint64),
            np.empty(0, dtype=np.uint64),
            np.empty(0, dtype=np.uint32),
            0,
        )
    pairs = np.stack(
        [np.asarray(prevs, dtype=np.uint64), np.asarray(toks, dtype=np.uint64)]
    )
    uniq, counts = np.unique(pairs, axis=1, return_counts=True)
    h1 = _backend.pair_prefixes(uniq[1])
    return h1, uniq[0], counts.astype(np.uint32), len(toks)


def score_message(
    ids: Sequence[int],
    message: WatermarkMessage | int,
    key: WatermarkKey,
    green_fraction: float = 0.5,
    mode: str = "from_start",
) -> int:
    """Green-pair count for one candidate message."""
    h1, prevs, counts, _ = _pair_arrays(ids, key, mode)
    if len(h1) == 0:
        return 0
    value = message.value if isinstance(message, WatermarkMessage) else int(message)
    out = _backend.score_range(
        h1, prevs, counts, value, 1, key.fold, green_threshold(green_fraction)
    )
    return int(out[0])


def _reduce_chunk(scores: np.ndarray, m_start: int):
    best_idx = int(np.argmax(scores))
    best = int(scores[best_idx])
    if len(scores) > 1:
        runner = int(np.partition(scores, -2)[-2])
    else:
        runner = -1
    return m_start + best_idx, best, runner


def extract_parallel(
    ids: Sequence[int],
    key: WatermarkKey,
    bits: int = 20,
    workers: int = 1,
    mode: str = "from_start",
    green_fraction: float = 0.5,
) -> ExtractionResult:
    """Exact argmax over all 2^bits messages, chunked across workers."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    h1, prevs, counts, n_pairs = _pair_arrays(ids, key, mode)
    kf = key.fold
    thr = green_threshold(green_fraction)
    total = 1 << bits
    starts = list(range(0, total, CHUNK))

    def run(start: int):
        n = min(CHUNK, total - start)
        return _reduce_chunk(
            _backend.score_range(h1, prevs, counts, start, n, kf, thr), start
        )

    if len(h1) == 0:
        return ExtractionResult(
            WatermarkMessage(0, bits), 0, 0 if total > 1 else -1, 0, 0, total > 1
        )

    if workers == 1 or len(starts) == 1:
        partials = [run(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(run, starts))

    best_m, best_s, runner = partials[0]
    for m, s, r in partials[1:]:
        if s > best_s:
            runner = max(best_s, r)
            best_m, best_s = m, s
        else:
            runner = max(runner, s)
    return ExtractionResult(
        best_message=WatermarkMessage(best_m, bits),
        best_score=best_s,
        runner_up_score=runner,
        margin=best_s - runner,
        L_pairs=n_pairs,
        ambiguous=runner == best_s,
    )


def extract(
    ids: Sequence[int],
    key: WatermarkKey,
    bits: int = 20,
    mode: str = "from_start",
    green_fraction: float = 0.5,
) -> ExtractionResult:
    return extract_parallel(ids, key, bits, workers=1, mode=mode, green_fraction=green_fraction)


def would_extract(
    ids: Sequence[int],
    key: WatermarkKey,
    target: WatermarkMessage | int,
    bits: int = 20,
    mode: str = "from_start",
    green_fraction: float = 0.5,
) -> bool:
    """Exact decision: would extract() return `target` as best_message?

    Equivalent to extract(...).best_message.value == target, but evaluated
    with short-circuiting: scan for any message below target scoring at
    least as high, or any message above it scoring strictly higher. Scores
    are still computed exactly; only the conjunction is short-circuited.
    """
    value = target.value if isinstance(target, WatermarkMessage) else int(target)
    if not 0 <= value < (1 << bits):
        raise ValueError("target outside the message space")
    h1, prevs, counts, _ = _pair_arrays(ids, key, mode)
    if len(h1) == 0:
        return value == 0
    kf = key.fold
    thr = green_threshold(green_fraction)
    s_t = int(
        _backend.score_range(h1, prevs, counts, value, 1, kf, thr)[0]
    )
    if value > 0:
        if _backend.beats_range(h1, prevs, counts, 0, value, kf, thr, s_t, False) != -1:
            return False
    remaining = (1 << bits) - value - 1
    if remaining > 0:
        if (
            _backend.beats_range(
                h1, prevs, counts, value + 1, remaining, kf, thr, s_t, True
            )
            != -1
        ):
            return False
    return True
