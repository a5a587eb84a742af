"""The keyed token-selection predicate and the watermark logit it induces.

A token w is "green" for (message, prev, key) when the splitmix64
absorption chain over (token, message, prev, key) lands below the
green-fraction threshold. The watermark logit is the 0/1 indicator of
that predicate over the whole vocabulary.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .core import (
    Vocabulary,
    WatermarkKey,
    WatermarkMessage,
    green_threshold,
)


def _msg_value(message: WatermarkMessage | int) -> int:
    return message.value if isinstance(message, WatermarkMessage) else int(message)


def _vocab_size(vocab: Vocabulary | int) -> int:
    return vocab.size if isinstance(vocab, Vocabulary) else int(vocab)


@dataclass(frozen=True)
class SelectionPredicate:
    """Stateless green-token predicate with precomputed key material."""

    key: WatermarkKey
    message: WatermarkMessage
    green_fraction: float = 0.5

    @property
    def threshold(self) -> int:
        return green_threshold(self.green_fraction)

    def bit(self, token: int, prev: int) -> int:
        return _backend.hash_bit_scalar(
            token, self.message.value, prev, self.key.fold, self.threshold
        )

    def logits(self, prev: int, vocab: Vocabulary | int) -> np.ndarray:
        return _backend.wm_fill(
            self.message.value, prev, self.key.fold, self.threshold, _vocab_size(vocab)
        )


def hash_bit(
    token: int,
    message: WatermarkMessage | int,
    prev: int,
    key: WatermarkKey,
    green_fraction: float = 0.5,
) -> int:
    """1 iff the keyed mixer selects `token` after `prev` for this message."""
    return _backend.hash_bit_scalar(
        token, _msg_value(message), prev, key.fold, green_threshold(green_fraction)
    )


def watermark_logits(
    message: WatermarkMessage | int,
    prev: int,
    key: WatermarkKey,
    vocab: Vocabulary | int,
    green_fraction: float = 0.5,
) -> np.ndarray:
    """Indicator vector over the vocabulary: 1.0 on green tokens, else 0.0."""
    return _backend.wm_fill(
        _msg_value(message),
        prev,
        key.fold,
        green_threshold(green_fraction),
        _vocab_size(vocab),
    )


def pair_score(
    token: int,
    prev: int,
    message: WatermarkMessage | int,
    key: WatermarkKey,
    green_fraction: float = 0.5,
) -> int:
    """Per-position extraction contribution; equals the indexed logit entry."""
    return hash_bit(token, message, prev, key, green_fraction)
