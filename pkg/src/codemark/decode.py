"""The watermarked generation loop.

Per step: fetch model logits, apply the repetition penalty to them alone,
add beta * watermark logits (previous emitted token, or the key-derived
sentinel at step 0) and gamma * type-predictor logits, mask tokens that
would complete a repeated n-gram, then pick the argmax (ties go to the
lowest token id).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    EmptyPrompt,
    GenerationContext,
    GenerationParams,
    PeerExit,
    WatermarkConfig,
    check_logits,
    substream,
)
from .hashing import SelectionPredicate
from .lmsource import LogitSource
from .typepred import TypeGuide


@dataclass(frozen=True)
class DecodeStepTrace:
    step: int
    prev_id: int
    chosen_id: int
    lm_argmax: int
    predicted_type: int | None
    wm_applied: bool
    tp_applied: bool
    ngram_blocked: bool

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "prev_id": self.prev_id,
            "chosen_id": self.chosen_id,
            "lm_argmax": self.lm_argmax,
            "predicted_type": self.predicted_type,
            "wm_applied": self.wm_applied,
            "tp_applied": self.tp_applied,
            "ngram_blocked": self.ngram_blocked,
        }


@dataclass
class GenerationResult:
    ids: list[int]
    traces: list[DecodeStepTrace] = field(default_factory=list)
    error: str | None = None


def combined_logits(
    lm: np.ndarray,
    wm: np.ndarray | None,
    tp: np.ndarray | None,
    beta: float,
    gamma: float,
) -> np.ndarray:
    out = lm.astype(np.float64, copy=True)
    if wm is not None:
        out += beta * wm
    if tp is not None:
        out += gamma * tp
    return out


def _apply_repetition_penalty(lm: np.ndarray, generated: list[int], penalty: float) -> np.ndarray:
    if penalty == 1.0 or not generated:
        return lm
    out = lm.copy()
    ids = np.unique(np.asarray(generated, dtype=np.int64))
    vals = out[ids]
    out[ids] = np.where(vals > 0, vals / penalty, vals * penalty)
    return out


def _banned_ngram_tokens(history: list[int], n: int) -> list[int]:
    """Tokens that would complete an n-gram already present in history."""
    if n <= 0 or len(history) < n - 1:
        return []
    prefix = tuple(history[len(history) - (n - 1) :]) if n > 1 else ()
    banned = []
    for i in range(len(history) - n + 1):
        if tuple(history[i : i + n - 1]) == prefix:
            banned.append(history[i + n - 1])
    return banned


def generate(
    source: LogitSource,
    ctx: GenerationContext,
    wm: WatermarkConfig | None = None,
    tp: TypeGuide | None = None,
    params: GenerationParams = GenerationParams(),
    seed: int = 0,
) -> GenerationResult:
    vocab = source.vocabulary()
    ctx.validate_against(vocab.size)
    if not ctx.prompt_ids:
        raise EmptyPrompt("prompt must be non-empty")

    predicate = (
        SelectionPredicate(wm.key, wm.message, wm.green_fraction) if wm else None
    )
    rng = substream(seed, "decode-multinomial") if params.sampling_mode == "multinomial" else None

    traces: list[DecodeStepTrace] = []
    result = GenerationResult(ids=ctx.generated_ids, traces=traces)
    for step in range(params.max_new_tokens):
        try:
            lm = check_logits(np.asarray(source.next_logits(ctx), dtype=np.float64), vocab.size)
        except PeerExit as exc:
            result.error = f"peer_exit: {exc}"
            return result
        lm_argmax = int(np.argmax(lm))
        penalized = _apply_repetition_penalty(lm, ctx.generated_ids, params.repetition_penalty)

        prev = ctx.generated_ids[-1] if ctx.generated_ids else (
            wm.key.sentinel_prev if wm else 0
        )
        wm_vec = predicate.logits(prev, vocab.size) if predicate else None

        tau = None
        tp_vec = None
        if tp is not None:
            tp_vec, tau_type, _partial = tp.logits(ctx, vocab)
            tau = int(tau_type)

        scores = combined_logits(
            penalized,
            wm_vec,
            tp_vec,
            wm.beta if wm else 0.0,
            wm.gamma if wm else 0.0,
        )

        banned = _banned_ngram_tokens(ctx.full_ids(), params.no_repeat_ngram)
        if banned:
            scores[banned] = -np.inf

        if params.sampling_mode == "multinomial":
            probs = np.exp(scores / params.temperature - np.max(scores / params.temperature))
            probs[~np.isfinite(probs)] = 0.0
            total = probs.sum()
            if total <= 0:
                chosen = int(np.argmax(scores))
            else:
                chosen = int(rng.choice(vocab.size, p=probs / total))
        else:
            chosen = int(np.argmax(scores))

        if source.eos_id is not None and chosen == source.eos_id:
            break

        traces.append(
            DecodeStepTrace(
                step=step,
                prev_id=int(prev),
                chosen_id=chosen,
                lm_argmax=lm_argmax,
                predicted_type=tau,
                wm_applied=wm is not None,
                tp_applied=tp is not None,
                ngram_blocked=bool(banned),
            )
        )
        ctx.generated_ids.append(chosen)
    return result


def generate_unwatermarked(
    source: LogitSource,
    ctx: GenerationContext,
    params: GenerationParams = GenerationParams(),
    seed: int = 0,
) -> GenerationResult:
    """Plain greedy decoding; the baseline every comparison runs against."""
    return generate(source, ctx, wm=None, tp=None, params=params, seed=seed)
