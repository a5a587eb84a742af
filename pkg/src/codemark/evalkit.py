"""Metrics, the crop attack, and the parameter/robustness sweep harness.

bleu_proxy implements the two n-gram terms of the combined code metric
(plain 4-gram BLEU with brevity penalty, plus a weighted variant that
counts Keyword tokens double), renormalized so the implemented weights
sum to one. The syntax-tree and dataflow terms need full per-language
parsers and are deliberately not computed; report columns carry the
proxy name to keep the substitution visible.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    GenerationContext,
    GenerationParams,
    Vocabulary,
    WatermarkConfig,
    WatermarkKey,
    WatermarkMessage,
    substream,
)
from .decode import generate, generate_unwatermarked
from .extract import ExtractionResult, extract_parallel, would_extract
from .lexing import Lexer, LexTokenType, TypeVocabMap
from .lmsource import NgramLM
from .typepred import TypeGuide, TypePredictor


@dataclass(frozen=True)
class CodeBleuWeights:
    eta: float = 0.10
    lam: float = 0.10
    mu: float = 0.40  # syntax-match term: not computed here
    xi: float = 0.40  # dataflow-match term: not computed here

    def __post_init__(self):
        if min(self.eta, self.lam, self.mu, self.xi) < 0:
            raise ValueError("weights must be non-negative")
        if self.eta + self.lam <= 0:
            raise ValueError("at least one implemented term must have weight")


def extraction_rate(
    results: Sequence[tuple[WatermarkMessage | int, ExtractionResult]]
) -> float:
    """Fraction of trials whose best message equals the embedded one."""
    if not results:
        raise ValueError("need at least one trial")
    matched = 0
    for embedded, res in results:
        value = embedded.value if isinstance(embedded, WatermarkMessage) else int(embedded)
        if res.best_message.value == value:
            matched += 1
    return matched / len(results)


def _content_tokens(lexer: Lexer, text: str) -> tuple[list[str], list[float]]:
    toks, weights = [], []
    for lx in lexer.lexemes(text):
        if lx.type == LexTokenType.TEXT:
            continue
        toks.append(lx.text)
        weights.append(2.0 if lx.type == LexTokenType.KEYWORD else 1.0)
    return toks, weights


def _precision(cand: list[str], ref: list[str], n: int,
               cand_w: list[float] | None, ref_w=None) -> tuple[float, float]:
    """Weighted modified n-gram precision numerator/denominator."""
    if len(cand) < n:
        return 0.0, 0.0
    def grams(toks, w):
        out: dict[tuple, list] = {}
        for i in range(len(toks) - n + 1):
            g = tuple(toks[i : i + n])
            weight = sum(w[i : i + n]) / n if w is not None else 1.0
            entry = out.setdefault(g, [0, weight])
            entry[0] += 1
        return out
    cg = grams(cand, cand_w)
    rg = Counter(tuple(ref[i : i + n]) for i in range(len(ref) - n + 1))
    num = 0.0
    den = 0.0
    for g, (count, weight) in cg.items():
        den += count * weight
        num += min(count, rg.get(g, 0)) * weight
    return num, den


def _bleu(cand: list[str], ref: list[str], cand_w: list[float] | None, max_n: int = 4) -> float:
    if not cand or not ref:
        return 1.0 if cand == ref else 0.0
    log_sum = 0.0
    orders = 0
    for n in range(1, max_n + 1):
        num, den = _precision(cand, ref, n, cand_w)
        if den == 0.0:
            continue
        if num == 0.0:
            return 0.0
        log_sum += math.log(num / den)
        orders += 1
    if orders == 0:
        return 0.0
    precision = math.exp(log_sum / orders)
    c, r = len(cand), len(ref)
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * precision


def bleu_proxy(
    candidate: str,
    reference: str,
    lexer: Lexer,
    weights: CodeBleuWeights = CodeBleuWeights(),
) -> float:
    """eta*BLEU + lam*weighted-BLEU over lexer tokens, renormalized."""
    cand, cand_w = _content_tokens(lexer, candidate)
    ref, _ = _content_tokens(lexer, reference)
    plain = _bleu(cand, ref, None)
    weighted = _bleu(cand, ref, cand_w)
    return (weights.eta * plain + weights.lam * weighted) / (weights.eta + weights.lam)


def crop_attack(
    ids: Sequence,
    rate: float,
    mode: str = "suffix_keep",
    seed: int | None = None,
):
    """Keep a contiguous window of ceil((1 - rate) * L) tokens.

    suffix_keep retains the head of the sequence, prefix_keep the tail,
    random_window a seeded random window.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError("rate must be in [0, 1)")
    ids = list(ids)
    keep = math.ceil((1.0 - rate) * len(ids))
    if mode == "suffix_keep":
        return ids[:keep]
    if mode == "prefix_keep":
        return ids[len(ids) - keep :]
    if mode == "random_window":
        rng = substream(0 if seed is None else seed, "crop-window")
        start = int(rng.integers(0, len(ids) - keep + 1)) if len(ids) > keep else 0
        return ids[start : start + keep]
    raise ValueError("mode must be suffix_keep, prefix_keep, or random_window")


@dataclass
class SweepPlan:
    axis: str
    grid: Sequence
    trials: int
    fixed: dict = field(default_factory=dict)
    seed: int = 0

    _AXES = ("beta", "gamma", "length", "crop_rate")

    def __post_init__(self):
        if self.axis not in self._AXES:
            raise ValueError(f"axis must be one of {self._AXES}")
        if not list(self.grid):
            raise ValueError("grid must be non-empty")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        for v in self.grid:
            if self.axis == "crop_rate" and not 0.0 <= float(v) < 1.0:
                raise ValueError("crop_rate grid values must be in [0, 1)")
            if self.axis == "length" and int(v) < 1:
                raise ValueError("length grid values must be >= 1")
            if self.axis in ("beta", "gamma") and float(v) < 0:
                raise ValueError("beta/gamma grid values must be >= 0")


@dataclass
class Pipeline:
    """Everything a watermarking trial needs, wired to one vocabulary.

    continuation_allowance=None resolves by tokenizer: on for char_pair
    (split lexemes need finishing), off for lexeme-aligned vocabularies
    (a trailing bare lexeme is already complete; extending it would glue
    adjacent identifiers together).
    """

    source: NgramLM
    lexer: Lexer
    predictor: TypePredictor | None = None
    type_map: TypeVocabMap | None = None
    continuation_allowance: bool | None = None

    def __post_init__(self):
        self.vocab: Vocabulary = self.source.vocabulary()
        if self.continuation_allowance is None:
            self.continuation_allowance = (
                getattr(self.source, "tokenizer", "") == "char_pair"
            )

    def guide(self) -> TypeGuide | None:
        if self.predictor is None or self.type_map is None:
            return None
        return TypeGuide(
            self.predictor,
            self.type_map,
            self.lexer,
            continuation_allowance=self.continuation_allowance,
        )


@dataclass
class TrialRecord:
    embedded: int
    result: ExtractionResult
    bleu: float
    divergence: float


def _gen_params(length: int, fixed: dict) -> GenerationParams:
    return GenerationParams(
        max_new_tokens=length,
        temperature=fixed.get("temperature", 0.75),
        repetition_penalty=fixed.get("repetition_penalty", 1.2),
        no_repeat_ngram=fixed.get("no_repeat_ngram", 10),
    )


def sample_prompt(pipeline: Pipeline, corpus_ids: list[list[int]], rng, prompt_len: int) -> tuple[int, ...]:
    stream = corpus_ids[int(rng.integers(0, len(corpus_ids)))]
    max_start = max(1, len(stream) - prompt_len)
    start = int(rng.integers(0, max_start))
    prompt = stream[start : start + prompt_len]
    return tuple(prompt) if prompt else tuple(stream[:1])


def corpus_id_streams(pipeline: Pipeline, corpus_texts: Sequence[str]) -> list[list[int]]:
    return [pipeline.source.encode_text(pipeline.lexer, t) for t in corpus_texts]


def retokenized_ids(pipeline: Pipeline, generated_ids: Sequence[int]) -> list[int]:
    """Round-trip through text: what the extractor actually sees."""
    text = pipeline.vocab.decode(generated_ids)
    return pipeline.source.encode_text(pipeline.lexer, text)


def run_sweep(
    plan: SweepPlan,
    pipeline: Pipeline,
    corpus_texts: Sequence[str],
    key: WatermarkKey,
) -> list[dict]:
    """One report row per grid value, aggregated over seeded trials.

    Trials use common random numbers: trial t draws the same prompt and
    message at every grid value, so trend comparisons are paired.
    """
    fixed = dict(plan.fixed)
    bits = int(fixed.get("bits", 16))
    base_beta = float(fixed.get("beta", 5.0))
    base_gamma = float(fixed.get("gamma", 3.0))
    base_length = int(fixed.get("length", 120))
    prompt_len = int(fixed.get("prompt_len", 16))
    use_tp = bool(fixed.get("use_tp", True)) and pipeline.guide() is not None
    green_fraction = float(fixed.get("green_fraction", 0.5))
    crop_mode = fixed.get("crop_mode", "suffix_keep")
    workers = int(fixed.get("workers", 1))

    corpus_ids = corpus_id_streams(pipeline, corpus_texts)
    draws = []
    for t in range(plan.trials):
        rng = substream(plan.seed, f"trial-{t}")
        draws.append(
            (
                sample_prompt(pipeline, corpus_ids, rng, prompt_len),
                int(rng.integers(0, 1 << bits)),
            )
        )

    unwm_cache: dict[tuple, tuple[list[int], str]] = {}

    def unwatermarked_text(prompt: tuple[int, ...], length: int) -> str:
        cache_key = (prompt, length)
        if cache_key not in unwm_cache:
            res = generate_unwatermarked(
                pipeline.source, GenerationContext(prompt), _gen_params(length, fixed)
            )
            unwm_cache[cache_key] = (res.ids, pipeline.vocab.decode(res.ids))
        return unwm_cache[cache_key][1]

    def run_trial(prompt, message, beta, gamma, length) -> tuple:
        cfg = WatermarkConfig(
            WatermarkMessage(message, bits), key, beta, gamma, green_fraction
        )
        res = generate(
            pipeline.source,
            GenerationContext(prompt),
            cfg,
            pipeline.guide() if use_tp else None,
            _gen_params(length, fixed),
        )
        text = pipeline.vocab.decode(res.ids)
        div = (
            sum(1 for tr in res.traces if tr.chosen_id != tr.lm_argmax) / len(res.traces)
            if res.traces
            else 0.0
        )
        return res.ids, text, div

    # generate-once reuse: length rows read prefixes of one generation,
    # crop rows crop one generation (greedy decoding is prefix-stable).
    shared: dict[int, tuple] = {}
    if plan.axis in ("length", "crop_rate"):
        max_length = max(int(v) for v in plan.grid) if plan.axis == "length" else base_length
        for t, (prompt, message) in enumerate(draws):
            shared[t] = run_trial(prompt, message, base_beta, base_gamma, max_length)

    rows = []
    for value in plan.grid:
        records: list[TrialRecord] = []
        for t, (prompt, message) in enumerate(draws):
            beta, gamma, length = base_beta, base_gamma, base_length
            if plan.axis == "beta":
                beta = float(value)
            elif plan.axis == "gamma":
                gamma = float(value)
            elif plan.axis == "length":
                length = int(value)

            if plan.axis in ("length", "crop_rate"):
                full_ids, _full_text, div = shared[t]
                gen_ids = full_ids[:length]
                text = pipeline.vocab.decode(gen_ids)
            else:
                gen_ids, text, div = run_trial(prompt, message, beta, gamma, length)

            retok = retokenized_ids(pipeline, gen_ids)
            mode = "from_start"
            if plan.axis == "crop_rate" and float(value) > 0.0:
                retok = crop_attack(retok, float(value), crop_mode, seed=plan.seed + t)
                mode = "cropped"
            result = extract_parallel(
                retok, key, bits, workers=workers, mode=mode, green_fraction=green_fraction
            )
            bleu = bleu_proxy(text, unwatermarked_text(prompt, length), pipeline.lexer)
            records.append(TrialRecord(message, result, bleu, div))

        rows.append(
            {
                "axis": plan.axis,
                "value": float(value),
                "trials": plan.trials,
                "extraction_rate": extraction_rate(
                    [(r.embedded, r.result) for r in records]
                ),
                "mean_bleu_proxy": float(np.mean([r.bleu for r in records])),
                "mean_margin": float(np.mean([r.result.margin for r in records])),
                "mean_divergence": float(np.mean([r.divergence for r in records])),
            }
        )
    return rows


_ROW_FIELDS = (
    "axis",
    "value",
    "trials",
    "extraction_rate",
    "mean_bleu_proxy",
    "mean_margin",
    "mean_divergence",
)


def rows_to_csv(rows: Sequence[dict]) -> str:
    lines = [",".join(_ROW_FIELDS)]
    for row in rows:
        cells = []
        for name in _ROW_FIELDS:
            v = row[name]
            cells.append(f"{v:.6f}" if isinstance(v, float) else str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def rows_to_json(rows: Sequence[dict], manifest: dict | None = None) -> str:
    payload = {"schema_version": 1, "rows": list(rows)}
    if manifest is not None:
        payload["manifest"] = manifest
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def plot_data_files(rows: Sequence[dict]) -> dict[str, str]:
    """Per-figure x/y series: extraction rate and quality against the axis."""
    axis = rows[0]["axis"] if rows else "value"
    rate_lines = [f"{axis},extraction_rate"]
    bleu_lines = [f"{axis},mean_bleu_proxy"]
    for row in rows:
        rate_lines.append(f"{row['value']:.6f},{row['extraction_rate']:.6f}")
        bleu_lines.append(f"{row['value']:.6f},{row['mean_bleu_proxy']:.6f}")
    return {
        f"{axis}_extraction_rate.csv": "\n".join(rate_lines) + "\n",
        f"{axis}_bleu_proxy.csv": "\n".join(bleu_lines) + "\n",
    }


def bundled_pipeline(
    corpus_texts: Sequence[str],
    lexer: Lexer,
    tokenizer: str = "lexeme_ws",
    predictor_seed: int = 0,
) -> Pipeline:
    """The standard desk-scale setup: n-gram source, type map, predictor."""
    from .lexing import build_type_map
    from .lmsource import train_ngram
    from .typepred import PredictorTrainingConfig, train_predictor

    lm = train_ngram(corpus_texts, lexer, tokenizer=tokenizer)
    tmap = build_type_map(lm.vocab, lexer)
    pred = train_predictor(
        PredictorTrainingConfig(corpus=corpus_texts, seed=predictor_seed), lexer
    )
    return Pipeline(lm, lexer, pred, tmap)


def false_positive_count(
    pipeline: Pipeline,
    corpus_texts: Sequence[str],
    key: WatermarkKey,
    target: int,
    n_snippets: int = 1000,
    snippet_len: int = 40,
    bits: int = 20,
    seed: int = 0,
) -> int:
    """How often a fixed target message comes out of unwatermarked code."""
    streams = [s for s in corpus_id_streams(pipeline, corpus_texts) if len(s) >= 2]
    rng = substream(seed, "false-positives")
    hits = 0
    for _ in range(n_snippets):
        stream = streams[int(rng.integers(0, len(streams)))]
        length = min(snippet_len, len(stream))
        start = int(rng.integers(0, len(stream) - length + 1))
        snippet = stream[start : start + length]
        if would_extract(snippet, key, target, bits, mode="cropped"):
            hits += 1
    return hits
