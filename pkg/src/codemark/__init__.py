"""codemark: multi-bit soft watermarking for generated code.

Insertion biases an autoregressive logit source toward keyed "green"
tokens and grammatically plausible token types; extraction recovers the
embedded message by scoring every candidate over the token sequence.
"""

__version__ = "0.1.0"

from ._backend import backend_name
from .core import (
    CodemarkError,
    CorpusTooSmall,
    EmptyPrompt,
    GenerationContext,
    GenerationParams,
    OverflowsWidth,
    PeerExit,
    ProtocolError,
    PRESETS,
    VocabMismatch,
    Vocabulary,
    WatermarkConfig,
    WatermarkKey,
    WatermarkMessage,
    decode_message,
    encode_message,
)
from .decode import GenerationResult, generate, generate_unwatermarked
from .extract import ExtractionResult, extract, extract_parallel, score_message
from .hashing import hash_bit, pair_score, watermark_logits
from .lexing import LexTokenType, TypeVocabMap, build_type_map, minilang_lexer
from .lmsource import ExternalProvider, NgramLM, train_ngram
from .typepred import PredictorTrainingConfig, TypeGuide, TypePredictor, train_predictor

__all__ = [
    "CodemarkError",
    "CorpusTooSmall",
    "EmptyPrompt",
    "ExtractionResult",
    "ExternalProvider",
    "GenerationContext",
    "GenerationParams",
    "GenerationResult",
    "LexTokenType",
    "NgramLM",
    "OverflowsWidth",
    "PRESETS",
    "PeerExit",
    "PredictorTrainingConfig",
    "ProtocolError",
    "TypeGuide",
    "TypePredictor",
    "TypeVocabMap",
    "VocabMismatch",
    "Vocabulary",
    "WatermarkConfig",
    "WatermarkKey",
    "WatermarkMessage",
    "backend_name",
    "build_type_map",
    "decode_message",
    "encode_message",
    "extract",
    "extract_parallel",
    "generate",
    "generate_unwatermarked",
    "hash_bit",
    "minilang_lexer",
    "pair_score",
    "score_message",
    "train_ngram",
    "train_predictor",
    "watermark_logits",
]
