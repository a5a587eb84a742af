"""Domain types, message codec, keyed mixing primitives, and configuration.

Everything here is immutable after construction and safe to share across
concurrent workers.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

MASK64 = (1 << 64) - 1
DEFAULT_BITS = 20
MAX_BITS = 30

# Absorption seed and the two multipliers of the splitmix64 finalizer
# (Stafford mix13). Fixed constants: changing any of them changes every
# watermark bit, so they are part of the on-disk/golden-vector contract.
CHAIN_SEED = 0x9E3779B97F4A7C15
_MIX_M1 = 0xBF58476D1CE4E5B9
_MIX_M2 = 0x94D049BB133111EB
_SENTINEL_TAG = 0x53454E54494E454C

# (beta, gamma) presets for the combined-logit weights.
PRESETS = {"default": (5.0, 3.0), "alt": (6.0, 4.0)}


class CodemarkError(Exception):
    """Base class for all library errors."""


class OverflowsWidth(CodemarkError):
    """Message payload does not fit the configured bit width."""


class CorpusTooSmall(CodemarkError):
    """Training corpus below the documented minimum."""


class VocabMismatch(CodemarkError):
    """Components disagree about the vocabulary."""


class EmptyPrompt(CodemarkError):
    """Generation requires a non-empty prompt."""


class ProtocolError(CodemarkError):
    """Malformed frame on the external-provider wire protocol."""


class PeerExit(CodemarkError):
    """External provider closed the stream mid-session."""


def mix64(z: int) -> int:
    """Scalar splitmix64 finalizer over 64-bit integers."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX_M1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX_M2) & MASK64
    return z ^ (z >> 31)


def absorb(h: int, v: int) -> int:
    return mix64((h ^ v) & MASK64)


def key_fold(key: int) -> int:
    """Fold a 128-bit key into the single 64-bit lane the mixer absorbs."""
    return absorb(absorb(CHAIN_SEED, key & MASK64), (key >> 64) & MASK64)


def green_threshold(green_fraction: float) -> int:
    """Exact 64-bit threshold for 'mixed value / 2^64 < green_fraction'.

    Computed through Fraction so two implementations given the same float
    always derive the same integer threshold.
    """
    if not 0.0 < green_fraction < 1.0:
        raise ValueError("green_fraction must be in (0, 1)")
    return int(Fraction(green_fraction) * (1 << 64))


class Vocabulary:
    """Dense id <-> token-string table shared by every logit vector."""

    __slots__ = ("tokens", "_ids")

    def __init__(self, tokens: Sequence[str]):
        tokens = tuple(tokens)
        if len(tokens) < 2:
            raise ValueError("vocabulary needs at least 2 tokens")
        self.tokens = tokens
        self._ids = {t: i for i, t in enumerate(tokens)}
        if len(self._ids) != len(tokens):
            raise ValueError("vocabulary token strings must be unique")

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __hash__(self):
        return hash(self.tokens)

    def id_of(self, token: str) -> int:
        return self._ids[token]

    def get_id(self, token: str, default: int | None = None) -> int | None:
        return self._ids.get(token, default)

    def token(self, token_id: int) -> str:
        return self.tokens[token_id]

    def decode(self, ids: Iterable[int]) -> str:
        return "".join(self.tokens[i] for i in ids)

    def save(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("# codemark vocab v1\n")
            for tok in self.tokens:
                fh.write(tok.encode("unicode_escape").decode("ascii") + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        toks = []
        with open(path, "r", encoding="ascii") as fh:
            for line in fh:
                if line.startswith("#"):
                    continue
                toks.append(line.rstrip("\n").encode("ascii").decode("unicode_escape"))
        return cls(toks)


@dataclass(frozen=True)
class WatermarkMessage:
    """The payload: a non-negative integer below 2^bits."""

    value: int
    bits: int = DEFAULT_BITS

    def __post_init__(self):
        if not 1 <= self.bits <= MAX_BITS:
            raise ValueError(f"bits must be in [1, {MAX_BITS}]")
        if not 0 <= self.value < (1 << self.bits):
            raise OverflowsWidth(
                f"message {self.value} does not fit {self.bits} bits"
            )


@dataclass(frozen=True)
class WatermarkKey:
    """128-bit secret seeding the selection mixer."""

    key: int

    def __post_init__(self):
        if not 0 <= self.key < (1 << 128):
            raise ValueError("key must be a 128-bit non-negative integer")

    @classmethod
    def from_hex(cls, text: str) -> "WatermarkKey":
        return cls(int(text, 16))

    @property
    def hex(self) -> str:
        return f"{self.key:032x}"

    @property
    def fold(self) -> int:
        return key_fold(self.key)

    @property
    def sentinel_prev(self) -> int:
        """Stand-in previous-token value for generation position 0.

        A pure function of the key, so insertion and extraction agree on
        how the first emitted token is scored.
        """
        return absorb(self.fold, _SENTINEL_TAG)


@dataclass(frozen=True)
class WatermarkConfig:
    """Weights and identity of the watermark being inserted."""

    message: WatermarkMessage
    key: WatermarkKey
    beta: float = PRESETS["default"][0]
    gamma: float = PRESETS["default"][1]
    green_fraction: float = 0.5

    def __post_init__(self):
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("beta and gamma must be non-negative")
        if not 0.0 < self.green_fraction < 1.0:
            raise ValueError("green_fraction must be in (0, 1)")


@dataclass(frozen=True)
class GenerationParams:
    max_new_tokens: int = 200
    temperature: float = 0.75
    repetition_penalty: float = 1.2
    no_repeat_ngram: int = 10
    sampling_mode: str = "greedy"

    def __post_init__(self):
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.repetition_penalty < 1.0:
            raise ValueError("repetition_penalty must be >= 1")
        if self.no_repeat_ngram < 0:
            raise ValueError("no_repeat_ngram must be >= 0")
        if self.sampling_mode not in ("greedy", "multinomial"):
            raise ValueError("sampling_mode must be greedy or multinomial")


@dataclass
class GenerationContext:
    """Prompt ids plus the ids generated so far in a decoding session."""

    prompt_ids: tuple[int, ...]
    generated_ids: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.prompt_ids = tuple(self.prompt_ids)
        if not self.prompt_ids:
            raise EmptyPrompt("prompt must contain at least one token id")

    def full_ids(self) -> list[int]:
        return list(self.prompt_ids) + list(self.generated_ids)

    def validate_against(self, vocab_size: int) -> None:
        for i in self.full_ids():
            if not 0 <= i < vocab_size:
                raise VocabMismatch(f"token id {i} outside vocabulary of {vocab_size}")


# A logit vector is a plain float64 ndarray of length |V|; decoders may
# set entries to -inf when masking.
LogitVector = np.ndarray


def check_logits(vec: np.ndarray, vocab_size: int) -> np.ndarray:
    if vec.shape != (vocab_size,):
        raise VocabMismatch(
            f"logit vector of length {vec.shape} != vocabulary size {vocab_size}"
        )
    return vec


def encode_message(text: str, bits: int = DEFAULT_BITS) -> WatermarkMessage:
    """Concatenate the decimal ASCII codes of the text and read an integer.

    "GPT" -> 71 || 80 || 84 -> 718084.
    """
    if not text:
        raise ValueError("message text must be non-empty")
    for ch in text:
        if not 32 <= ord(ch) <= 126:
            raise ValueError(f"non-printable-ASCII character {ch!r} in message text")
    value = int("".join(str(ord(ch)) for ch in text))
    if value >= (1 << bits):
        raise OverflowsWidth(
            f"{text!r} encodes to {value}, which needs {value.bit_length()} bits "
            f"but only {bits} are available"
        )
    return WatermarkMessage(value, bits)


def decode_message(message: WatermarkMessage | int) -> str:
    """Invert encode_message via a greedy 2-then-3-digit split.

    Two-digit groups cover codes 32..99 and three-digit groups 100..126;
    no three-digit code starts with a valid two-digit group, so the greedy
    split is unambiguous. Values that do not split fall back to their
    decimal rendering.
    """
    value = message.value if isinstance(message, WatermarkMessage) else message
    digits = str(value)
    chars = []
    i = 0
    while i < len(digits):
        if i + 2 <= len(digits) and 32 <= int(digits[i : i + 2]) <= 99:
            chars.append(chr(int(digits[i : i + 2])))
            i += 2
        elif i + 3 <= len(digits) and 100 <= int(digits[i : i + 3]) <= 126:
            chars.append(chr(int(digits[i : i + 3])))
            i += 3
        else:
            return digits
    return "".join(chars)


def substream(seed: int, label: str) -> np.random.Generator:
    """Named, reproducible RNG substream derived from one master seed."""
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest[:16], "little")))


def load_config(path) -> dict[str, str]:
    """Read the key-value config format: one `key = value` per line.

    Blank lines and lines starting with '#' are ignored. Keys mirror the
    CLI flag names with underscores (beta, gamma, bits, message,
    message_text, key, green_fraction, max_new_tokens, temperature,
    repetition_penalty, no_repeat_ngram, sampling_mode, seed). CLI flags
    override config values.
    """
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out
