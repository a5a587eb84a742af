"""Pluggable autoregressive logit sources.

NgramLM is the built-in deterministic source for desk-scale work: an
interpolated n-gram model over lexer lexemes (or over character pairs,
which recreates the subword/lexeme mismatch on purpose). ExternalProvider
speaks a line-delimited JSON protocol to any peer that can hand over
next-token logits, e.g. a real causal LM behind the bridge.
"""
from __future__ import annotations

import base64
import json
import shlex
import socket
import struct
import subprocess
from typing import Protocol, Sequence

import numpy as np

from .core import (
    CorpusTooSmall,
    GenerationContext,
    PeerExit,
    ProtocolError,
    VocabMismatch,
    Vocabulary,
)
from .lexing import Lexer

_MAGIC = b"CMNG"
_FORMAT_VERSION = 1
UNK_TOKEN = "<unk>"
DEFAULT_WEIGHTS = {1: (1.0,), 2: (0.15, 0.85), 3: (0.05, 0.25, 0.70)}


class LogitSource(Protocol):
    eos_id: int | None

    def vocabulary(self) -> Vocabulary: ...

    def next_logits(self, ctx: GenerationContext) -> np.ndarray: ...


def lexeme_tokens(lexer: Lexer, text: str) -> list[str]:
    return [l.text for l in lexer.lexemes(text)]


def lexeme_ws_tokens(lexer: Lexer, text: str) -> list[str]:
    """Lexeme spans with whitespace runs glued onto the preceding lexeme.

    Mirrors the space-carrying convention of subword vocabularies and
    roughly doubles bigram diversity versus standalone whitespace tokens,
    which matters for extraction at short lengths. Classification still
    sees the content lexeme first, so the type map stays meaningful.
    """
    from .lexing import LexTokenType

    out: list[str] = []
    for lx in lexer.lexemes(text):
        if lx.type == LexTokenType.TEXT and out:
            out[-1] += lx.text
        else:
            out.append(lx.text)
    return out


def char_pair_tokens(text: str) -> list[str]:
    return [text[i : i + 2] for i in range(0, len(text), 2)]


TOKENIZERS = ("lexeme", "lexeme_ws", "char_pair")


class NgramLM:
    """Interpolated n-gram model with a probability floor.

    Conditional probability is a weighted mix of the relative frequencies
    of orders 1..k; weights of orders whose context was never observed are
    dropped and the rest renormalized, so a fully unseen context backs off
    to the unigram distribution exactly.
    """

    eos_id = None

    def __init__(
        self,
        vocab: Vocabulary,
        counts: list[dict[tuple[int, ...], dict[int, int]]],
        order: int,
        weights: Sequence[float],
        eps: float = 1e-6,
        tokenizer: str = "lexeme",
        lexer_name: str = "mini",
        scale: float = 1.0,
    ):
        if len(weights) != order:
            raise ValueError("need one interpolation weight per order")
        if scale <= 0:
            raise ValueError("scale must be positive")
        self.vocab = vocab
        self.order = order
        self.weights = tuple(float(w) for w in weights)
        self.eps = float(eps)
        self.tokenizer = tokenizer
        self.lexer_name = lexer_name
        self.scale = float(scale)
        self.counts = counts
        self._dist: list[dict[tuple[int, ...], tuple[np.ndarray, np.ndarray]]] = []
        for table in counts:
            dist = {}
            for ctx, succ in table.items():
                ids = np.fromiter(sorted(succ), dtype=np.int64, count=len(succ))
                vals = np.array([succ[i] for i in ids], dtype=np.float64)
                dist[ctx] = (ids, vals / vals.sum())
            self._dist.append(dist)
        ids, probs = self._dist[0][()]
        self._unigram = np.zeros(vocab.size, dtype=np.float64)
        self._unigram[ids] = probs

    def vocabulary(self) -> Vocabulary:
        return self.vocab

    def next_logits(self, ctx: GenerationContext) -> np.ndarray:
        history = ctx.full_ids()
        parts: list[tuple[float, tuple[np.ndarray, np.ndarray] | None]] = [
            (self.weights[0], None)
        ]
        for j in range(2, self.order + 1):
            if len(history) < j - 1:
                continue
            key = tuple(history[len(history) - (j - 1) :])
            entry = self._dist[j - 1].get(key)
            if entry is not None:
                parts.append((self.weights[j - 1], entry))
        wsum = sum(w for w, _ in parts)
        p = self._unigram * (parts[0][0] / wsum)
        for w, entry in parts[1:]:
            ids, probs = entry
            p[ids] += (w / wsum) * probs
        np.maximum(p, self.eps, out=p)
        return self.scale * np.log(p)

    def tokens_of(self, lexer: Lexer, text: str) -> list[str]:
        if self.tokenizer == "char_pair":
            return char_pair_tokens(text)
        if self.tokenizer == "lexeme_ws":
            return lexeme_ws_tokens(lexer, text)
        return lexeme_tokens(lexer, text)

    def encode_text(self, lexer: Lexer, text: str) -> list[int]:
        """Map text to token ids, sending unknown lexemes to <unk>."""
        unk = self.vocab.id_of(UNK_TOKEN)
        return [self.vocab.get_id(t, unk) for t in self.tokens_of(lexer, text)]

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<HBB", _FORMAT_VERSION, self.order, len(self.weights)))
            fh.write(struct.pack(f"<{len(self.weights)}d", *self.weights))
            fh.write(struct.pack("<dd", self.eps, self.scale))
            for text in (self.tokenizer, self.lexer_name):
                raw = text.encode("utf-8")
                fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<I", self.vocab.size))
            for tok in self.vocab.tokens:
                raw = tok.encode("utf-8")
                fh.write(struct.pack("<H", len(raw)) + raw)
            for j, table in enumerate(self.counts, start=1):
                fh.write(struct.pack("<Q", len(table)))
                for ctx in sorted(table):
                    succ = table[ctx]
                    fh.write(struct.pack(f"<B{len(ctx)}I", len(ctx), *ctx))
                    fh.write(struct.pack("<I", len(succ)))
                    for tok_id in sorted(succ):
                        fh.write(struct.pack("<IQ", tok_id, succ[tok_id]))

    @classmethod
    def load(cls, path) -> "NgramLM":
        with open(path, "rb") as fh:
            if fh.read(4) != _MAGIC:
                raise ValueError("not an NgramLM model file")
            version, order, n_weights = struct.unpack("<HBB", fh.read(4))
            if version != _FORMAT_VERSION:
                raise ValueError(f"unsupported NgramLM format version {version}")
            weights = struct.unpack(f"<{n_weights}d", fh.read(8 * n_weights))
            eps, scale = struct.unpack("<dd", fh.read(16))
            texts = []
            for _ in range(2):
                (n,) = struct.unpack("<H", fh.read(2))
                texts.append(fh.read(n).decode("utf-8"))
            tokenizer, lexer_name = texts
            (vsize,) = struct.unpack("<I", fh.read(4))
            tokens = []
            for _ in range(vsize):
                (n,) = struct.unpack("<H", fh.read(2))
                tokens.append(fh.read(n).decode("utf-8"))
            counts: list[dict[tuple[int, ...], dict[int, int]]] = []
            for _ in range(order):
                (n_ctx,) = struct.unpack("<Q", fh.read(8))
                table: dict[tuple[int, ...], dict[int, int]] = {}
                for _ in range(n_ctx):
                    (clen,) = struct.unpack("<B", fh.read(1))
                    ctx = struct.unpack(f"<{clen}I", fh.read(4 * clen)) if clen else ()
                    (n_succ,) = struct.unpack("<I", fh.read(4))
                    succ = {}
                    for _ in range(n_succ):
                        tok_id, cnt = struct.unpack("<IQ", fh.read(12))
                        succ[tok_id] = cnt
                    table[tuple(ctx)] = succ
                counts.append(table)
        return cls(
            Vocabulary(tokens), counts, order, weights, eps, tokenizer, lexer_name, scale
        )


def train_ngram(
    corpus_texts: Sequence[str],
    lexer: Lexer,
    order: int = 3,
    weights: Sequence[float] | None = None,
    eps: float = 1e-6,
    tokenizer: str = "lexeme",
    scale: float = 1.0,
) -> NgramLM:
    """Count-train an NgramLM; deterministic for a fixed corpus."""
    if tokenizer not in TOKENIZERS:
        raise ValueError(f"tokenizer must be one of {TOKENIZERS}")
    streams = []
    for text in corpus_texts:
        if tokenizer == "char_pair":
            toks = char_pair_tokens(text)
        elif tokenizer == "lexeme_ws":
            toks = lexeme_ws_tokens(lexer, text)
        else:
            toks = lexeme_tokens(lexer, text)
        if toks:
            streams.append(toks)
    total = sum(len(s) for s in streams)
    if total < order + 1:
        raise CorpusTooSmall(
            f"corpus tokenizes to {total} tokens; need at least {order + 1}"
        )
    token_set = {t for s in streams for t in s}
    token_set.add(UNK_TOKEN)
    vocab = Vocabulary(sorted(token_set))
    id_streams = [[vocab.id_of(t) for t in s] for s in streams]
    counts: list[dict[tuple[int, ...], dict[int, int]]] = [
        {} for _ in range(order)
    ]
    for stream in id_streams:
        for i, tok in enumerate(stream):
            for j in range(1, order + 1):
                if i < j - 1:
                    continue
                ctx = tuple(stream[i - (j - 1) : i])
                table = counts[j - 1].setdefault(ctx, {})
                table[tok] = table.get(tok, 0) + 1
    if weights is None:
        weights = DEFAULT_WEIGHTS.get(order) or tuple(
            [0.05] * (order - 1) + [1.0 - 0.05 * (order - 1)]
        )
    return NgramLM(vocab, counts, order, weights, eps, tokenizer, lexer.name, scale)


def greedy_encode(vocab: Vocabulary, text: str) -> list[int]:
    """Longest-prefix-match tokenization against an arbitrary vocabulary.

    Used when the tokenizer lives on the other side of the wire and all
    we hold is its token inventory.
    """
    by_first: dict[str, list[str]] = {}
    for tok in vocab.tokens:
        if tok:
            by_first.setdefault(tok[0], []).append(tok)
    for toks in by_first.values():
        toks.sort(key=len, reverse=True)
    out = []
    pos = 0
    while pos < len(text):
        for tok in by_first.get(text[pos], ()):
            if text.startswith(tok, pos):
                out.append(vocab.id_of(tok))
                pos += len(tok)
                break
        else:
            raise VocabMismatch(
                f"character {text[pos]!r} at offset {pos} is not representable "
                "in the provider vocabulary"
            )
    return out


def _frame(fh, payload: dict) -> None:
    fh.write(json.dumps(payload, separators=(",", ":")) + "\n")
    fh.flush()


class ExternalProvider:
    """LogitSource speaking the line-delimited JSON wire protocol.

    Handshake: {"op":"vocab"} -> {"tokens":[...]} (optional "eos_id").
    Step: {"op":"logits","prompt_ids":[...],"generated_ids":[...]}
          -> {"logits":[...]} or {"logits_b64": "<base64 LE f32>"}.
    One connection serves one generation session at a time.
    """

    def __init__(self, reader, writer, closer=None):
        self._reader = reader
        self._writer = writer
        self._closer = closer
        self.eos_id: int | None = None
        reply = self._roundtrip({"op": "vocab"})
        tokens = reply.get("tokens")
        if not isinstance(tokens, list) or not tokens:
            raise ProtocolError("vocab reply missing 'tokens'")
        self._vocab = Vocabulary(tokens)
        if isinstance(reply.get("eos_id"), int):
            self.eos_id = reply["eos_id"]

    @classmethod
    def from_command(cls, command: str | Sequence[str]) -> "ExternalProvider":
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )

        def close():
            try:
                proc.stdin.close()
            except OSError:
                pass
            proc.wait(timeout=10)

        return cls(proc.stdout, proc.stdin, close)

    @classmethod
    def from_address(cls, address: str) -> "ExternalProvider":
        host, _, port = address.rpartition(":")
        sock = socket.create_connection((host or "127.0.0.1", int(port)))
        fh = sock.makefile("rw", encoding="utf-8", newline="\n")
        return cls(fh, fh, sock.close)

    def _roundtrip(self, payload: dict) -> dict:
        try:
            _frame(self._writer, payload)
        except (BrokenPipeError, ValueError, OSError) as exc:
            raise PeerExit(f"provider stream closed: {exc}") from exc
        line = self._reader.readline()
        if not line:
            raise PeerExit("provider closed the stream")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"malformed frame from provider: {line!r}") from exc
        if not isinstance(reply, dict):
            raise ProtocolError("provider frame is not an object")
        if "error" in reply:
            raise ProtocolError(f"provider error: {reply['error']}")
        return reply

    def vocabulary(self) -> Vocabulary:
        return self._vocab

    def next_logits(self, ctx: GenerationContext) -> np.ndarray:
        reply = self._roundtrip(
            {
                "op": "logits",
                "prompt_ids": list(ctx.prompt_ids),
                "generated_ids": list(ctx.generated_ids),
            }
        )
        if "logits_b64" in reply:
            raw = base64.b64decode(reply["logits_b64"])
            vec = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        elif "logits" in reply:
            vec = np.asarray(reply["logits"], dtype=np.float64)
        else:
            raise ProtocolError("logits reply missing 'logits'/'logits_b64'")
        if vec.shape != (self._vocab.size,):
            raise VocabMismatch(
                f"provider sent {vec.shape[0] if vec.ndim else 0} logits "
                f"for a vocabulary of {self._vocab.size}"
            )
        return vec

    def close(self) -> None:
        if self._closer is not None:
            self._closer()
            self._closer = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
