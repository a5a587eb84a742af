"""Next-lexical-type prediction and the type-predictor logit.

The predictor is a single-layer LSTM (embedding 64, hidden 128)
implemented directly in numpy with manual backpropagation through time,
trained on sliding windows of token-type sequences. Contexts shorter
than the window are left-padded with a reserved pad symbol at inference.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import CorpusTooSmall, GenerationContext, Vocabulary, substream
from .lexing import (
    LexTokenType,
    LexTypeSequence,
    Lexer,
    N_TYPES,
    TypeVocabMap,
)

PAD_ID = N_TYPES  # reserved pad symbol, one past the last real type
_N_SYMBOLS = N_TYPES + 1
_MAGIC = b"CMTP"
_FORMAT_VERSION = 1


@dataclass
class PredictorTrainingConfig:
    corpus: Sequence[str]
    context_window: int = 32
    embed_dim: int = 64
    hidden_dim: int = 128
    epochs: int = 8
    learning_rate: float = 8e-3
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.context_window < 1:
            raise ValueError("context_window must be >= 1")
        if not self.corpus:
            raise CorpusTooSmall("corpus must be non-empty")


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class TypePredictor:
    """Sequence classifier from the last n token types to the next type."""

    def __init__(self, params: dict[str, np.ndarray], n: int, lexer_name: str,
                 accuracy: float | None = None, seed: int | None = None):
        self.params = params
        self.n = n
        self.lexer_name = lexer_name
        self.accuracy = accuracy
        self.seed = seed

    @property
    def embed_dim(self) -> int:
        return self.params["emb"].shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.params["wh"].shape[0]

    def _forward(self, xb: np.ndarray) -> np.ndarray:
        p = self.params
        B, n = xb.shape
        H = self.hidden_dim
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        for t in range(n):
            a = p["emb"][xb[:, t]] @ p["wx"] + h @ p["wh"] + p["b"]
            i = _sigmoid(a[:, :H])
            f = _sigmoid(a[:, H : 2 * H])
            g = np.tanh(a[:, 2 * H : 3 * H])
            o = _sigmoid(a[:, 3 * H :])
            c = f * c + i * g
            h = o * np.tanh(c)
        return h @ p["wo"] + p["bo"]

    def batch_scores(self, contexts: np.ndarray) -> np.ndarray:
        return _softmax(self._forward(contexts))

    def scores(self, types: LexTypeSequence | Sequence[int]) -> np.ndarray:
        ids = types.ids() if isinstance(types, LexTypeSequence) else [int(t) for t in types]
        window = ids[-self.n :]
        window = [PAD_ID] * (self.n - len(window)) + window
        return self.batch_scores(np.array([window], dtype=np.int64))[0]

    def predict(self, types) -> tuple[LexTokenType, np.ndarray]:
        probs = self.scores(types)
        return LexTokenType(int(np.argmax(probs))), probs

    def save(self, path) -> None:
        header = {
            "lexer": self.lexer_name,
            "n": self.n,
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "accuracy": self.accuracy,
            "seed": self.seed,
        }
        raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<HI", _FORMAT_VERSION, len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", len(self.params)))
            for name in sorted(self.params):
                arr = np.ascontiguousarray(self.params[name], dtype="<f8")
                nm = name.encode("ascii")
                fh.write(struct.pack("<H", len(nm)) + nm)
                fh.write(struct.pack("<B", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                fh.write(arr.tobytes())

    @classmethod
    def load(cls, path) -> "TypePredictor":
        with open(path, "rb") as fh:
            if fh.read(4) != _MAGIC:
                raise ValueError("not a type-predictor file")
            version, hlen = struct.unpack("<HI", fh.read(6))
            if version != _FORMAT_VERSION:
                raise ValueError(f"unsupported predictor format version {version}")
            header = json.loads(fh.read(hlen).decode("utf-8"))
            (n_arrays,) = struct.unpack("<B", fh.read(1))
            params = {}
            for _ in range(n_arrays):
                (nlen,) = struct.unpack("<H", fh.read(2))
                name = fh.read(nlen).decode("ascii")
                (ndim,) = struct.unpack("<B", fh.read(1))
                shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
                data = fh.read(8 * int(np.prod(shape)))
                params[name] = np.frombuffer(data, dtype="<f8").reshape(shape).copy()
        return cls(
            params,
            header["n"],
            header["lexer"],
            accuracy=header.get("accuracy"),
            seed=header.get("seed"),
        )


def _init_params(cfg: PredictorTrainingConfig) -> dict[str, np.ndarray]:
    rng = substream(cfg.seed, "typepred-init")
    De, H = cfg.embed_dim, cfg.hidden_dim
    params = {
        "emb": rng.normal(0.0, 0.1, (_N_SYMBOLS, De)),
        "wx": rng.normal(0.0, 0.1, (De, 4 * H)),
        "wh": rng.normal(0.0, 0.1, (H, 4 * H)),
        "b": np.zeros(4 * H),
        "wo": rng.normal(0.0, 0.1, (H, N_TYPES)),
        "bo": np.zeros(N_TYPES),
    }
    params["b"][H : 2 * H] = 1.0  # forget-gate bias
    return params


def _loss_and_grads(params, xb, yb):
    De = params["emb"].shape[1]
    H = params["wh"].shape[0]
    B, n = xb.shape
    hs = [np.zeros((B, H))]
    cs = [np.zeros((B, H))]
    gates = []
    for t in range(n):
        a = params["emb"][xb[:, t]] @ params["wx"] + hs[-1] @ params["wh"] + params["b"]
        i = _sigmoid(a[:, :H])
        f = _sigmoid(a[:, H : 2 * H])
        g = np.tanh(a[:, 2 * H : 3 * H])
        o = _sigmoid(a[:, 3 * H :])
        c = f * cs[-1] + i * g
        h = o * np.tanh(c)
        gates.append((i, f, g, o))
        cs.append(c)
        hs.append(h)
    logits = hs[-1] @ params["wo"] + params["bo"]
    probs = _softmax(logits)
    loss = -np.mean(np.log(probs[np.arange(B), yb] + 1e-300))

    grads = {k: np.zeros_like(v) for k, v in params.items()}
    dlogits = probs.copy()
    dlogits[np.arange(B), yb] -= 1.0
    dlogits /= B
    grads["wo"] = hs[-1].T @ dlogits
    grads["bo"] = dlogits.sum(axis=0)
    dh = dlogits @ params["wo"].T
    dc = np.zeros((B, H))
    for t in range(n - 1, -1, -1):
        i, f, g, o = gates[t]
        tc = np.tanh(cs[t + 1])
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * cs[t]
        da = np.concatenate(
            [
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ],
            axis=1,
        )
        emb_t = params["emb"][xb[:, t]]
        grads["wx"] += emb_t.T @ da
        grads["wh"] += hs[t].T @ da
        grads["b"] += da.sum(axis=0)
        np.add.at(grads["emb"], xb[:, t], da @ params["wx"].T)
        dh = da @ params["wh"].T
        dc = dc * f
    return loss, grads


def _windows_from_sequences(seqs: list[list[int]], n: int):
    xs, ys = [], []
    for seq in seqs:
        for i in range(n, len(seq)):
            xs.append(seq[i - n : i])
            ys.append(seq[i])
    if not xs:
        # Every sequence fits inside one window: fall back to padded
        # contexts so tiny corpora stay trainable.
        for seq in seqs:
            for i in range(1, len(seq)):
                ctx = seq[max(0, i - n) : i]
                xs.append([PAD_ID] * (n - len(ctx)) + ctx)
                ys.append(seq[i])
    if not xs:
        raise CorpusTooSmall("corpus produced no training windows")
    return np.array(xs, dtype=np.int64), np.array(ys, dtype=np.int64)


def train_predictor(cfg: PredictorTrainingConfig, lexer: Lexer) -> TypePredictor:
    """Train on the corpus and report held-out next-type accuracy.

    Every 5th window is held out; training is fully seeded, so the same
    configuration always yields identical weights.
    """
    seqs = [lexer.tokenize(text).ids() for text in cfg.corpus]
    total = sum(len(s) for s in seqs)
    if total < 10 * cfg.context_window:
        raise CorpusTooSmall(
            f"corpus lexes to {total} lexemes; need at least {10 * cfg.context_window}"
        )
    xs, ys = _windows_from_sequences(seqs, cfg.context_window)
    idx = np.arange(len(xs))
    held = idx % 5 == 4
    tr_x, tr_y = xs[~held], ys[~held]
    ev_x, ev_y = xs[held], ys[held]
    if len(tr_x) == 0 or len(ev_x) == 0:
        raise CorpusTooSmall("not enough windows for a train/held-out split")

    params = _init_params(cfg)
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(v_) for k, v_ in params.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0
    for epoch in range(cfg.epochs):
        order = substream(cfg.seed, f"typepred-shuffle-{epoch}").permutation(len(tr_x))
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            _, grads = _loss_and_grads(params, tr_x[batch], tr_y[batch])
            step += 1
            for k in params:
                m[k] = beta1 * m[k] + (1 - beta1) * grads[k]
                v[k] = beta2 * v[k] + (1 - beta2) * grads[k] ** 2
                mh = m[k] / (1 - beta1**step)
                vh = v[k] / (1 - beta2**step)
                params[k] -= cfg.learning_rate * mh / (np.sqrt(vh) + eps)

    pred = TypePredictor(params, cfg.context_window, lexer.name, seed=cfg.seed)
    correct = 0
    for lo in range(0, len(ev_x), 512):
        probs = pred.batch_scores(ev_x[lo : lo + 512])
        correct += int(np.sum(np.argmax(probs, axis=1) == ev_y[lo : lo + 512]))
    pred.accuracy = correct / len(ev_x)
    return pred


def predict_next_type(
    pred: TypePredictor, types: LexTypeSequence | Sequence[int]
) -> tuple[LexTokenType, np.ndarray]:
    return pred.predict(types)


def tp_logits(
    pred: TypePredictor,
    ctx: GenerationContext,
    lexer: Lexer,
    type_map: TypeVocabMap,
    vocab: Vocabulary,
    continuation_allowance: bool = True,
    graded: bool = False,
) -> tuple[np.ndarray, LexTokenType, LexTokenType | None]:
    """Indicator over tokens of the predicted next lexical type.

    When the re-lexed prefix ends mid-lexeme, tokens whose standalone type
    matches the in-progress lexeme's type are also allowed, so a split
    lexeme can be finished even if the predictor already looks one lexeme
    ahead. graded=True replaces the indicator with per-type predicted
    probabilities (non-default).
    """
    text = vocab.decode(ctx.full_ids())
    seq = lexer.tokenize(text)
    tau, probs = pred.predict(seq)
    if graded:
        vec = probs[type_map.types_array()].astype(np.float64)
    else:
        vec = type_map.indicator(tau)
    partial_type = None
    if continuation_allowance and seq.trailing_partial and len(seq.types):
        partial_type = seq.types[-1]
        vec[type_map.ids_array(partial_type)] = 1.0
    return vec, tau, partial_type


@dataclass
class TypeGuide:
    """Bundle of predictor, type map, and lexer used by the decoder."""

    predictor: TypePredictor
    type_map: TypeVocabMap
    lexer: Lexer
    continuation_allowance: bool = True
    graded: bool = False

    def logits(self, ctx: GenerationContext, vocab: Vocabulary):
        return tp_logits(
            self.predictor,
            ctx,
            self.lexer,
            self.type_map,
            vocab,
            self.continuation_allowance,
            self.graded,
        )
