"""Lexical analysis into token-type sequences and the type->vocab map.

The bundled lexer covers a small imperative language (keywords def/if/
else/for/in/while/return, identifiers, integer and double-quoted string
literals, operators, punctuation, #-comments). Whitespace runs are
emitted as Text lexemes so that coverage is total: concatenating lexeme
spans always reconstructs the input.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Protocol, Sequence

import numpy as np

from .core import Vocabulary


class LexTokenType(IntEnum):
    TOKEN = 0
    COMMENT = 1
    ERROR = 2
    ESCAPE = 3
    GENERIC = 4
    KEYWORD = 5
    LITERAL = 6
    NAME = 7
    OPERATOR = 8
    OTHER = 9
    PUNCTUATION = 10
    TEXT = 11


N_TYPES = 12


@dataclass(frozen=True)
class Lexeme:
    text: str
    type: LexTokenType


@dataclass(frozen=True)
class LexTypeSequence:
    """Token types of a source prefix, with a flag for a cut-off tail.

    trailing_partial is set when the source ends mid-lexeme: the final
    character run is a prefix of a longer valid lexeme (an identifier or
    number that more characters could extend, an unterminated string, a
    comment with no newline yet, or an operator prefix).
    """

    types: tuple[LexTokenType, ...]
    trailing_partial: bool = False

    def __len__(self) -> int:
        return len(self.types)

    def __iter__(self):
        return iter(self.types)

    def ids(self) -> list[int]:
        return [int(t) for t in self.types]


class Lexer(Protocol):
    name: str

    def lexemes(self, text: str) -> list[Lexeme]: ...

    def tokenize(self, text: str) -> LexTypeSequence: ...

    def classify_standalone(self, token: str) -> LexTokenType: ...


_KEYWORDS = frozenset({"def", "if", "else", "for", "in", "while", "return"})

# Grammar table. Alternation order implements maximal munch: closed
# strings beat the unterminated-string rule, words swallow digits after
# the first letter, two-char operators beat their one-char prefixes.
# '*' is deliberately in the punctuation class alongside brackets and
# separators; '%' and comparison/arithmetic glyphs are operators.
_TOKEN_RE = re.compile(
    r"""(?P<COMMENT>\#[^\n]*)
       |(?P<STRING>"(?:[^"\\\n]|\\.)*")
       |(?P<STRPART>"(?:[^"\\\n]|\\.)*\\?)
       |(?P<NUMBER>\d+)
       |(?P<WORD>[A-Za-z_][A-Za-z0-9_]*)
       |(?P<ESCAPE>\\(?:.|\n))
       |(?P<OP>==|!=|<=|>=|[+\-/%=<>])
       |(?P<PUNCT>[()\[\]{}.,:;*])
       |(?P<WS>[ \t\r\n]+)
       |(?P<JUNK>.)
    """,
    re.VERBOSE | re.DOTALL,
)

_GROUP_TYPE = {
    "COMMENT": LexTokenType.COMMENT,
    "STRING": LexTokenType.LITERAL,
    "STRPART": LexTokenType.ERROR,
    "NUMBER": LexTokenType.LITERAL,
    "ESCAPE": LexTokenType.ESCAPE,
    "OP": LexTokenType.OPERATOR,
    "PUNCT": LexTokenType.PUNCTUATION,
    "WS": LexTokenType.TEXT,
    "JUNK": LexTokenType.ERROR,
}

# One-char lexemes that are proper prefixes of a longer valid lexeme.
_EXTENSIBLE_OPS = frozenset({"=", "<", ">"})
_EXTENSIBLE_JUNK = frozenset({"!", "\\"})

_IDENT_FRAGMENT_RE = re.compile(r"[A-Za-z0-9_]+")


class MiniLexer:
    """Deterministic lexer for the bundled mini-language."""

    name = "mini"

    def lexemes(self, text: str) -> list[Lexeme]:
        out: list[Lexeme] = []
        for mo in _TOKEN_RE.finditer(text):
            group = mo.lastgroup
            span = mo.group()
            if group == "WORD":
                ltype = (
                    LexTokenType.KEYWORD if span in _KEYWORDS else LexTokenType.NAME
                )
            else:
                ltype = _GROUP_TYPE[group]
            out.append(Lexeme(span, ltype))
        return out

    def tokenize(self, text: str) -> LexTypeSequence:
        lexs = self.lexemes(text)
        return LexTypeSequence(
            tuple(l.type for l in lexs),
            trailing_partial=self._ends_mid_lexeme(lexs),
        )

    @staticmethod
    def _ends_mid_lexeme(lexs: list[Lexeme]) -> bool:
        if not lexs:
            return False
        last = lexs[-1]
        if last.type in (LexTokenType.KEYWORD, LexTokenType.NAME):
            return True
        if last.type == LexTokenType.LITERAL:
            return last.text[0] != '"' or len(last.text) < 2
        if last.type == LexTokenType.COMMENT:
            return True
        if last.type == LexTokenType.OPERATOR:
            return last.text in _EXTENSIBLE_OPS
        if last.type == LexTokenType.ERROR:
            return last.text.startswith('"') or last.text in _EXTENSIBLE_JUNK
        return False

    def classify_standalone(self, token: str) -> LexTokenType:
        lexs = self.lexemes(token)
        if lexs:
            # Single lexeme: its type. Multi-lexeme: the first one's type.
            return lexs[0].type
        if _IDENT_FRAGMENT_RE.fullmatch(token):
            return LexTokenType.NAME
        if token != "" and token.isspace():
            return LexTokenType.TEXT
        return LexTokenType.OTHER


_MINI = MiniLexer()


def minilang_lexer() -> MiniLexer:
    return _MINI


class TypeVocabMap:
    """Partition of the vocabulary by lexical token type (the map Phi)."""

    def __init__(self, sets: dict[LexTokenType, Iterable[int]], vocab_size: int, lexer_name: str = "mini"):
        self.vocab_size = vocab_size
        self.lexer_name = lexer_name
        self._sets = {t: frozenset(sets.get(t, ())) for t in LexTokenType}
        seen: set[int] = set()
        for ids in self._sets.values():
            if seen & ids:
                raise ValueError("type sets must be disjoint")
            seen |= ids
        if seen != set(range(vocab_size)):
            raise ValueError("type sets must cover every vocabulary id")
        self._arrays = {
            t: np.fromiter(sorted(ids), dtype=np.int64, count=len(ids))
            for t, ids in self._sets.items()
        }

    def ids(self, ltype: LexTokenType) -> frozenset[int]:
        return self._sets[ltype]

    def ids_array(self, ltype: LexTokenType) -> np.ndarray:
        return self._arrays[ltype]

    def type_of(self, token_id: int) -> LexTokenType:
        for t, ids in self._sets.items():
            if token_id in ids:
                return t
        raise KeyError(token_id)

    def indicator(self, ltype: LexTokenType) -> np.ndarray:
        vec = np.zeros(self.vocab_size, dtype=np.float64)
        vec[self._arrays[ltype]] = 1.0
        return vec

    def types_array(self) -> np.ndarray:
        """Per-token-id type index, shape (vocab_size,)."""
        arr = np.empty(self.vocab_size, dtype=np.int64)
        for t, ids in self._arrays.items():
            arr[ids] = int(t)
        return arr

    def save(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("# codemark type-map v1\n")
            fh.write(f"# lexer: {self.lexer_name}\n")
            fh.write(f"# vocab-size: {self.vocab_size}\n")
            for t in LexTokenType:
                ids = " ".join(str(i) for i in sorted(self._sets[t]))
                fh.write(f"{t.name.title()}: {ids}\n".rstrip() + "\n")

    @classmethod
    def load(cls, path) -> "TypeVocabMap":
        sets: dict[LexTokenType, list[int]] = {}
        vocab_size = None
        lexer_name = "mini"
        with open(path, "r", encoding="ascii") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line.startswith("# vocab-size:"):
                    vocab_size = int(line.split(":", 1)[1])
                    continue
                if line.startswith("# lexer:"):
                    lexer_name = line.split(":", 1)[1].strip()
                    continue
                if not line or line.startswith("#"):
                    continue
                name, _, rest = line.partition(":")
                ltype = LexTokenType[name.strip().upper()]
                sets[ltype] = [int(x) for x in rest.split()]
        if vocab_size is None:
            raise ValueError("type-map file missing vocab-size header")
        return cls(sets, vocab_size, lexer_name)


def build_type_map(vocab: Vocabulary, lexer: Lexer) -> TypeVocabMap:
    """Classify every vocabulary token standalone and partition the ids."""
    sets: dict[LexTokenType, list[int]] = {t: [] for t in LexTokenType}
    for token_id, token in enumerate(vocab.tokens):
        sets[lexer.classify_standalone(token)].append(token_id)
    return TypeVocabMap(sets, vocab.size, lexer.name)
