import pytest

from codemark.bundled import corpus_texts
from codemark.core import WatermarkKey
from codemark.evalkit import Pipeline, bundled_pipeline
from codemark.lexing import build_type_map, minilang_lexer
from codemark.lmsource import train_ngram
from codemark.typepred import PredictorTrainingConfig, train_predictor

DEMO_KEY_HEX = "000102030405060708090a0b0c0d0e0f"


@pytest.fixture(scope="session")
def lexer():
    return minilang_lexer()


@pytest.fixture(scope="session")
def corpus():
    return corpus_texts()


@pytest.fixture(scope="session")
def corpus_list(corpus):
    return list(corpus.values())


@pytest.fixture(scope="session")
def demo_key():
    return WatermarkKey.from_hex(DEMO_KEY_HEX)


@pytest.fixture(scope="session")
def ngram_lm(corpus_list, lexer):
    return train_ngram(corpus_list, lexer, tokenizer="lexeme_ws")


@pytest.fixture(scope="session")
def type_map(ngram_lm, lexer):
    return build_type_map(ngram_lm.vocab, lexer)


@pytest.fixture(scope="session")
def predictor(corpus_list, lexer):
    # One full training per session; reused by decode/eval/acceptance tests.
    return train_predictor(PredictorTrainingConfig(corpus=corpus_list, seed=0), lexer)


@pytest.fixture(scope="session")
def pipeline(ngram_lm, lexer, predictor, type_map):
    return Pipeline(ngram_lm, lexer, predictor, type_map)


@pytest.fixture(scope="session")
def toy_predictor(lexer):
    """Small, fast predictor for wiring tests that don't need accuracy."""
    text = "x = 1 + 2\nwhile x < 9:\n    x = x + 1\n" * 30
    cfg = PredictorTrainingConfig(
        corpus=[text], context_window=8, embed_dim=8, hidden_dim=12, epochs=2, seed=1
    )
    return train_predictor(cfg, lexer)
