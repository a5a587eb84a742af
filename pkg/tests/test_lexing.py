import pytest
from hypothesis import given, strategies as st

from codemark.core import Vocabulary
from codemark.lexing import (
    LexTokenType as T,
    TypeVocabMap,
    build_type_map,
    minilang_lexer,
)


@pytest.fixture(scope="module")
def lx():
    return minilang_lexer()


class TestTokenize:
    def test_figure_example(self, lx):
        seq = lx.tokenize("if i % 2 ==")
        assert list(seq) == [
            T.KEYWORD, T.TEXT, T.NAME, T.TEXT, T.OPERATOR, T.TEXT,
            T.LITERAL, T.TEXT, T.OPERATOR,
        ]

    def test_empty(self, lx):
        seq = lx.tokenize("")
        assert len(seq) == 0 and not seq.trailing_partial

    def test_identifier_prefix_sets_trailing_partial(self, lx):
        assert lx.tokenize("for i in ran").trailing_partial

    def test_assignment(self, lx):
        seq = lx.tokenize("x = 1")
        assert list(seq) == [T.NAME, T.TEXT, T.OPERATOR, T.TEXT, T.LITERAL]
        # a trailing integer could extend with more digits
        assert seq.trailing_partial

    def test_comment_then_newline(self, lx):
        assert list(lx.tokenize("# hi\n")) == [T.COMMENT, T.TEXT]
        assert not lx.tokenize("# hi\n").trailing_partial

    def test_comment_at_eof_is_extensible(self, lx):
        assert lx.tokenize("# hi").trailing_partial

    def test_unterminated_string(self, lx):
        seq = lx.tokenize('"ab')
        assert seq.types[-1] == T.ERROR
        assert seq.trailing_partial

    def test_closed_string_is_literal_and_complete(self, lx):
        seq = lx.tokenize('"ab"')
        assert list(seq) == [T.LITERAL]
        assert not seq.trailing_partial

    def test_operator_prefixes(self, lx):
        assert lx.tokenize("x =").trailing_partial
        assert not lx.tokenize("x ==").trailing_partial
        assert lx.tokenize("a <").trailing_partial

    def test_junk_is_error_not_crash(self, lx):
        seq = lx.tokenize("a @ b")
        assert T.ERROR in list(seq)

    def test_escape_lexeme(self, lx):
        assert list(lx.tokenize("\\n")) == [T.ESCAPE]

    def test_star_is_punctuation_percent_is_operator(self, lx):
        assert list(lx.tokenize("a*b")) == [T.NAME, T.PUNCTUATION, T.NAME]
        assert list(lx.tokenize("a%b")) == [T.NAME, T.OPERATOR, T.NAME]

    @given(st.text(max_size=120))
    def test_full_coverage(self, lx, text):
        spans = lx.lexemes(text)
        assert "".join(s.text for s in spans) == text

    @given(st.text(min_size=1, max_size=40))
    def test_idempotence_on_single_lexemes(self, lx, text):
        for span in lx.lexemes(text):
            again = lx.lexemes(span.text)
            assert again and again[0].type == span.type


class TestClassifyStandalone:
    @pytest.mark.parametrize("token", ["def", "if", "else", "for", "in", "while", "return"])
    def test_keywords(self, lx, token):
        assert lx.classify_standalone(token) == T.KEYWORD

    @pytest.mark.parametrize("token", ["(", ")", ";", "*"])
    def test_punctuation(self, lx, token):
        assert lx.classify_standalone(token) == T.PUNCTUATION

    def test_subword_fragment_is_name(self, lx):
        assert lx.classify_standalone("ran") == T.NAME
        assert lx.classify_standalone("ge") == T.NAME

    def test_multi_lexeme_takes_first(self, lx):
        assert lx.classify_standalone("def foo") == T.KEYWORD
        assert lx.classify_standalone("foo(") == T.NAME
        assert lx.classify_standalone(" def") == T.TEXT

    def test_whitespace_is_text(self, lx):
        assert lx.classify_standalone("  \n") == T.TEXT

    def test_empty_is_other(self, lx):
        assert lx.classify_standalone("") == T.OTHER


class TestTypeVocabMap:
    def test_partition(self, lx):
        vocab = Vocabulary(["def", "(", "x", " ", "1", '"s"', "# c", "==", "@", "ge "])
        tmap = build_type_map(vocab, lx)
        sizes = sum(len(tmap.ids(t)) for t in T)
        assert sizes == vocab.size
        all_ids = set()
        for t in T:
            ids = tmap.ids(t)
            assert not (all_ids & ids)
            all_ids |= ids
        assert all_ids == set(range(vocab.size))

    def test_expected_classes(self, lx):
        vocab = Vocabulary(["def", "(", "x", " ", "1", '"s"', "# c", "==", "@", "ge "])
        tmap = build_type_map(vocab, lx)
        assert vocab.id_of("def") in tmap.ids(T.KEYWORD)
        assert vocab.id_of("(") in tmap.ids(T.PUNCTUATION)
        assert vocab.id_of("x") in tmap.ids(T.NAME)
        assert vocab.id_of(" ") in tmap.ids(T.TEXT)
        assert vocab.id_of("1") in tmap.ids(T.LITERAL)
        assert vocab.id_of('"s"') in tmap.ids(T.LITERAL)
        assert vocab.id_of("# c") in tmap.ids(T.COMMENT)
        assert vocab.id_of("==") in tmap.ids(T.OPERATOR)
        assert vocab.id_of("@") in tmap.ids(T.ERROR)
        assert vocab.id_of("ge ") in tmap.ids(T.NAME)

    def test_save_load_round_trip(self, lx, tmp_path):
        vocab = Vocabulary(["def", "(", "x", " ", "1"])
        tmap = build_type_map(vocab, lx)
        path = tmp_path / "phi.txt"
        tmap.save(path)
        loaded = TypeVocabMap.load(path)
        for t in T:
            assert loaded.ids(t) == tmap.ids(t)
        assert loaded.vocab_size == tmap.vocab_size

    def test_indicator_and_types_array(self, lx):
        vocab = Vocabulary(["def", "(", "x", " ", "1"])
        tmap = build_type_map(vocab, lx)
        vec = tmap.indicator(T.NAME)
        assert vec.sum() == len(tmap.ids(T.NAME))
        arr = tmap.types_array()
        assert arr[vocab.id_of("def")] == int(T.KEYWORD)

    def test_bundle_partition_on_real_vocab(self, ngram_lm, type_map):
        assert sum(len(type_map.ids(t)) for t in T) == ngram_lm.vocab.size


def test_stable_type_encoding():
    names = [
        "TOKEN", "COMMENT", "ERROR", "ESCAPE", "GENERIC", "KEYWORD",
        "LITERAL", "NAME", "OPERATOR", "OTHER", "PUNCTUATION", "TEXT",
    ]
    assert [t.name for t in sorted(T)] == names
    assert [int(t) for t in sorted(T)] == list(range(12))
