import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spanrank.tokenizer import (
    A_END,
    A_START,
    SPECIAL_TOKENS,
    UNK,
    Vocab,
    build_vocab,
    decode,
    encode,
    span_surface,
    tokenize,
)


def test_tie_broken_lexicographically():
    v = build_vocab(["a b", "b c"], 8)
    assert v.tokens == SPECIAL_TOKENS + ("b", "a")


def test_max_size_six_rejected():
    with pytest.raises(ValueError):
        build_vocab(["a b"], 6)


def test_identical_corpora_identical_vocab():
    corpus = ["the cat sat", "on the mat", "a cat"]
    a, b = build_vocab(corpus, 100), build_vocab(list(corpus), 100)
    assert a.tokens == b.tokens and a.hash() == b.hash()


def test_empty_corpus_warns(caplog):
    v = build_vocab([], 10)
    assert v.size == 6
    assert "empty corpus" in caplog.text


def test_encode_known_and_unknown():
    v = build_vocab(["Mikhail Gorbachev"], 20)
    seq = encode(v, "Mikhail Gorbachev")
    assert seq.ids == (v.id("mikhail"), v.id("gorbachev"))
    seq = encode(v, "Boris Yeltsin")
    assert seq.ids == (UNK, UNK)
    assert seq.source_offsets == ((0, 5), (6, 13))


def test_encode_empty():
    seq = encode(build_vocab(["x"], 10), "")
    assert seq.ids == () and len(seq) == 0


def test_offsets_are_utf8_bytes():
    v = build_vocab(["é b"], 10)
    seq = encode(v, "é b")
    assert seq.source_offsets == ((0, 2), (3, 4))


def test_decode_markers_and_range():
    v = build_vocab(["x y"], 10)
    assert decode(v, [A_START, v.id("x"), A_END]) == "[A] x [/A]"
    assert decode(v, encode(v, "x y").ids) == "x y"
    with pytest.raises(IndexError):
        decode(v, [v.size])


def test_bracket_text_never_gets_reserved_id():
    v = build_vocab(["[A] and [/A] [CLS]"], 50)
    assert all(v.id(t) >= 6 for t in ("[", "a", "]", "/", "cls"))


def test_vocab_file_round_trip(tmp_path):
    v = build_vocab(["one two two three"], 50)
    v.save(tmp_path / "v.txt")
    lines = (tmp_path / "v.txt").read_text().splitlines()
    assert lines[:6] == list(SPECIAL_TOKENS)
    assert Vocab.load(tmp_path / "v.txt").tokens == v.tokens


def test_vocab_rejects_bad_header():
    with pytest.raises(ValueError):
        Vocab(["x", "y"])


def test_span_surface_keeps_original_text():
    text = "Led by  Mikhail Gorbachev, it fell."
    assert span_surface(text, 2, 4) == "Mikhail Gorbachev"
    assert span_surface(text, 2, 5) == "Mikhail Gorbachev,"
    with pytest.raises(IndexError):
        span_surface(text, 3, 3)


word = st.text(alphabet="abcdefghij", min_size=1, max_size=5)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.lists(word, min_size=1, max_size=8), min_size=1, max_size=6))
def test_random_corpora_round_trip(docs):
    corpus = [" ".join(d) for d in docs]
    v = build_vocab(corpus, 1000)
    assert all(v.id(t) >= 6 for d in docs for t in d)
    ids = [v.id(t) for t in v.tokens]
    assert ids == list(range(v.size))
    for text in corpus:
        assert decode(v, encode(v, text).ids) == text


@settings(max_examples=100, deadline=None)
@given(st.text(max_size=40))
def test_offsets_increase_and_cover_tokens(text):
    v = build_vocab([text], 100)
    seq = encode(v, text)
    raw = text.encode("utf-8")
    toks = tokenize(text)
    assert len(seq.ids) == len(seq.source_offsets) == len(toks)
    prev = 0
    for (s, e), (tok, _, _) in zip(seq.source_offsets, toks):
        assert prev <= s < e
        assert raw[s:e].decode("utf-8").lower() == tok
        prev = e
    np.testing.assert_array_equal(v.ids(t for t, _, _ in toks), seq.ids)
