from hypothesis import given, strategies as st

from skillnlu.text import normalize_phrase, normalize_token, tokenize


def test_lowercases_and_strips_edge_punctuation():
    assert tokenize("What's the Horoscope for Taurus?") == ["what's", "the", "horoscope", "for", "taurus"]


def test_pure_punctuation_tokens_vanish():
    assert tokenize("taurus ?") == tokenize("taurus?") == ["taurus"]
    assert tokenize(" ... !! ") == []


def test_internal_whitespace_collapses():
    assert normalize_phrase("  New\tYork \n City ") == "new york city"


def test_normalize_token_keeps_inner_punctuation():
    assert normalize_token('"joe\'s"') == "joe's"
    assert normalize_token("e-mail.") == "e-mail"


@given(st.text())
def test_tokenize_is_idempotent(text):
    toks = tokenize(text)
    assert tokenize(" ".join(toks)) == toks
    assert all(t and t == t.lower() and not any(c.isspace() for c in t) for t in toks)
