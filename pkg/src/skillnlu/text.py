"""Text normalization shared by the interaction model, features and runtime."""

from __future__ import annotations

import unicodedata

__all__ = ["normalize_token", "tokenize", "normalize_phrase"]


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch)[0] in ("P", "S")


def normalize_token(token: str) -> str:
    """Lowercase a token and strip punctuation from both ends."""
    start, end = 0, len(token)
    while start < end and _is_punct(token[start]):
        start += 1
    while end > start and _is_punct(token[end - 1]):
        end -= 1
    return token[start:end].lower()


def tokenize(text: str) -> list[str]:
    """Split on whitespace, lowercase and strip edge punctuation.

    Tokens that are pure punctuation disappear, so ``"taurus ?"`` and
    ``"taurus?"`` both give ``["taurus"]``.
    """
    out = []
    for raw in text.split():
        tok = normalize_token(raw)
        if tok:
            out.append(tok)
    return out


def normalize_phrase(text: str) -> str:
    return " ".join(tokenize(text))
