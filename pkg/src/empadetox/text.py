"""Deterministic word-level tokenizer shared by the LMs and the lexicon scorer."""

import re

_TOKEN_RE = re.compile(r"[^\W_]+(?:'[^\W_]+)*|[^\w\s]|_+")
_NO_SPACE_BEFORE = set(".,!?;:%)]}'\"")
_NO_SPACE_AFTER = set("([{$#\"")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and detach punctuation.

    >>> tokenize("Don't stop, OK?")
    ["don't", 'stop', ',', 'ok', '?']
    """
    return _TOKEN_RE.findall(text.lower())


def detokenize(tokens) -> str:
    out = []
    glue = False
    for tok in tokens:
        if out and not glue and tok not in _NO_SPACE_BEFORE:
            out.append(" ")
        out.append(tok)
        glue = tok in _NO_SPACE_AFTER
    return "".join(out)


def normalize(text: str) -> str:
    """Lowercase and collapse whitespace; the canonical form for cache digests."""
    return " ".join(text.lower().split())
