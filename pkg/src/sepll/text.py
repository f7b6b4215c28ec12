"""Whitespace/punctuation tokenization shared by the LF engine and the featurizer."""

from __future__ import annotations

import re

# runs of letters/digits; underscores and everything else act as separators
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str, lowercase: bool = True) -> list[str]:
    if lowercase:
        text = text.lower()
    return _TOKEN_RE.findall(text)
