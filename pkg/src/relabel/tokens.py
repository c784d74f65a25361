"""Deterministic text tokenization shared by metrics, detectors and models.

The pipeline pins a single tokenizer so that hashes, BLEU scores and span
bounds are reproducible across platforms: Unicode NFC normalization,
lowercasing, whitespace splitting. The manifest of every dataset version
records which tokenizer produced its token bounds.
"""

from __future__ import annotations

import unicodedata

DEFAULT_TOKENIZER = "ws-nfc-lower"

_TOKENIZERS = {DEFAULT_TOKENIZER}


def tokenize(text: str, tokenizer: str = DEFAULT_TOKENIZER) -> list[str]:
    """Split ``text`` into tokens under the named tokenizer scheme."""
    if tokenizer not in _TOKENIZERS:
        raise ValueError(f"unknown tokenizer: {tokenizer!r}")
    return unicodedata.normalize("NFC", text).lower().split()
