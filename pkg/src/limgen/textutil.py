"""Shared text utilities: tokenization, normalization, fuzzy containment.

One tokenizer serves every lexical consumer (BM25, ROUGE, BLEU, Jaccard,
the hashing embedder) so their scores stay mutually comparable.
"""
from __future__ import annotations

import re

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

_WS_RE = re.compile(r"\s+")


def tokenize(text: str) -> list[str]:
    """Case-fold and split on whitespace/punctuation; returns word tokens."""
    return _TOKEN_RE.findall(text.casefold())


def normalize_text(text: str) -> str:
    """Canonical form for de-duplication: case-folded, whitespace-collapsed."""
    return _WS_RE.sub(" ", text.casefold()).strip()


def token_jaccard(a: list[str], b: list[str]) -> float:
    sa, sb = set(a), set(b)
    if not sa and not sb:
        return 1.0
    if not sa or not sb:
        return 0.0
    return len(sa & sb) / len(sa | sb)


def fuzzy_contained(item: str, source: str, threshold: float = 0.7) -> bool:
    """True when `item` overlaps some window of `source` at >= threshold.

    The window slides over source tokens with length equal to the item's
    token count; overlap is token-set Jaccard. Used as the mechanical
    anti-hallucination gate on every LLM extraction/merge output.
    """
    item_tokens = tokenize(item)
    source_tokens = tokenize(source)
    if not item_tokens:
        return True
    if not source_tokens:
        return False
    width = len(item_tokens)
    if width >= len(source_tokens):
        return token_jaccard(item_tokens, source_tokens) >= threshold
    item_set = set(item_tokens)
    best = 0.0
    for start in range(len(source_tokens) - width + 1):
        window = set(source_tokens[start : start + width])
        score = len(item_set & window) / len(item_set | window)
        if score > best:
            best = score
            if best >= threshold:
                return True
    return best >= threshold


def split_sentences(text: str) -> list[str]:
    """Lightweight sentence splitter; good enough for span refinement."""
    parts = re.split(r"(?<=[.!?])\s+|\n+", text)
    return [p.strip() for p in parts if p.strip()]
