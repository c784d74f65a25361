"""Pure, deterministic similarity and evaluation kernels.

Everything here is a function of its arguments (plus an explicit seed where
randomness is involved), safe to call concurrently, and bit-stable across
platforms. These kernels are the quantitative substrate for the noise
detectors and the per-round loop evaluation.
"""

from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import dataclass

from .dataset import Box, Span
from .tokens import tokenize


@dataclass(frozen=True)
class BleuConfig:
    """Sentence-BLEU configuration.

    ``max_n`` is capped by the candidate length (effective n). Smoothing
    ``add-one-on-zero-counts`` applies add-one only to zero-count orders of
    n >= 2; a zero unigram precision always forces a score of 0 so that
    zero-overlap sentences score 0 under every configuration.
    """

    max_n: int = 4
    smoothing: str = "add-one-on-zero-counts"

    def __post_init__(self) -> None:
        if self.max_n < 1:
            raise ValueError("max_n must be >= 1")
        if self.smoothing not in ("none", "add-one-on-zero-counts"):
            raise ValueError(f"unknown smoothing: {self.smoothing!r}")


@dataclass(frozen=True)
class PRF1:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "PRF1":
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = (
            2 * precision * recall / (precision + recall)
            if precision + recall > 0
            else 0.0
        )
        return cls(precision=precision, recall=recall, f1=f1, tp=tp, fp=fp, fn=fn)


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def sentence_bleu(
    candidate: list[str], reference: list[str], cfg: BleuConfig = BleuConfig()
) -> float:
    """Sentence BLEU: geometric mean of modified n-gram precisions times the
    brevity penalty ``exp(1 - r/c)`` (applied only when c < r).

    Returns 0.0 for an empty candidate or when unigram precision is 0.
    """
    if not reference:
        raise ValueError("reference must be non-empty")
    if not candidate:
        return 0.0
    effective_n = min(cfg.max_n, len(candidate))
    log_sum = 0.0
    for n in range(1, effective_n + 1):
        cand_counts = _ngram_counts(candidate, n)
        ref_counts = _ngram_counts(reference, n)
        matched = sum(min(count, ref_counts[gram]) for gram, count in cand_counts.items())
        total = sum(cand_counts.values())
        if n == 1 and matched == 0:
            return 0.0
        if matched == 0:
            if cfg.smoothing == "none":
                return 0.0
            matched, total = matched + 1, total + 1
        log_sum += math.log(matched / total)
    c, r = len(candidate), len(reference)
    brevity = math.exp(1.0 - r / c) if c < r else 1.0
    return brevity * math.exp(log_sum / effective_n)


def common_token_count(a: list[str], b: list[str]) -> int:
    """Number of shared token types (set semantics, not occurrences)."""
    return len(set(a) & set(b))


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes; the object class is ignored."""
    inter_w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    inter_h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if inter_w <= 0 or inter_h <= 0:
        return 0.0
    inter = inter_w * inter_h
    area_a = (a.x_max - a.x_min) * (a.y_max - a.y_min)
    area_b = (b.x_max - b.x_min) * (b.y_max - b.y_min)
    return inter / (area_a + area_b - inter)


def span_prf1(gold: set[Span], predicted: set[Span]) -> PRF1:
    """Exact-match span scoring over (start, end, entity_class) triples."""
    gold, predicted = set(gold), set(predicted)
    tp = len(gold & predicted)
    return PRF1.from_counts(tp=tp, fp=len(predicted - gold), fn=len(gold - predicted))


def accuracy(gold: list[str], predicted: list[str]) -> float:
    if len(gold) != len(predicted):
        raise ValueError(f"length mismatch: {len(gold)} vs {len(predicted)}")
    if not gold:
        raise ValueError("empty input")
    return sum(g == p for g, p in zip(gold, predicted)) / len(gold)


def auc(labels: list[int], scores: list[float]) -> float:
    """Probability a random positive outscores a random negative, ties 0.5.

    Computed by rank sum (one sort) with average ranks on tied scores, which
    is exactly the pairwise Mann-Whitney count up to the shared division.
    """
    if len(labels) != len(scores):
        raise ValueError(f"length mismatch: {len(labels)} vs {len(scores)}")
    n_pos = sum(1 for y in labels if y == 1)
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need at least one positive and one negative label")
    order = sorted(range(len(scores)), key=lambda i: scores[i])
    rank_sum_pos = 0.0
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        # 1-based ranks i+1..j+1 share the average rank of the tie group
        avg_rank = (i + j + 2) / 2.0
        for k in range(i, j + 1):
            if labels[order[k]] == 1:
                rank_sum_pos += avg_rank
        i = j + 1
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


# ---------------------------------------------------------------------------
# Similarity sort key (min-hash LSH bands over token shingles)

_MINHASH_ROWS = 4
_SHINGLE_SIZE = 3


def _stable_hash64(*parts: object) -> int:
    payload = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "big")


def similarity_sort_key(payload: str, bands: int = 16, seed: int = 0) -> tuple:
    """Orderable key grouping near-duplicate texts next to each other.

    The key is (min-hash band signature, normalized text): texts with high
    shingle overlap agree on leading bands with high probability, so sorting
    by this key clusters them. Deterministic for a fixed seed.
    """
    tokens = tokenize(payload)
    size = _SHINGLE_SIZE if len(tokens) >= _SHINGLE_SIZE else 1
    shingles = {tuple(tokens[i : i + size]) for i in range(len(tokens) - size + 1)}
    signature: list[int] = []
    for band in range(bands):
        rows = []
        for row in range(_MINHASH_ROWS):
            fn = band * _MINHASH_ROWS + row
            if shingles:
                rows.append(min(_stable_hash64(seed, fn, *s) for s in shingles))
            else:
                rows.append(0)
        signature.append(_stable_hash64(seed, "band", band, *rows))
    return (tuple(signature), " ".join(tokens))
