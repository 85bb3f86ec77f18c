"""Task losses and corpus-level evaluation measures."""

from __future__ import annotations

from collections import Counter
from collections.abc import Hashable, Iterable, Sequence
from dataclasses import dataclass

from sacrebleu.metrics import BLEU

__all__ = [
    "ChunkSpan",
    "chunk_spans",
    "chunk_f1",
    "corpus_chunk_f1",
    "NGramStats",
    "ngram_stats",
    "sentence_bleu",
    "sentence_bleu_smoothed",
    "corpus_bleu",
    "zero_one_loss",
    "accuracy",
    "BLEU_FLOOR",
    "MAX_ORDER",
]

MAX_ORDER = 4
BLEU_FLOOR = 0.01


@dataclass(frozen=True, order=True)
class ChunkSpan:
    start: int
    end: int
    type: str = "NP"

    def __post_init__(self) -> None:
        if not self.start < self.end:
            raise ValueError(f"empty span [{self.start}, {self.end})")


def chunk_spans(tags: Sequence[str]) -> list[ChunkSpan]:
    """Spans of a BIO tagging. Tags may be bare (``B``) or typed (``B-NP``).

    An ``I`` that does not continue a chunk of its type opens a new one.
    """
    spans = []
    start: int | None = None
    kind = ""
    for i, tag in enumerate(tags):
        prefix, _, tag_type = tag.partition("-")
        tag_type = tag_type or "NP"
        if prefix == "I" and start is not None and tag_type == kind:
            continue
        if start is not None:
            spans.append(ChunkSpan(start, i, kind))
            start = None
        if prefix in ("B", "I"):
            start, kind = i, tag_type
        elif prefix != "O":
            raise ValueError(f"unknown chunk tag {tag!r} at position {i}")
    if start is not None:
        spans.append(ChunkSpan(start, len(tags), kind))
    return spans


def _span_counts(pred: Sequence[str], gold: Sequence[str]) -> tuple[int, int, int]:
    if len(pred) != len(gold):
        raise ValueError(f"length mismatch: {len(pred)} predicted vs {len(gold)} gold")
    pred_spans = set(chunk_spans(pred))
    gold_spans = set(chunk_spans(gold))
    return len(pred_spans & gold_spans), len(pred_spans), len(gold_spans)


def _f1(matched: int, predicted: int, gold: int) -> float:
    if predicted == 0 and gold == 0:
        return 1.0
    precision = matched / predicted if predicted else 0.0
    recall = matched / gold if gold else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def chunk_f1(pred: Sequence[str], gold: Sequence[str]) -> float:
    """Span-level F1 of one tagging against its gold tagging."""
    return _f1(*_span_counts(pred, gold))


def corpus_chunk_f1(pairs: Iterable[tuple[Sequence[str], Sequence[str]]]) -> float:
    """Span-level F1 with counts pooled over a corpus."""
    matched = predicted = gold = 0
    for pred_tags, gold_tags in pairs:
        m, p, g = _span_counts(pred_tags, gold_tags)
        matched += m
        predicted += p
        gold += g
    return _f1(matched, predicted, gold)


@dataclass(frozen=True)
class NGramStats:
    """Clipped n-gram matches and hypothesis n-gram counts for orders 1..4."""

    matches: tuple[int, ...]
    counts: tuple[int, ...]
    hyp_len: int
    ref_len: int

    def __post_init__(self) -> None:
        if any(m > c for m, c in zip(self.matches, self.counts)):
            raise ValueError("matches exceed counts")

    def __add__(self, other: NGramStats) -> NGramStats:
        return NGramStats(
            tuple(a + b for a, b in zip(self.matches, other.matches)),
            tuple(a + b for a, b in zip(self.counts, other.counts)),
            self.hyp_len + other.hyp_len,
            self.ref_len + other.ref_len,
        )


def _ngrams(tokens: Sequence[Hashable], n: int) -> Counter[tuple[Hashable, ...]]:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def ngram_stats(
    hyp: Sequence[Hashable], ref: Sequence[Hashable], max_order: int = MAX_ORDER
) -> NGramStats:
    matches = []
    counts = []
    for n in range(1, max_order + 1):
        hyp_ngrams = _ngrams(hyp, n)
        matches.append(sum((hyp_ngrams & _ngrams(ref, n)).values()))
        counts.append(sum(hyp_ngrams.values()))
    return NGramStats(tuple(matches), tuple(counts), len(hyp), len(ref))


def _bleu(stats: NGramStats, floor: float | None) -> float:
    correct: list[float] = list(stats.matches)
    total = list(stats.counts)
    if floor is not None:
        # zero matches become the floor, including orders the hypothesis is
        # too short to contain
        correct = [m if m else floor for m in correct]
        total = [max(1, count) for count in total]
    result = BLEU.compute_bleu(
        correct=correct,
        total=total,
        sys_len=stats.hyp_len,
        ref_len=stats.ref_len,
        smooth_method="none",
    )
    return min(1.0, max(0.0, result.score / 100.0))


def sentence_bleu(
    hyp: Sequence[Hashable], ref: Sequence[Hashable], floor: float | None = None
) -> float:
    """BLEU of one hypothesis in [0, 1].

    With ``floor`` set, a zero match count of an order is replaced by ``floor``.
    """
    if not ref:
        raise ValueError("empty reference")
    if not hyp:
        return 0.0
    return _bleu(ngram_stats(hyp, ref), floor)


def sentence_bleu_smoothed(hyp: Sequence[Hashable], ref: Sequence[Hashable]) -> float:
    return sentence_bleu(hyp, ref, BLEU_FLOOR)


def corpus_bleu(pairs: Iterable[tuple[Sequence[Hashable], Sequence[Hashable]]]) -> float:
    """Unsmoothed BLEU with n-gram counts and lengths pooled over the corpus."""
    total: NGramStats | None = None
    for hyp, ref in pairs:
        if not ref:
            raise ValueError("empty reference")
        stats = ngram_stats(hyp, ref)
        total = stats if total is None else total + stats
    if total is None:
        raise ValueError("empty corpus")
    if total.hyp_len == 0:
        return 0.0
    return _bleu(total, None)


def zero_one_loss(pred: Hashable, gold: Hashable) -> float:
    return 0.0 if pred == gold else 1.0


def accuracy(pairs: Iterable[tuple[Hashable, Hashable]]) -> float:
    losses = [zero_one_loss(pred, gold) for pred, gold in pairs]
    if not losses:
        raise ValueError("accuracy of an empty list")
    return 1.0 - sum(losses) / len(losses)
