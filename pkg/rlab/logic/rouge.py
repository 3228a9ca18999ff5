"""
Exact ROUGE-1/2/L over token lists. No stemming, no stopword removal.

Sentence-level scores feed oracle labeling; summary-level scores flatten sentences
(the sentence separator never takes part in scoring).
"""
from __future__ import annotations
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from rlab.core.errors import DataError


@dataclass(frozen=True)
class RougeScore:
    recall: float
    precision: float
    f1: float

    @classmethod
    def from_counts(cls, match: int, cand_total: int, ref_total: int) -> "RougeScore":
        recall = match / ref_total if ref_total else 0.0
        precision = match / cand_total if cand_total else 0.0
        denom = precision + recall
        f1 = 2 * precision * recall / denom if denom > 0 else 0.0
        return cls(recall, precision, f1)


ZERO = RougeScore(0.0, 0.0, 0.0)


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int = 1) -> RougeScore:
    if n < 1:
        raise DataError(f"ROUGE-N needs n >= 1, got {n}")
    if len(reference) < n:
        raise DataError(f"reference has {len(reference)} tokens, ROUGE-{n} needs at least {n}")
    ref = ngrams(reference, n)
    cand = ngrams(candidate, n)
    # clipped multiset intersection
    match = sum((cand & ref).values())
    return RougeScore.from_counts(match, sum(cand.values()), sum(ref.values()))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Standard O(|a||b|) dynamic program, one row kept."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> RougeScore:
    if not reference:
        raise DataError("ROUGE-L needs a non-empty reference")
    if not candidate:
        return ZERO
    return RougeScore.from_counts(lcs_length(candidate, reference), len(candidate), len(reference))


def match_score(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """Mean of ROUGE-1/2/L recall; the bigram term is 0 for one-token references."""
    r1 = rouge_n(candidate, reference, 1).recall
    r2 = rouge_n(candidate, reference, 2).recall if len(reference) >= 2 else 0.0
    rl = rouge_l(candidate, reference).recall
    return (r1 + r2 + rl) / 3.0


# ───────────────────────────────────────────────────────────────────────────────
# Summary / corpus level
# ───────────────────────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class SummaryRouge:
    r1: RougeScore
    r2: RougeScore
    rl: RougeScore


def _flatten(sentences: Iterable[Sequence[str]]) -> list[str]:
    return [t for s in sentences for t in s]


def summary_rouge(candidate: Iterable[Sequence[str]], reference: Iterable[Sequence[str]]) -> SummaryRouge:
    cand = _flatten(candidate)
    ref = _flatten(reference)
    if not ref:
        raise DataError("reference summary is empty")
    r2 = rouge_n(cand, ref, 2) if len(ref) >= 2 else ZERO
    return SummaryRouge(rouge_n(cand, ref, 1), r2, rouge_l(cand, ref))


@dataclass(frozen=True)
class CorpusRouge:
    n: int
    r1: RougeScore
    r2: RougeScore
    rl: RougeScore

    def as_row(self) -> dict[str, float]:
        row: dict[str, float] = {"n": self.n}
        for name in ("r1", "r2", "rl"):
            s: RougeScore = getattr(self, name)
            row[f"{name}_f1"] = s.f1
            row[f"{name}_recall"] = s.recall
            row[f"{name}_precision"] = s.precision
        return row


def _mean(scores: list[RougeScore]) -> RougeScore:
    n = len(scores)
    return RougeScore(
        sum(s.recall for s in scores) / n,
        sum(s.precision for s in scores) / n,
        sum(s.f1 for s in scores) / n,
    )


def corpus_rouge(pairs: Iterable[tuple[Iterable[Sequence[str]], Iterable[Sequence[str]]]]) -> CorpusRouge:
    """Macro average over (candidate sentences, reference sentences) pairs."""
    scored = [summary_rouge(c, r) for c, r in pairs]
    if not scored:
        raise DataError("no summaries to score")
    return CorpusRouge(
        len(scored),
        _mean([s.r1 for s in scored]),
        _mean([s.r2 for s in scored]),
        _mean([s.rl for s in scored]),
    )
