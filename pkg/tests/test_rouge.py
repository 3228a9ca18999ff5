from __future__ import annotations
import itertools
import random

import pytest

from rlab.core.errors import DataError
from rlab.logic.rouge import corpus_rouge, lcs_length, match_score, rouge_l, rouge_n, summary_rouge

ALPHABET = "abc"


def _all_sequences(max_len):
    for n in range(max_len + 1):
        yield from itertools.product(ALPHABET, repeat=n)


def _brute_matches(cand, ref, n):
    """Pair every reference n-gram occurrence with an unused equal candidate occurrence."""
    cand_grams = [tuple(cand[i:i + n]) for i in range(len(cand) - n + 1)]
    used = [False] * len(cand_grams)
    hits = 0
    for gram in (tuple(ref[i:i + n]) for i in range(len(ref) - n + 1)):
        for k, g in enumerate(cand_grams):
            if not used[k] and g == gram:
                used[k] = True
                hits += 1
                break
    return hits


def _is_subsequence(sub, seq):
    it = iter(seq)
    return all(x in it for x in sub)


def _brute_lcs(a, b):
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    best = 0
    for mask in range(1 << len(short)):
        sub = [short[i] for i in range(len(short)) if mask >> i & 1]
        if len(sub) > best and _is_subsequence(sub, long_):
            best = len(sub)
    return best


def test_identity_scores_one():
    toks = "the cat sat on the mat".split()
    assert rouge_n(toks, toks, 1).f1 == 1.0
    assert rouge_n(toks, toks, 2).f1 == 1.0
    assert rouge_l(toks, toks).f1 == 1.0


def test_exhaustive_short_pairs():
    seqs = list(_all_sequences(4))
    for cand in seqs:
        for ref in seqs:
            if ref:
                assert lcs_length(cand, ref) == _brute_lcs(cand, ref)
                assert rouge_n(cand, ref, 1).recall == pytest.approx(_brute_matches(cand, ref, 1) / len(ref))
            if len(ref) >= 2:
                assert rouge_n(cand, ref, 2).recall == pytest.approx(_brute_matches(cand, ref, 2) / (len(ref) - 1))


def test_random_pairs_up_to_seven():
    rng = random.Random(7)
    for _ in range(2000):
        cand = [rng.choice(ALPHABET) for _ in range(rng.randint(0, 7))]
        ref = [rng.choice(ALPHABET) for _ in range(rng.randint(2, 7))]
        assert lcs_length(cand, ref) == _brute_lcs(cand, ref)
        for n in (1, 2):
            score = rouge_n(cand, ref, n)
            hits = _brute_matches(cand, ref, n)
            assert score.recall == pytest.approx(hits / (len(ref) - n + 1))
            if len(cand) >= n:
                assert score.precision == pytest.approx(hits / (len(cand) - n + 1))


def _canonical(seq):
    """True when symbols first appear in alphabet order; every sequence renames into such a form."""
    seen = []
    for s in seq:
        if s not in seen:
            seen.append(s)
    return seen == sorted(seen)


def _subsequences(seq):
    return {tuple(seq[i] for i in range(len(seq)) if mask >> i & 1) for mask in range(1 << len(seq))}


@pytest.mark.slow
def test_every_pair_up_to_seven():
    # renaming the alphabet in both sequences preserves every score, so the candidate is
    # enumerated up to renaming and the reference in full
    seqs = list(_all_sequences(7))
    subs = {s: _subsequences(s) for s in seqs}
    for cand in filter(_canonical, seqs):
        for ref in seqs:
            if not ref:
                continue
            lcs = max(len(s) for s in subs[cand] & subs[ref])
            assert lcs_length(cand, ref) == lcs
            assert rouge_l(cand, ref).recall == lcs / len(ref)
            for n in (1, 2):
                if len(ref) < n:
                    continue
                score = rouge_n(cand, ref, n)
                hits = _brute_matches(cand, ref, n)
                assert score.recall == hits / (len(ref) - n + 1)
                if len(cand) >= n:
                    assert score.precision == hits / (len(cand) - n + 1)
        if len(cand) >= 2:
            assert rouge_n(cand, cand, 1).f1 == rouge_n(cand, cand, 2).f1 == rouge_l(cand, cand).f1 == 1.0


def test_degenerate_inputs():
    with pytest.raises(DataError):
        rouge_n(["a", "b"], ["a"], 2)
    with pytest.raises(DataError):
        rouge_l(["a"], [])
    assert rouge_l([], ["a"]).f1 == 0.0
    assert rouge_n([], ["a", "b"], 1).f1 == 0.0


def test_match_score_examples():
    assert match_score("a b c".split(), "a b c".split()) == pytest.approx(1.0)
    assert match_score("a b c".split(), "a b d".split()) == pytest.approx(11 / 18)


def test_match_score_single_token_reference():
    # bigram recall is 0 for a one-token reference
    assert match_score(["a"], ["a"]) == pytest.approx(2 / 3)
    assert match_score(["x", "y"], ["x", "y"]) == pytest.approx(1.0)


def test_summary_and_corpus_level():
    ref = [["a", "b"], ["c", "d"]]
    assert summary_rouge(ref, ref).r2.f1 == 1.0
    half = summary_rouge([["a", "b"]], ref)
    assert half.r1.recall == pytest.approx(0.5) and half.r1.precision == pytest.approx(1.0)
    corpus = corpus_rouge([(ref, ref), ([["a", "b"]], ref)])
    assert corpus.n == 2
    assert corpus.r1.recall == pytest.approx(0.75)
    with pytest.raises(DataError):
        corpus_rouge([])
