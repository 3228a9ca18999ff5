from __future__ import annotations
import random

import pytest

from rlab.core.errors import DataError
from rlab.logic.align import (
    OracleAlignment, build_external, build_joint, build_target, build_two_stage, external_target,
    group_tag, lead_alignment, natural_source, oracle_extract, swap_tags, tag_of_next,
)
from rlab.logic.rouge import match_score
from rlab.logic.textcore import Document, Sentence, parse_ident


def _naive_tags(tokens):
    """Per-token re-derivation: look back for the nearest identifier or sentence end."""
    tags = []
    for i, tok in enumerate(tokens):
        k = parse_ident(tok)
        if k is None:
            k = 0
            for p in range(i - 1, -1, -1):
                if tokens[p] == "</S>":
                    break
                if parse_ident(tokens[p]) is not None:
                    k = parse_ident(tokens[p])
                    break
        tags.append(k)
    return tags


def _random_tokens(rng):
    density = rng.uniform(0.0, 0.3)
    out = []
    for _ in range(rng.randint(0, 64)):
        r = rng.random()
        if r < density / 2:
            out.append(f"<S_{rng.randint(0, 9)}>")
        elif r < density:
            out.append("</S>")
        else:
            out.append(rng.choice("abcde"))
    return out


def _doc(*sents, ex_id="d"):
    return Document(ex_id, tuple(Sentence.of(s) for s in sents))


def test_group_tag_example():
    toks = ["<S_2>", "a", "b", "</S>", "c", "<S_1>", "d", "</S>"]
    assert group_tag(toks) == [2, 2, 2, 2, 0, 1, 1, 1]
    assert group_tag([]) == []
    assert group_tag(["a", "</S>", "b"]) == [0, 0, 0]


def test_group_tag_matches_naive_rederivation():
    rng = random.Random(0)
    for _ in range(10_000):
        toks = _random_tokens(rng)
        assert group_tag(toks) == _naive_tags(toks)


def test_tag_of_next_agrees_with_full_retag():
    rng = random.Random(1)
    for _ in range(500):
        toks = _random_tokens(rng)
        cand = rng.choice(["a", "</S>", "<S_3>"])
        expected = group_tag(toks + [cand])[-1]
        assert tag_of_next(toks, cand) == expected
        assert tag_of_next(toks, cand, group_tag(toks)) == expected


def test_oracle_extract_is_exhaustive_argmax():
    rng = random.Random(2)
    words = "abcdefg"
    for _ in range(1000):
        n = rng.randint(1, 8)
        doc = _doc(*(" ".join(rng.choice(words) for _ in range(rng.randint(1, 6))) for _ in range(n)))
        summary = [Sentence.of(" ".join(rng.choice(words) for _ in range(rng.randint(1, 6))))
                   for _ in range(rng.randint(1, 4))]
        alignment = oracle_extract(doc, summary)
        assert len(alignment) == len(summary)
        for ref, got in zip(summary, alignment):
            scores = [match_score(s.tokens, ref.tokens) for s in doc.sentences]
            assert got == scores.index(max(scores))


def test_oracle_extract_prefers_lowest_index_on_ties():
    doc = _doc("x y", "x y", "z")
    assert oracle_extract(doc, [Sentence.of("x y")]).indices == (0,)


def test_lead_alignment_truncates():
    assert lead_alignment(_doc("a", "b")).indices == (0, 1)
    assert lead_alignment(_doc("a", "b", "c", "d")).indices == (0, 1, 2)


def test_build_external_marks_selection(make_vocab):
    vocab = make_vocab(list("abcdefgh"), max_tag=4)
    doc = _doc("a b", "c", "d e", "f")
    inputs = build_external(doc, OracleAlignment((2, 0)), vocab)
    toks = vocab.decode(inputs.source.tokens)
    assert toks == ["<S_2>", "a", "b", "</S>", "<S_0>", "c", "</S>",
                    "<S_1>", "d", "e", "</S>", "<S_0>", "f", "</S>"]
    assert list(inputs.source.tags) == [2, 2, 2, 2, 0, 0, 0, 1, 1, 1, 1, 0, 0, 0]
    assert vocab.decode(inputs.template.tokens) == ["<S_1>", "<S_2>"]
    assert inputs.duplicates == {}
    assert inputs.source.is_consistent(vocab)


def test_build_external_duplicate_keeps_lowest_position(make_vocab):
    vocab = make_vocab(list("abc"), max_tag=4)
    inputs = build_external(_doc("a", "b", "c"), OracleAlignment((1, 1)), vocab)
    assert vocab.decode(inputs.source.tokens)[3:6] == ["<S_1>", "b", "</S>"]
    assert inputs.duplicates == {2: 1}


def test_external_and_joint_targets(make_vocab):
    vocab = make_vocab(list("abcxy"), max_tag=4)
    doc = _doc("a b", "c")
    summary = [Sentence.of("x"), Sentence.of("y")]
    assert vocab.decode(external_target(summary, vocab).tokens) == ["<S_1>", "x", "</S>", "<S_2>", "y", "</S>"]
    source, target = build_joint(doc, OracleAlignment((1, 0)), summary, vocab)
    assert source == natural_source(doc, vocab)
    assert vocab.decode(target.tokens) == ["<S_2>", "x", "</S>", "<S_1>", "y", "</S>"]
    assert list(target.tags) == [2, 2, 2, 1, 1, 1]


def test_two_stage_places_plan_first(make_vocab):
    vocab = make_vocab(list("abcxy"), max_tag=4)
    doc = _doc("a b", "c")
    summary = [Sentence.of("x"), Sentence.of("y")]
    _, target = build_two_stage(doc, OracleAlignment((1, 0)), summary, vocab)
    assert vocab.decode(target.tokens) == ["<S_2>", "<S_1>", "</S>", "<S_2>", "x", "</S>", "<S_1>", "y", "</S>"]
    assert list(target.tags) == [2, 1, 1, 2, 2, 2, 1, 1, 1]
    assert build_target("joint_two_stage", doc, OracleAlignment((1, 0)), summary, vocab)[1] == target


def test_limits_and_mismatches(make_vocab):
    vocab = make_vocab(list("abc"), max_tag=2)
    doc = _doc("a", "b", "c")
    with pytest.raises(DataError):
        natural_source(doc, vocab)
    with pytest.raises(DataError):
        build_external(doc, OracleAlignment((0, 1, 2)), vocab)
    with pytest.raises(DataError):
        build_external(doc, OracleAlignment((3,)), vocab)
    with pytest.raises(DataError):
        build_target("external", doc, OracleAlignment((0,)), [Sentence.of("a"), Sentence.of("b")], vocab)
    with pytest.raises(DataError):
        build_target("bogus", doc, OracleAlignment((0,)), [Sentence.of("a")], vocab)


def test_swap_tags_is_an_involution(make_vocab):
    vocab = make_vocab(list("abcd"), max_tag=4)
    source = build_external(_doc("a", "b", "c", "d"), OracleAlignment((3, 1)), vocab).source
    once = swap_tags(source, 1, 2, vocab)
    assert once != source and once.is_consistent(vocab)
    assert swap_tags(once, 1, 2, vocab) == source
    assert swap_tags(source, 2, 2, vocab) == source


def test_joint_target_tags_follow_the_selection(make_vocab):
    vocab = make_vocab(["w1", "w2", "w3", "w4", "w5", "w6", "x", "y"], max_tag=8)
    doc = _doc("w1", "w2", "w3", "w4", "w5", "w6")
    summary = [Sentence.of("x y"), Sentence.of("y x"), Sentence.of("x x")]
    source, target = build_joint(doc, OracleAlignment((2, 4, 1)), summary, vocab)
    assert list(target.tags) == [3, 3, 3, 3, 5, 5, 5, 5, 2, 2, 2, 2]
    assert list(source.tags) == [1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4, 5, 5, 5, 6, 6, 6]

    one = _doc("w1 w2")
    source, target = build_joint(one, OracleAlignment((0,)), [Sentence.of("x")], vocab)
    assert set(source.tags) == {1} and set(target.tags) == {1}


def test_stripping_markers_recovers_the_document(make_vocab):
    rng = random.Random(5)
    words = "abcdefg"
    vocab = make_vocab(list(words) + ["x"], max_tag=8)
    for _ in range(300):
        n = rng.randint(1, 8)
        doc = _doc(*(" ".join(rng.choice(words) for _ in range(rng.randint(1, 5))) for _ in range(n)))
        m = rng.randint(1, 4)
        alignment = OracleAlignment(tuple(rng.randrange(n) for _ in range(m)))
        summary = [Sentence.of("x")] * m
        flat = [t for s in doc.sentences for t in s.tokens]
        for mode in ("external", "joint", "joint_two_stage"):
            source, target = build_target(mode, doc, alignment, summary, vocab)
            kept = [t for t in vocab.decode(source.tokens) if t != "</S>" and parse_ident(t) is None]
            assert kept == flat
            assert source.is_consistent(vocab) and target.is_consistent(vocab)
            assert list(target.tags) == group_tag(vocab.decode(target.tokens))
