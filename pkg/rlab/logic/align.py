"""
Group-tag alignments.

A group tag is an integer attached to every token of an extended sequence. Identifier tokens
"<S_k>" open a group k, "</S>" closes it, and everything outside a group carries tag 0.
The same tag on the document side (X′) and the summary side (Y′) ties a summary sentence to
the document sentence it rewrites.
"""
from __future__ import annotations
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

from app_config import EOS_SENT_TOKEN
from rlab.core.errors import DataError
from rlab.logic.rouge import match_score
from rlab.logic.textcore import Document, Sentence, Vocab, parse_ident

MODES = ("external", "joint", "joint_two_stage")


# ───────────────────────────────────────────────────────────────────────────────
# Types
# ───────────────────────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class OracleAlignment:
    """One 0-based document-sentence index per summary sentence; duplicates allowed."""
    indices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in self.indices))

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self) -> Iterator[int]:
        return iter(self.indices)

    def __getitem__(self, j: int) -> int:
        return self.indices[j]

    def check(self, n_sentences: int) -> None:
        for i in self.indices:
            if not 0 <= i < n_sentences:
                raise DataError(f"alignment index {i} out of range for {n_sentences}-sentence document")


@dataclass(frozen=True)
class TaggedSequence:
    tokens: tuple[int, ...]
    tags: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "tags", tuple(self.tags))
        if len(self.tokens) != len(self.tags):
            raise DataError(f"{len(self.tokens)} tokens but {len(self.tags)} tags")

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def from_ids(cls, ids: Sequence[int], vocab: Vocab) -> "TaggedSequence":
        return cls(tuple(ids), tuple(group_tag_ids(ids, vocab)))

    def is_consistent(self, vocab: Vocab) -> bool:
        return list(self.tags) == group_tag_ids(self.tokens, vocab)


@dataclass(frozen=True)
class ExternalInputs:
    source: TaggedSequence
    template: TaggedSequence
    # summary position (1-based) -> document sentence (0-based) for selections that lost their tag
    duplicates: dict[int, int] = field(default_factory=dict)


# ───────────────────────────────────────────────────────────────────────────────
# Group tags
# ───────────────────────────────────────────────────────────────────────────────
def step_tag(state: int, ident: Optional[int], closes: bool) -> tuple[int, int]:
    """
    One step of the tagging automaton: returns (tag of this token, state after it).
    ident is k for "<S_k>", closes is True for "</S>".
    """
    if ident is not None:
        state = ident
    tag = state
    if closes:
        state = 0
    return tag, state


def group_tag(tokens: Iterable[str]) -> list[int]:
    tags: list[int] = []
    state = 0
    for tok in tokens:
        tag, state = step_tag(state, parse_ident(tok), tok == EOS_SENT_TOKEN)
        tags.append(tag)
    return tags


def group_tag_ids(ids: Iterable[int], vocab: Vocab) -> list[int]:
    tags: list[int] = []
    state = 0
    for t in ids:
        tag, state = step_tag(state, vocab.ident_of(t), t == vocab.eos_sent_id)
        tags.append(tag)
    return tags


def state_after(last_token: Optional[str], last_tag: int) -> int:
    """Automaton state following a prefix, from its final token and tag alone."""
    if last_token is None or last_token == EOS_SENT_TOKEN:
        return 0
    return last_tag


def tag_of_next(prefix_tokens: Sequence[str], candidate: str, prefix_tags: Optional[Sequence[int]] = None) -> int:
    """Tag the candidate would receive if appended; O(1) when prefix_tags is supplied."""
    if not prefix_tokens:
        last_token, last_tag = None, 0
    else:
        last_token = prefix_tokens[-1]
        last_tag = prefix_tags[-1] if prefix_tags is not None else group_tag(prefix_tokens)[-1]
    tag, _ = step_tag(state_after(last_token, last_tag), parse_ident(candidate), candidate == EOS_SENT_TOKEN)
    return tag


# ───────────────────────────────────────────────────────────────────────────────
# Oracle extraction
# ───────────────────────────────────────────────────────────────────────────────
def oracle_extract(doc: Document, summary: Sequence[Sentence]) -> OracleAlignment:
    """Best-matching document sentence per summary sentence; ties go to the lowest index."""
    if not summary:
        raise DataError(f"example {doc.id}: empty summary")
    indices = []
    for ref in summary:
        best_i, best = 0, -1.0
        for i, sent in enumerate(doc.sentences):
            score = match_score(sent.tokens, ref.tokens)
            if score > best:
                best_i, best = i, score
        indices.append(best_i)
    return OracleAlignment(tuple(indices))


def lead_alignment(doc: Document, m: int = 3) -> OracleAlignment:
    return OracleAlignment(tuple(range(min(m, len(doc)))))


# ───────────────────────────────────────────────────────────────────────────────
# Extended sequences
# ───────────────────────────────────────────────────────────────────────────────
def _sentence_ids(ident: int, sentence: Sentence, vocab: Vocab) -> list[int]:
    return [vocab.ident_id(ident), *vocab.encode(sentence.tokens), vocab.eos_sent_id]


def _check(doc: Document, alignment: OracleAlignment, vocab: Vocab) -> None:
    alignment.check(len(doc))
    if not len(alignment):
        raise DataError(f"example {doc.id}: empty alignment")
    if len(alignment) > vocab.max_tag:
        raise DataError(f"example {doc.id}: {len(alignment)} summary sentences exceed K={vocab.max_tag}")


def natural_source(doc: Document, vocab: Vocab) -> TaggedSequence:
    """X′ with identifiers <S_1> … <S_n> in document order."""
    if len(doc) > vocab.max_tag:
        raise DataError(f"example {doc.id}: {len(doc)} sentences exceed K={vocab.max_tag}")
    ids: list[int] = []
    for i, sent in enumerate(doc.sentences):
        ids.extend(_sentence_ids(i + 1, sent, vocab))
    return TaggedSequence.from_ids(ids, vocab)


def build_external(doc: Document, alignment: OracleAlignment, vocab: Vocab) -> ExternalInputs:
    """
    X′ marks the selection: sentence alignment[j] opens with <S_{j+1}>, the rest with <S_0>.
    A sentence chosen for several positions keeps the lowest one; the others go to `duplicates`.
    """
    _check(doc, alignment, vocab)
    tag_of: dict[int, int] = {}
    duplicates: dict[int, int] = {}
    for j, i in enumerate(alignment):
        if i in tag_of:
            duplicates[j + 1] = i
        else:
            tag_of[i] = j + 1
    ids: list[int] = []
    for i, sent in enumerate(doc.sentences):
        ids.extend(_sentence_ids(tag_of.get(i, 0), sent, vocab))
    template = [vocab.ident_id(j + 1) for j in range(len(alignment))]
    return ExternalInputs(TaggedSequence.from_ids(ids, vocab), TaggedSequence.from_ids(template, vocab), duplicates)


def external_target(summary: Sequence[Sentence], vocab: Vocab) -> TaggedSequence:
    """Y′ for external mode: naturally ordered identifiers <S_1>, <S_2>, …"""
    ids: list[int] = []
    for j, sent in enumerate(summary):
        ids.extend(_sentence_ids(j + 1, sent, vocab))
    return TaggedSequence.from_ids(ids, vocab)


def build_joint(doc: Document, alignment: OracleAlignment, summary: Sequence[Sentence],
                vocab: Vocab) -> tuple[TaggedSequence, TaggedSequence]:
    _check(doc, alignment, vocab)
    if len(summary) != len(alignment):
        raise DataError(f"example {doc.id}: {len(summary)} summary sentences, {len(alignment)} alignments")
    source = natural_source(doc, vocab)
    ids: list[int] = []
    for i, sent in zip(alignment, summary):
        ids.extend(_sentence_ids(i + 1, sent, vocab))
    return source, TaggedSequence.from_ids(ids, vocab)


def build_two_stage(doc: Document, alignment: OracleAlignment, summary: Sequence[Sentence],
                    vocab: Vocab) -> tuple[TaggedSequence, TaggedSequence]:
    """All selections first ("<S_a> <S_b> … </S>"), then the rewritten sentences in joint form."""
    source, joint = build_joint(doc, alignment, summary, vocab)
    head = [vocab.ident_id(i + 1) for i in alignment] + [vocab.eos_sent_id]
    return source, TaggedSequence.from_ids(head + list(joint.tokens), vocab)


def build_target(mode: str, doc: Document, alignment: OracleAlignment, summary: Sequence[Sentence],
                 vocab: Vocab) -> tuple[TaggedSequence, TaggedSequence]:
    """Gold-prefix training pair (X′, Y′) for a rewriter mode."""
    if mode == "external":
        if len(summary) != len(alignment):
            raise DataError(f"example {doc.id}: {len(summary)} summary sentences, {len(alignment)} alignments")
        return build_external(doc, alignment, vocab).source, external_target(summary, vocab)
    if mode == "joint":
        return build_joint(doc, alignment, summary, vocab)
    if mode == "joint_two_stage":
        return build_two_stage(doc, alignment, summary, vocab)
    raise DataError(f"unknown mode {mode!r}; expected one of {MODES}")


def swap_tags(source: TaggedSequence, a: int, b: int, vocab: Vocab) -> TaggedSequence:
    """Exchange identifiers <S_a> and <S_b> in X′; tags follow."""
    ia, ib = vocab.ident_id(a), vocab.ident_id(b)
    swapped = [ib if t == ia else ia if t == ib else t for t in source.tokens]
    return TaggedSequence.from_ids(swapped, vocab)
