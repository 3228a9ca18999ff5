"""
Constrained beam search over the extended summary sequence Y′.

Every mode decodes the same kind of sequence (identifier, words…, "</S>")* "</SUM>"; the modes
differ only in which identifiers are allowed where:
  external         identifiers are forced <S_1>, <S_2>, … and decoding stops after |E| sentences
  joint            identifiers are chosen freely at sentence boundaries (sentence selection)
  joint_two_stage  all identifiers first, one "</S>", then rewriting forced to follow that plan
"""
from __future__ import annotations
from dataclasses import dataclass, field, replace, fields
from typing import Optional, Protocol, Sequence

import torch

from app_config import DEFAULTS, EOS_SENT_TOKEN, END_SUMMARY_TOKEN, UNK_TOKEN
from rlab.core.errors import ConfigError, DataError
from rlab.core.logging import get_logger
from rlab.logic.align import (
    MODES, OracleAlignment, TaggedSequence, build_external, natural_source, step_tag,
)
from rlab.logic.textcore import Document, Vocab, is_reserved, parse_ident

log = get_logger(__name__)
NEG_INF = float("-inf")


@dataclass
class DecodeConfig:
    beam_size: int = DEFAULTS["decode"]["beam_size"]
    min_length: int = DEFAULTS["decode"]["min_length"]
    max_length: int = DEFAULTS["decode"]["max_length"]
    alpha: float = DEFAULTS["decode"]["alpha"]
    block_trigrams: bool = DEFAULTS["decode"]["block_trigrams"]
    mode: str = "external"
    dedup_selection: bool = DEFAULTS["decode"]["dedup_selection"]

    def __post_init__(self):
        if not 0 < self.min_length <= self.max_length:
            raise ConfigError(f"need 0 < min_length <= max_length, got {self.min_length}/{self.max_length}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.beam_size < 1:
            raise ConfigError("beam_size must be >= 1")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")

    @classmethod
    def from_dict(cls, values: dict) -> "DecodeConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in names})


def length_penalty(length: int, alpha: float) -> float:
    """((5 + |Y|) / 6) ** alpha"""
    return ((5.0 + length) / 6.0) ** alpha


def has_repeated_trigram(tokens: Sequence[str]) -> bool:
    # structural tokens leave the windows; "<UNK>" is emitted as a word and stays
    words = [t for t in tokens if t == UNK_TOKEN or not is_reserved(t)]
    seen = set()
    for i in range(len(words) - 2):
        tri = (words[i], words[i + 1], words[i + 2])
        if tri in seen:
            return True
        seen.add(tri)
    return False


# ───────────────────────────────────────────────────────────────────────────────
# Hypotheses
# ───────────────────────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...] = ()
    tags: tuple[int, ...] = ()
    log_prob: float = 0.0
    sentences: int = 0                 # closed "</S>" sentences (plan excluded)
    finished: bool = False
    selected: tuple[int, ...] = ()     # 0-based document indices chosen by identifiers
    tag_state: int = 0
    open_words: int = -1               # -1 at a sentence boundary, else words in the open sentence
    plan_closed: bool = False
    trigrams: frozenset = frozenset()
    last_words: tuple[int, ...] = ()
    fallback_used: bool = False

    @property
    def seq(self) -> TaggedSequence:
        return TaggedSequence(self.tokens, self.tags)

    def score(self, alpha: float) -> float:
        return self.log_prob / length_penalty(max(1, len(self.tokens)), alpha)


class StepScorer(Protocol):
    vocab: Vocab

    def start(self, source: TaggedSequence): ...

    def step(self, memory, prefixes: Sequence[TaggedSequence]) -> torch.Tensor: ...


# ───────────────────────────────────────────────────────────────────────────────
# Grammars: which tokens may follow a hypothesis
# ───────────────────────────────────────────────────────────────────────────────
class Grammar:
    """Unconstrained words followed by "</SUM>"; subclasses add sentence structure."""
    has_plan = False

    def __init__(self, vocab: Vocab, cfg: DecodeConfig):
        self.vocab = vocab
        self.cfg = cfg
        v = len(vocab)
        reserved = torch.zeros(v, dtype=torch.bool)
        reserved[:vocab.n_reserved] = True
        self.words = ~reserved
        self.words[vocab.unk_id] = True
        self.end = self._only(vocab.end_id)
        self.close = self._only(vocab.eos_sent_id)

    def _only(self, *ids: int) -> torch.Tensor:
        m = torch.zeros(len(self.vocab), dtype=torch.bool)
        m[list(ids)] = True
        return m

    def _idents(self, ks: Sequence[int]) -> torch.Tensor:
        m = torch.zeros(len(self.vocab), dtype=torch.bool)
        for k in ks:
            m[self.vocab.ident_id(k)] = True
        return m

    def check_budget(self) -> None:
        if self.cfg.max_length < 1:
            raise ConfigError("max_length must be >= 1")

    def remaining(self, h: Hypothesis) -> int:
        return self.cfg.max_length - len(h.tokens)

    def below_min(self, h: Hypothesis, extra: int = 1) -> bool:
        return len(h.tokens) + extra < self.cfg.min_length

    def allowed(self, h: Hypothesis) -> torch.Tensor:
        if self.remaining(h) <= 1:
            return self.end
        if self.below_min(h):
            return self.words
        return self.words | self.end

    def selects(self, h: Hypothesis) -> bool:
        return False

    def advance(self, h: Hypothesis, tok: int, log_prob: float) -> Hypothesis:
        v = self.vocab
        k = v.ident_of(tok)
        tag, state = step_tag(h.tag_state, k, tok == v.eos_sent_id)
        upd = dict(tokens=h.tokens + (tok,), tags=h.tags + (tag,), log_prob=log_prob, tag_state=state)
        if tok == v.end_id:
            upd["finished"] = True
        elif k is not None:
            upd["open_words"] = 0
            if self.selects(h):
                upd["selected"] = h.selected + (k - 1,)
        elif tok == v.eos_sent_id:
            if self.has_plan and not h.plan_closed:
                upd["plan_closed"] = True
            else:
                upd["sentences"] = h.sentences + 1
            upd["open_words"] = -1
        else:
            if h.open_words >= 0:
                upd["open_words"] = h.open_words + 1
            if len(h.last_words) == 2:
                upd["trigrams"] = h.trigrams | {(*h.last_words, tok)}
            upd["last_words"] = (h.last_words + (tok,))[-2:]
        return replace(h, **upd)

    def blocked(self, h: Hypothesis) -> list[int]:
        """Words that would repeat a trigram already in h."""
        if len(h.last_words) < 2:
            return []
        a, b = h.last_words
        return [t[2] for t in h.trigrams if t[0] == a and t[1] == b]


class _SentenceGrammar(Grammar):
    """Shared rules inside an open sentence: at least one word, then words or "</S>"."""

    def inside(self, h: Hypothesis, after_close: int, last_sentence: bool) -> torch.Tensor:
        # after_close: tokens still needed once this sentence is closed
        if h.open_words == 0:
            return self.words
        if self.remaining(h) - 1 < 1 + after_close:
            return self.close
        if last_sentence and self.below_min(h, extra=2):
            return self.words
        return self.words | self.close


class ExternalGrammar(_SentenceGrammar):
    def __init__(self, vocab: Vocab, cfg: DecodeConfig, n_sentences: int):
        super().__init__(vocab, cfg)
        self.n = n_sentences
        self.check_budget()

    def check_budget(self) -> None:
        if self.cfg.max_length < 3 * self.n + 1:
            raise ConfigError(f"max_length={self.cfg.max_length} cannot hold {self.n} sentences")

    def allowed(self, h: Hypothesis) -> torch.Tensor:
        if h.open_words < 0:
            if h.sentences < self.n:
                return self._idents([h.sentences + 1])
            return self.end
        left = self.n - h.sentences - 1
        return self.inside(h, 3 * left + 1, left == 0)


class JointGrammar(_SentenceGrammar):
    def __init__(self, vocab: Vocab, cfg: DecodeConfig, n_doc: int):
        super().__init__(vocab, cfg)
        self.n_doc = n_doc
        self.check_budget()

    def check_budget(self) -> None:
        if self.cfg.max_length < 4:
            raise ConfigError("max_length must be >= 4 to hold one sentence")

    def selects(self, h: Hypothesis) -> bool:
        return True

    def choices(self, h: Hypothesis) -> list[int]:
        taken = set(h.selected) if self.cfg.dedup_selection else set()
        return [i + 1 for i in range(self.n_doc) if i not in taken]

    def allowed(self, h: Hypothesis) -> torch.Tensor:
        if h.open_words >= 0:
            return self.inside(h, 1, False)
        ks = self.choices(h) if self.remaining(h) >= 4 else []
        if not ks:
            return self.end
        m = self._idents(ks)
        if h.sentences >= 1 and not self.below_min(h):
            m = m | self.end
        return m


class TwoStageGrammar(JointGrammar):
    has_plan = True

    def check_budget(self) -> None:
        if self.cfg.max_length < 6:
            raise ConfigError("max_length must be >= 6 to hold a plan and one sentence")

    def selects(self, h: Hypothesis) -> bool:
        return not h.plan_closed

    def allowed(self, h: Hypothesis) -> torch.Tensor:
        m_sel = len(h.selected)
        if not h.plan_closed:
            # closing the plan with m selections needs "</S>" + 3m + "</SUM>"
            ks = self.choices(h) if self.remaining(h) - 1 >= 3 * (m_sel + 1) + 2 else []
            m = self._idents(ks) if ks else torch.zeros(len(self.vocab), dtype=torch.bool)
            if m_sel >= 1:
                m = m | self.close
            return m
        if h.open_words < 0:
            if h.sentences < m_sel:
                return self._idents([h.selected[h.sentences] + 1])
            return self.end
        left = m_sel - h.sentences - 1
        return self.inside(h, 3 * left + 1, left == 0)


def make_grammar(vocab: Vocab, cfg: DecodeConfig, source: TaggedSequence,
                 n_sentences: Optional[int] = None) -> Grammar:
    if cfg.mode == "external":
        if n_sentences is None:
            n_sentences = max(source.tags, default=0)
        return ExternalGrammar(vocab, cfg, n_sentences)
    n_doc = sum(1 for t in source.tokens if vocab.ident_of(t) is not None)
    if cfg.mode == "joint":
        return JointGrammar(vocab, cfg, n_doc)
    return TwoStageGrammar(vocab, cfg, n_doc)


# ───────────────────────────────────────────────────────────────────────────────
# Search
# ───────────────────────────────────────────────────────────────────────────────
def search(scorer: StepScorer, source: TaggedSequence, grammar: Grammar, cfg: DecodeConfig,
           block_trigrams: bool) -> Optional[Hypothesis]:
    """
    Shrinking beam: each step keeps the best beam_size expansions; expansions ending in "</SUM>"
    leave the beam for the finished pool. Runs until no live hypothesis remains.
    """
    memory = scorer.start(source)
    beam = [Hypothesis()]
    finished: list[Hypothesis] = []
    while beam:
        step_lp = scorer.step(memory, [h.seq for h in beam])
        cands: list[tuple[float, int, int]] = []
        for r, h in enumerate(beam):
            scores = step_lp[r].detach().to("cpu", torch.float64).clone()
            scores.masked_fill_(~grammar.allowed(h), NEG_INF)
            if block_trigrams:
                for w in grammar.blocked(h):
                    scores[w] = NEG_INF
            total = scores + h.log_prob
            k = min(cfg.beam_size, int(torch.isfinite(total).sum()))
            if k == 0:
                continue
            vals, idx = torch.topk(total, k)
            cands.extend((float(s), r, int(t)) for s, t in zip(vals, idx))
        # equal lengths within a step, so raw log-prob ranks like the penalized score
        cands.sort(key=lambda c: (-c[0], c[1], c[2]))
        live: list[Hypothesis] = []
        for s, r, t in cands[:cfg.beam_size]:
            nh = grammar.advance(beam[r], t, s)
            (finished if nh.finished else live).append(nh)
        beam = live
    if not finished:
        return None
    return max(finished, key=lambda h: h.score(cfg.alpha))


def beam_search(model: StepScorer, source: TaggedSequence, cfg: DecodeConfig,
                n_sentences: Optional[int] = None, grammar: Optional[Grammar] = None) -> Hypothesis:
    grammar = grammar or make_grammar(model.vocab, cfg, source, n_sentences)
    best = search(model, source, grammar, cfg, cfg.block_trigrams)
    if best is None and cfg.block_trigrams:
        log.warning("event=fallback reason=all_paths_blocked mode=%s", cfg.mode)
        best = search(model, source, grammar, cfg, False)
        if best is not None:
            best = replace(best, fallback_used=True)
    if best is None:
        raise DataError("beam search produced no finished hypothesis")
    return best


# ───────────────────────────────────────────────────────────────────────────────
# Summaries
# ───────────────────────────────────────────────────────────────────────────────
@dataclass
class SummaryOutput:
    sentences: list[tuple[int, list[str]]]
    hypothesis: Hypothesis
    fallback_used: bool = False
    duplicates: dict[int, int] = field(default_factory=dict)

    @property
    def selected(self) -> list[int]:
        return [i for i, _ in self.sentences]

    @property
    def summary(self) -> list[list[str]]:
        return [toks for _, toks in self.sentences]

    def to_row(self, ex_id: str) -> dict:
        return {"id": ex_id, "summary": self.summary, "selected": self.selected,
                "fallback_used": self.fallback_used}


def parse_sentences(tokens: Sequence[str], mode: str,
                    alignment: Optional[Sequence[int]] = None) -> list[tuple[int, list[str]]]:
    """
    Split a decoded Y′ on "</S>"; identifiers become 0-based selections. In external mode
    <S_j> maps back through the alignment; two-stage plans are skipped.
    """
    toks = list(tokens)
    if mode == "joint_two_stage" and EOS_SENT_TOKEN in toks:
        toks = toks[toks.index(EOS_SENT_TOKEN) + 1:]
    out: list[tuple[int, list[str]]] = []
    current: Optional[int] = None
    words: list[str] = []
    for t in toks:
        k = parse_ident(t)
        if k is not None:
            current, words = k, []
        elif t == EOS_SENT_TOKEN:
            if current is not None:
                idx = alignment[current - 1] if mode == "external" and alignment is not None else current - 1
                out.append((idx, words))
            current, words = None, []
        elif t == END_SUMMARY_TOKEN:
            break
        elif not is_reserved(t):
            words.append(t)
    return out


def summarize(model, document: Document, mode: str, external_alignment: Optional[OracleAlignment] = None,
              cfg: Optional[DecodeConfig] = None) -> SummaryOutput:
    cfg = replace(cfg or DecodeConfig(mode=mode), mode=mode)
    vocab = model.vocab
    duplicates: dict[int, int] = {}
    if hasattr(model, "eval"):
        model.eval()
    if mode == "external":
        if external_alignment is None:
            raise DataError(f"example {document.id}: external mode needs an alignment")
        inputs = build_external(document, external_alignment, vocab)
        source, n_sent, duplicates = inputs.source, len(external_alignment), inputs.duplicates
    else:
        source, n_sent = natural_source(document, vocab), None
    hyp = beam_search(model, source, cfg, n_sentences=n_sent)
    alignment = list(external_alignment) if external_alignment is not None else None
    sentences = parse_sentences(vocab.decode(hyp.tokens), mode, alignment)
    if hyp.fallback_used:
        log.info("event=fallback id=%s", document.id)
    return SummaryOutput(sentences, hyp, hyp.fallback_used, duplicates)
