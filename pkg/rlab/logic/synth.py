"""
Deterministic synthetic corpora where correct rewriting is decidable by exact match.

Token families:
  E<i>   entities (first token of every document sentence)
  k<i>   salient content words (only in sentences picked for the summary, unique per document)
  w<i>   filler content words (only in the other sentences)
  n<i>   noise words, sprinkled everywhere and always dropped from the gold summary
  REF    placeholder in a selected sentence, rewritten to the entity of the nearest earlier
         non-selected sentence (document-context rule)
  PRON   replaces the entity of a later summary sentence that repeats the entity of the first
         (summary-context rule)
"""
from __future__ import annotations
from dataclasses import dataclass, fields
from typing import Iterator, Sequence

import numpy as np

from app_config import DEFAULTS
from rlab.core.errors import ConfigError
from rlab.core.logging import get_logger
from rlab.logic.textcore import Document, Sentence, SummExample

log = get_logger(__name__)

REF = "REF"
PRON = "PRON"


def is_entity(token: str) -> bool:
    return token.startswith("E") and token[1:].isdigit()


def is_noise(token: str) -> bool:
    return token.startswith("n") and token[1:].isdigit()


def is_mention(token: str) -> bool:
    """Entity names and pronouns are interchangeable when comparing rewrites."""
    return token == PRON or is_entity(token)


@dataclass
class SynthConfig:
    seed: int = DEFAULTS["synth"]["seed"]
    n_entities: int = DEFAULTS["synth"]["n_entities"]
    n_content: int = DEFAULTS["synth"]["n_content"]
    n_salient: int = DEFAULTS["synth"]["n_salient"]
    n_noise: int = DEFAULTS["synth"]["n_noise"]
    min_doc_sentences: int = DEFAULTS["synth"]["min_doc_sentences"]
    max_doc_sentences: int = DEFAULTS["synth"]["max_doc_sentences"]
    min_summary_sentences: int = DEFAULTS["synth"]["min_summary_sentences"]
    max_summary_sentences: int = DEFAULTS["synth"]["max_summary_sentences"]
    min_content_tokens: int = DEFAULTS["synth"]["min_content_tokens"]
    max_content_tokens: int = DEFAULTS["synth"]["max_content_tokens"]
    noise_rate: float = DEFAULTS["synth"]["noise_rate"]
    coref_rate: float = DEFAULTS["synth"]["coref_rate"]
    ref_rate: float = DEFAULTS["synth"]["ref_rate"]

    def __post_init__(self):
        for name in ("noise_rate", "coref_rate", "ref_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1]")
        for lo, hi in (("min_doc_sentences", "max_doc_sentences"),
                       ("min_summary_sentences", "max_summary_sentences"),
                       ("min_content_tokens", "max_content_tokens")):
            if not 1 <= getattr(self, lo) <= getattr(self, hi):
                raise ConfigError(f"empty range {lo}..{hi}")
        if self.min_content_tokens < 2:
            raise ConfigError("sentences need at least 2 content tokens to stay recoverable")
        if self.n_salient < self.max_summary_sentences * self.max_content_tokens:
            raise ConfigError("n_salient too small for unique salient words per document")
        if min(self.n_entities, self.n_content, self.n_noise) < 1:
            raise ConfigError("token pools must be non-empty")

    @classmethod
    def from_dict(cls, values: dict) -> "SynthConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in names})


def gold_rewrite(sentences: Sequence[Sequence[str]], selection: Sequence[int]) -> list[list[str]]:
    """Reference implementation of the rewrite rules; gold summaries are exactly this."""
    chosen = set(selection)
    first_entity = sentences[selection[0]][0]
    gold: list[list[str]] = []
    for j, i in enumerate(selection):
        toks = [t for t in sentences[i] if not is_noise(t)]
        if REF in toks:
            prev = next((p for p in range(i - 1, -1, -1) if p not in chosen), None)
            if prev is None:
                toks = [t for t in toks if t != REF]
            else:
                toks = [sentences[prev][0] if t == REF else t for t in toks]
        if j > 0 and toks[0] == first_entity:
            toks[0] = PRON
        gold.append(toks)
    return gold


def _example(cfg: SynthConfig, index: int) -> SummExample:
    # one generator per example: shards can be produced independently
    rng = np.random.default_rng([cfg.seed, index])
    n_doc = int(rng.integers(cfg.min_doc_sentences, cfg.max_doc_sentences + 1))
    n_sum = min(n_doc, int(rng.integers(cfg.min_summary_sentences, cfg.max_summary_sentences + 1)))
    selection = sorted(int(i) for i in rng.choice(n_doc, size=n_sum, replace=False))
    chosen = set(selection)

    entities = [int(rng.integers(cfg.n_entities)) for _ in range(n_doc)]
    first = entities[selection[0]]
    for i in selection[1:]:
        if rng.random() < cfg.coref_rate:
            entities[i] = first
        elif entities[i] == first:
            entities[i] = (first + 1) % cfg.n_entities

    salient = iter(rng.permutation(cfg.n_salient).tolist())
    sentences: list[list[str]] = []
    for i in range(n_doc):
        n_tok = int(rng.integers(cfg.min_content_tokens, cfg.max_content_tokens + 1))
        if i in chosen:
            content = [f"k{next(salient)}" for _ in range(n_tok)]
            if i > 0 and (i - 1) not in chosen and rng.random() < cfg.ref_rate:
                content.insert(int(rng.integers(0, n_tok + 1)), REF)
        else:
            content = [f"w{int(rng.integers(cfg.n_content))}" for _ in range(n_tok)]
        toks = [f"E{entities[i]}"]
        for t in content:
            toks.append(t)
            if rng.random() < cfg.noise_rate:
                toks.append(f"n{int(rng.integers(cfg.n_noise))}")
        sentences.append(toks)

    gold = gold_rewrite(sentences, selection)
    doc = Document(f"synth-{cfg.seed}-{index:06d}", tuple(Sentence(tuple(s)) for s in sentences))
    return SummExample(doc, tuple(Sentence(tuple(s)) for s in gold), tuple(selection))


def generate(cfg: SynthConfig, n_examples: int, start: int = 0) -> Iterator[SummExample]:
    """Examples start … start+n-1; identical for identical (cfg, index)."""
    if n_examples < 1:
        raise ConfigError("n_examples must be >= 1")
    log.info("event=synth_start seed=%d n=%d start=%d", cfg.seed, n_examples, start)
    for index in range(start, start + n_examples):
        yield _example(cfg, index)
