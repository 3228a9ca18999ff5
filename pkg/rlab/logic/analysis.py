"""
Diagnostics over corpora and model outputs: edit categories, extraction positions, word counts,
trigram-blocking sensitivity and the tag-swap probe. Reports go out as CSV.
"""
from __future__ import annotations
import csv
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from rlab.core.errors import DataError
from rlab.core.logging import get_logger
from rlab.logic.align import OracleAlignment, TaggedSequence, build_external, swap_tags
from rlab.logic.decode import DecodeConfig, beam_search, has_repeated_trigram, parse_sentences, summarize
from rlab.logic.rouge import CorpusRouge, corpus_rouge
from rlab.logic.synth import is_mention
from rlab.logic.textcore import Sentence, SummExample, is_reserved

log = get_logger(__name__)


# ───────────────────────────────────────────────────────────────────────────────
# Edit categories
# ───────────────────────────────────────────────────────────────────────────────
class EditCategory(str, Enum):
    REWRITTEN = "Rewritten"
    COMPRESSED = "Compressed"
    UNCHANGED = "Unchanged"


def _tokens(s: Sentence | Sequence[str]) -> list[str]:
    return list(s.tokens) if isinstance(s, Sentence) else list(s)


def edit_script(source: Sequence[str], target: Sequence[str]) -> list[tuple[str, Optional[str]]]:
    """
    Minimal keep/delete/insert script from the token LCS table; a delete directly followed
    by an insert is reported as one "modify".
    """
    n, m = len(source), len(target)
    lcs = np.zeros((n + 1, m + 1), dtype=np.int32)
    for i in range(n - 1, -1, -1):
        for j in range(m - 1, -1, -1):
            if source[i] == target[j]:
                lcs[i, j] = lcs[i + 1, j + 1] + 1
            else:
                lcs[i, j] = max(lcs[i + 1, j], lcs[i, j + 1])

    raw: list[tuple[str, Optional[str]]] = []
    i = j = 0
    while i < n or j < m:
        if i < n and j < m and source[i] == target[j]:
            raw.append(("keep", source[i]))
            i, j = i + 1, j + 1
        elif i < n and (j == m or lcs[i + 1, j] >= lcs[i, j + 1]):
            raw.append(("delete", source[i]))
            i += 1
        else:
            raw.append(("insert", target[j]))
            j += 1

    script: list[tuple[str, Optional[str]]] = []
    for op in raw:
        if op[0] == "insert" and script and script[-1][0] == "delete":
            script[-1] = ("modify", op[1])
        else:
            script.append(op)
    return [op for op in script if op[0] != "keep"]


def categorize_edit(extracted: Sentence | Sequence[str], rewritten: Sentence | Sequence[str]) -> EditCategory:
    ops = {op for op, _ in edit_script(_tokens(extracted), _tokens(rewritten))}
    if ops & {"insert", "modify"}:
        return EditCategory.REWRITTEN
    if ops:
        return EditCategory.COMPRESSED
    return EditCategory.UNCHANGED


def edit_proportions(pairs: Iterable[tuple[Sentence | Sequence[str], Sentence | Sequence[str]]]) -> dict[EditCategory, float]:
    counts = {c: 0 for c in EditCategory}
    for extracted, rewritten in pairs:
        counts[categorize_edit(extracted, rewritten)] += 1
    total = sum(counts.values())
    if total == 0:
        raise DataError("no sentence pairs to categorize")
    return {c: n / total for c, n in counts.items()}


# ───────────────────────────────────────────────────────────────────────────────
# Distributions
# ───────────────────────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class ExtractionHistogram:
    selected: np.ndarray      # proportion of all selections landing on each position
    duplicates: np.ndarray    # proportion of all repeated selections per position

    def rows(self) -> list[dict]:
        return [{"position": p, "selected": float(s), "duplicates": float(d)}
                for p, (s, d) in enumerate(zip(self.selected, self.duplicates))]


def _normalize(counts: np.ndarray) -> np.ndarray:
    total = counts.sum()
    return counts / total if total > 0 else np.zeros_like(counts, dtype=np.float64)


def extraction_histogram(alignments: Iterable[Sequence[int]], n_doc_sentences: int) -> ExtractionHistogram:
    """
    Positions at or beyond n_doc_sentences widen the table. A position chosen c >= 2 times in
    one example adds c - 1 to its duplicate count.
    """
    alignments = [list(a) for a in alignments]
    width = max([n_doc_sentences, *(max(a) + 1 for a in alignments if a)])
    selected = np.zeros(width, dtype=np.float64)
    duplicates = np.zeros(width, dtype=np.float64)
    for a in alignments:
        if any(i < 0 for i in a):
            raise DataError(f"negative sentence position in {a}")
        pos, counts = np.unique(np.asarray(a, dtype=np.int64), return_counts=True)
        selected[pos] += counts
        duplicates[pos] += np.maximum(counts - 1, 0)
    return ExtractionHistogram(_normalize(selected), _normalize(duplicates))


def _words(summary: Iterable[Sentence | Sequence[str]]) -> list[list[str]]:
    return [[t for t in _tokens(s) if not is_reserved(t)] for s in summary]


def word_count_stats(summaries: Iterable[Iterable[Sentence | Sequence[str]]]) -> float:
    """Mean words per summary; identifiers and sentence ends do not count."""
    counts = [sum(len(s) for s in _words(summary)) for summary in summaries]
    if not counts:
        raise DataError("no summaries to count")
    return float(np.mean(counts))


def sentence_count_stats(summaries: Iterable[Iterable[Sentence | Sequence[str]]]) -> float:
    counts = [len(list(summary)) for summary in summaries]
    if not counts:
        raise DataError("no summaries to count")
    return float(np.mean(counts))


# ───────────────────────────────────────────────────────────────────────────────
# Baselines and decoding-time diagnostics
# ───────────────────────────────────────────────────────────────────────────────
def extractive_baseline(corpus: Sequence[SummExample], selections: Sequence[Sequence[int]],
                        dedup: bool = False) -> CorpusRouge:
    """ROUGE of the concatenated selected document sentences against the gold summaries."""
    if len(corpus) != len(selections):
        raise DataError(f"{len(corpus)} examples but {len(selections)} selections")
    pairs = []
    for ex, sel in zip(corpus, selections):
        OracleAlignment(tuple(sel)).check(len(ex.document))
        chosen = list(dict.fromkeys(sel)) if dedup else list(sel)
        pairs.append(([ex.document.sentences[i].tokens for i in chosen], [s.tokens for s in ex.summary]))
    return corpus_rouge(pairs)


@dataclass
class BlockingReport:
    blocked: CorpusRouge
    unblocked: CorpusRouge
    repeated_blocked: int      # outputs with a repeated trigram while blocking (expected 0)
    fallbacks: int

    @property
    def delta(self) -> dict[str, float]:
        """unblocked minus blocked F1; large drops mean the model generates redundancy."""
        return {name: getattr(self.unblocked, name).f1 - getattr(self.blocked, name).f1
                for name in ("r1", "r2", "rl")}

    def rows(self) -> list[dict]:
        rows = []
        for name in ("r1", "r2", "rl"):
            rows.append({"metric": name,
                         "blocked_f1": getattr(self.blocked, name).f1,
                         "unblocked_f1": getattr(self.unblocked, name).f1,
                         "delta_f1": self.delta[name]})
        return rows


def blocking_sensitivity(model, corpus: Sequence[SummExample], cfg: DecodeConfig) -> BlockingReport:
    """Decodes the corpus with and without trigram blocking; external mode uses the oracle labels."""
    outputs = {}
    repeated = fallbacks = 0
    for block in (True, False):
        run_cfg = replace(cfg, block_trigrams=block)
        pairs = []
        for ex in corpus:
            alignment = OracleAlignment(ex.oracle) if ex.oracle is not None else None
            out = summarize(model, ex.document, cfg.mode, alignment, run_cfg)
            if block:
                fallbacks += int(out.fallback_used)
                repeated += int(not out.fallback_used and has_repeated_trigram(model.vocab.decode(out.hypothesis.tokens)))
            pairs.append((out.summary, [s.tokens for s in ex.summary]))
        outputs[block] = corpus_rouge(pairs)
    report = BlockingReport(outputs[True], outputs[False], repeated, fallbacks)
    log.info("event=blocking_sensitivity n=%d d_r1=%.4f d_r2=%.4f d_rl=%.4f fallbacks=%d",
             len(corpus), report.delta["r1"], report.delta["r2"], report.delta["rl"], fallbacks)
    return report


@dataclass
class SwapProbe:
    before: list[list[str]]
    after: list[list[str]]
    i: int
    j: int
    content_swapped: bool


def _canonical(tokens: Sequence[str], mention: Callable[[str], bool]) -> list[str]:
    return ["<mention>" if mention(t) else t for t in tokens]


def tag_swap_probe(model, source: TaggedSequence, i: int, j: int, cfg: Optional[DecodeConfig] = None,
                   mention: Callable[[str], bool] = is_mention) -> SwapProbe:
    """
    Decode an external-mode X′ before and after exchanging tags i and j (1-based summary
    positions). The content swapped when output sentence i afterwards matches output sentence j
    before, entity names and pronouns counted as equal.
    """
    vocab = model.vocab
    cfg = replace(cfg or DecodeConfig(), mode="external")
    present = {vocab.ident_of(t) for t in source.tokens} - {None, 0}
    for k in (i, j):
        if k not in present:
            raise DataError(f"tag {k} is not selected in the source")
    n = max(present)
    if hasattr(model, "eval"):
        model.eval()

    def run(src: TaggedSequence) -> list[list[str]]:
        hyp = beam_search(model, src, cfg, n_sentences=n)
        return [words for _, words in parse_sentences(vocab.decode(hyp.tokens), "external")]

    before = run(source)
    after = run(swap_tags(source, i, j, vocab)) if i != j else before
    swapped = (len(after) >= i and len(before) >= j
               and _canonical(after[i - 1], mention) == _canonical(before[j - 1], mention))
    return SwapProbe(before, after, i, j, swapped)


def swap_probe_set(model, corpus: Sequence[SummExample], cfg: Optional[DecodeConfig] = None,
                   limit: Optional[int] = None) -> list[SwapProbe]:
    """Probes the first two tags of every example whose oracle selects two distinct sentences."""
    probes: list[SwapProbe] = []
    for ex in corpus:
        if ex.oracle is None or len(set(ex.oracle[:2])) < 2:
            continue
        source = build_external(ex.document, OracleAlignment(ex.oracle), model.vocab).source
        probes.append(tag_swap_probe(model, source, 1, 2, cfg))
        if limit is not None and len(probes) >= limit:
            break
    return probes


# ───────────────────────────────────────────────────────────────────────────────
# Reports
# ───────────────────────────────────────────────────────────────────────────────
def write_csv(path: str | Path, rows: Sequence[dict]) -> Path:
    path = Path(path)
    if not rows:
        raise DataError(f"{path.name}: nothing to write")
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    return path


def format_table(rows: Sequence[dict]) -> str:
    """Plain-text table for the terminal; floats shown with four decimals."""
    if not rows:
        return ""
    cols = list(rows[0])
    cells = [[f"{r[c]:.4f}" if isinstance(r[c], float) else str(r[c]) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[k]) for row in cells)) for k, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)
