"""
Corpus data model, vocabulary and JSON Lines I/O.

Corpora are pretokenized: every sentence is a list of whitespace-free token strings.
On disk one example per line:
    {"id": str, "document": [[tok, ...], ...], "summary": [[tok, ...], ...], "oracle": [int, ...]}
"oracle" is optional and 0-based.
"""
from __future__ import annotations
import hashlib
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

from app_config import (
    PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_SENT_TOKEN, END_SUMMARY_TOKEN,
    IDENT_PREFIX, IDENT_SUFFIX, DEFAULT_MAX_TAG,
)
from rlab.core.errors import DataError, ConfigError
from rlab.core.logging import get_logger

log = get_logger(__name__)

FIXED_RESERVED = (PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_SENT_TOKEN, END_SUMMARY_TOKEN)


def ident_token(k: int) -> str:
    return f"{IDENT_PREFIX}{k}{IDENT_SUFFIX}"


def parse_ident(token: str) -> Optional[int]:
    """k for "<S_k>", None for anything else."""
    if token.startswith(IDENT_PREFIX) and token.endswith(IDENT_SUFFIX):
        body = token[len(IDENT_PREFIX):len(token) - len(IDENT_SUFFIX)]
        if body.isdigit():
            return int(body)
    return None


def is_reserved(token: str) -> bool:
    return token in FIXED_RESERVED or parse_ident(token) is not None


# ───────────────────────────────────────────────────────────────────────────────
# Domain types
# ───────────────────────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class Sentence:
    tokens: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.tokens:
            raise DataError("sentence must contain at least one token")
        bad = [t for t in self.tokens if is_reserved(t)]
        if bad:
            raise DataError(f"sentence contains reserved token(s): {bad[:3]}")

    def __len__(self) -> int:
        return len(self.tokens)

    def text(self) -> str:
        return " ".join(self.tokens)

    @classmethod
    def of(cls, text: str) -> "Sentence":
        return cls(tuple(text.split()))


@dataclass(frozen=True)
class Document:
    id: str
    sentences: tuple[Sentence, ...]

    def __post_init__(self):
        object.__setattr__(self, "sentences", tuple(self.sentences))
        if not self.sentences:
            raise DataError(f"example {self.id}: document has no sentences")

    def __len__(self) -> int:
        return len(self.sentences)


@dataclass(frozen=True)
class SummExample:
    document: Document
    summary: tuple[Sentence, ...]
    oracle: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "summary", tuple(self.summary))
        if not self.summary:
            raise DataError(f"example {self.id}: summary has no sentences")
        if self.oracle is not None:
            try:
                oracle = tuple(int(i) for i in self.oracle)
            except (TypeError, ValueError) as ex:
                raise DataError(f"example {self.id}: oracle entries must be integers") from ex
            object.__setattr__(self, "oracle", oracle)
            if len(oracle) != len(self.summary):
                raise DataError(
                    f"example {self.id}: oracle has {len(oracle)} entries for {len(self.summary)} summary sentences"
                )
            n = len(self.document)
            if any(i < 0 or i >= n for i in oracle):
                raise DataError(f"example {self.id}: oracle index out of range for {n}-sentence document")

    @property
    def id(self) -> str:
        return self.document.id

    def with_oracle(self, oracle: Sequence[int]) -> "SummExample":
        return SummExample(self.document, self.summary, tuple(oracle))


# ───────────────────────────────────────────────────────────────────────────────
# Vocabulary
# ───────────────────────────────────────────────────────────────────────────────
class Vocab:
    """
    token <-> id maps. Reserved ids come first: PAD, UNK, BOS, "</S>", "</SUM>", then <S_0> … <S_K>.
    Corpus tokens follow in (descending frequency, first occurrence) order.
    """

    def __init__(self, tokens: Sequence[str], max_tag: int):
        if max_tag < 1:
            raise ConfigError("max_tag (K) must be >= 1")
        self.max_tag = int(max_tag)
        self.itos: list[str] = list(tokens)
        self.stoi: dict[str, int] = {}
        for i, t in enumerate(self.itos):
            if t in self.stoi:
                raise DataError(f"duplicate vocabulary entry {t!r}")
            self.stoi[t] = i
        expected = list(FIXED_RESERVED) + [ident_token(k) for k in range(self.max_tag + 1)]
        if self.itos[:len(expected)] != expected:
            raise DataError("vocabulary does not start with the reserved token block")
        self.pad_id = self.stoi[PAD_TOKEN]
        self.unk_id = self.stoi[UNK_TOKEN]
        self.bos_id = self.stoi[BOS_TOKEN]
        self.eos_sent_id = self.stoi[EOS_SENT_TOKEN]
        self.end_id = self.stoi[END_SUMMARY_TOKEN]
        self._ident0 = self.stoi[ident_token(0)]
        self.n_reserved = len(expected)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    # Identifier helpers, O(1)
    def ident_id(self, k: int) -> int:
        if not 0 <= k <= self.max_tag:
            raise DataError(f"identifier <S_{k}> exceeds K={self.max_tag}")
        return self._ident0 + k

    def ident_of(self, token_id: int) -> Optional[int]:
        k = token_id - self._ident0
        return k if 0 <= k <= self.max_tag else None

    def is_reserved_id(self, token_id: int) -> bool:
        return 0 <= token_id < self.n_reserved

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, self.unk_id) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def fingerprint(self) -> str:
        """sha256 over the id-ordered token list; checkpoints refuse a different vocabulary."""
        h = hashlib.sha256()
        for t in self.itos:
            h.update(t.encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()


def build_vocab(corpus: Iterable[SummExample], min_freq: int = 1, max_tag: int = DEFAULT_MAX_TAG) -> Vocab:
    if max_tag < 1:
        raise ConfigError("max_tag (K) must be >= 1")
    counts: Counter[str] = Counter()
    first_seen: dict[str, int] = {}
    n_examples = 0
    for ex in corpus:
        n_examples += 1
        for sent in (*ex.document.sentences, *ex.summary):
            for t in sent.tokens:
                counts[t] += 1
                first_seen.setdefault(t, len(first_seen))
    if n_examples == 0:
        raise DataError("cannot build a vocabulary from an empty corpus")
    kept = [t for t in counts if counts[t] >= min_freq]
    kept.sort(key=lambda t: (-counts[t], first_seen[t]))
    reserved = list(FIXED_RESERVED) + [ident_token(k) for k in range(max_tag + 1)]
    log.info("event=vocab_built examples=%d tokens=%d kept=%d min_freq=%d K=%d",
             n_examples, len(counts), len(kept), min_freq, max_tag)
    return Vocab(reserved + kept, max_tag)


# ───────────────────────────────────────────────────────────────────────────────
# JSON Lines I/O
# ───────────────────────────────────────────────────────────────────────────────
def _sentences(value, field: str, ex_id: str) -> tuple[Sentence, ...]:
    if not isinstance(value, list):
        raise DataError(f"example {ex_id}: {field} must be a list of sentences")
    if not value:
        raise DataError(f"example {ex_id}: empty {field}")
    for s in value:
        if not isinstance(s, list) or not all(isinstance(t, str) for t in s):
            raise DataError(f"example {ex_id}: every {field} sentence must be a list of string tokens")
    try:
        return tuple(Sentence(tuple(s)) for s in value)
    except DataError as ex:
        raise DataError(f"example {ex_id}: {ex}") from ex


def example_from_dict(obj: dict) -> SummExample:
    try:
        ex_id = str(obj["id"])
        doc = obj["document"]
        summ = obj["summary"]
    except (KeyError, TypeError) as ex:
        raise DataError(f"missing field {ex}") from ex
    document = Document(ex_id, _sentences(doc, "document", ex_id))
    summary = _sentences(summ, "summary", ex_id)
    oracle = obj.get("oracle")
    if oracle is not None:
        # bool is an int subclass; reject it explicitly
        if not isinstance(oracle, list) or not all(isinstance(i, int) and not isinstance(i, bool) for i in oracle):
            raise DataError(f"example {ex_id}: oracle must be a list of integers")
        oracle = tuple(oracle)
    return SummExample(document, summary, oracle)


def example_to_dict(ex: SummExample) -> dict:
    obj = {
        "id": ex.id,
        "document": [list(s.tokens) for s in ex.document.sentences],
        "summary": [list(s.tokens) for s in ex.summary],
    }
    if ex.oracle is not None:
        obj["oracle"] = list(ex.oracle)
    return obj


def read_corpus(path: str | Path) -> Iterator[SummExample]:
    """Stream examples; errors name the 1-based line number."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as ex:
                raise DataError(f"{path}:{lineno}: malformed JSON ({ex.msg})") from ex
            if not isinstance(obj, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            try:
                yield example_from_dict(obj)
            except DataError as ex:
                raise DataError(f"{path}:{lineno}: {ex}") from ex


def write_corpus(path: str | Path, examples: Iterable[SummExample]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            fh.write(json.dumps(example_to_dict(ex), ensure_ascii=False))
            fh.write("\n")
            n += 1
    return n


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False))
            fh.write("\n")
            n += 1
    return n


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as ex:
                raise DataError(f"{path}:{lineno}: malformed JSON ({ex.msg})") from ex
