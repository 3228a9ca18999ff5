# rlab/cli.py
"""
Command-line pipeline: synth → label → train → summarize → evaluate / analyze.

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
Log lines are key=value; RLAB_LOG sets the verbosity.
"""
from __future__ import annotations
import argparse
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Sequence, TypeVar

import torch

from app_config import (
    APP_DESCRIPTION, APP_NAME, CLI_EXAMPLES, CLI_NAME, REPORT_CSV_FILENAMES, TAGLINE, banner,
    ensure_app_dirs, version_string,
)
from rlab.core.config import Settings, get_settings
from rlab.core.errors import ConfigError, DataError, UsageError
from rlab.core.logging import get_logger, setup_logging
from rlab.logic import analysis
from rlab.logic.align import MODES, OracleAlignment, lead_alignment, oracle_extract
from rlab.logic.decode import DecodeConfig, summarize
from rlab.logic.model import ModelConfig, RewriterModel, load_checkpoint
from rlab.logic.rouge import corpus_rouge
from rlab.logic.synth import SynthConfig, generate
from rlab.logic.textcore import (
    SummExample, build_vocab, read_corpus, read_jsonl, write_corpus, write_jsonl,
)
from rlab.logic.training import TrainConfig, train

log = get_logger(__name__)

T = TypeVar("T")
R = TypeVar("R")

INPUT_ARGS = ("inp", "ref", "hyp", "ckpt")
OVERRIDE_GROUPS = ("synth", "model", "train", "decode", "vocab")


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad flags; rlab reserves 2 for data errors."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


# ───────────────────────────────────────────────────────────────────────────────
# Run configuration
# ───────────────────────────────────────────────────────────────────────────────
@dataclass
class RunConfig:
    command: str
    inputs: dict[str, Path] = field(default_factory=dict)
    output: Optional[Path] = None
    mode: Optional[str] = None
    seed: Optional[int] = None
    jobs: int = 1
    overrides: dict[str, dict[str, Any]] = field(default_factory=dict)

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        values = vars(args)
        overrides: dict[str, dict[str, Any]] = {g: {} for g in OVERRIDE_GROUPS}
        for key, value in values.items():
            group, dot, name = key.partition(".")
            if dot and value is not None:
                overrides[group][name] = value
        seed = values.get("seed")
        if seed is not None:
            for group in ("synth", "model", "train"):
                overrides[group].setdefault("seed", seed)
        inputs = {k: Path(values[k]) for k in INPUT_ARGS if values.get(k)}
        out = values.get("out")
        return cls(args.command, inputs, Path(out) if out else None, values.get("mode"),
                   seed, values.get("jobs") or 1, overrides)

    def validate(self) -> None:
        """Fail before any work starts."""
        for name, path in self.inputs.items():
            if not path.is_file():
                raise UsageError(f"--{'in' if name == 'inp' else name}: no such file: {path}")
        if self.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        if self.mode is not None and self.mode not in MODES:
            raise UsageError(f"--mode must be one of {MODES}")
        if self.output is not None:
            try:
                self.output.parent.mkdir(parents=True, exist_ok=True)
            except OSError as ex:
                raise UsageError(f"--out: cannot create {self.output.parent} ({ex})") from ex

    def config(self, group: str, settings: Settings) -> dict[str, Any]:
        return {**settings.group(group), **self.overrides.get(group, {})}


def parallel_map(fn: Callable[[T], R], items: Sequence[T], jobs: int) -> list[R]:
    """Order of results always follows the order of items."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _labeled(corpus: Iterable[SummExample]) -> list[SummExample]:
    return [ex if ex.oracle is not None else ex.with_oracle(oracle_extract(ex.document, ex.summary).indices)
            for ex in corpus]


def make_extractor(spec: str) -> Callable[[SummExample], OracleAlignment]:
    """'oracle', 'lead<m>' (lead3 = LEAD-3) or 'file:<path>' with {"id", "selected"} rows."""
    if spec == "oracle":
        return lambda ex: OracleAlignment(ex.oracle) if ex.oracle is not None else oracle_extract(ex.document, ex.summary)
    lead = re.fullmatch(r"lead(\d+)", spec)
    if lead:
        m = int(lead.group(1))
        if m < 1:
            raise UsageError("lead extractor needs m >= 1")
        return lambda ex: lead_alignment(ex.document, m)
    if spec.startswith("file:"):
        path = Path(spec[len("file:"):])
        if not path.is_file():
            raise UsageError(f"--extractor: no such file: {path}")
        selections: dict[str, tuple[int, ...]] = {}
        for row in read_jsonl(path):
            try:
                selections[str(row["id"])] = tuple(int(i) for i in row["selected"])
            except (KeyError, TypeError, ValueError) as ex:
                raise DataError(f"{path}: bad selection row {row!r}") from ex

        def from_file(ex: SummExample) -> OracleAlignment:
            if ex.id not in selections:
                raise DataError(f"{path}: no selection for example {ex.id}")
            return OracleAlignment(selections[ex.id])
        return from_file
    raise UsageError(f"unknown extractor {spec!r}; use oracle, lead3 or file:<path>")


def _hyp_rows(path: Path) -> dict[str, dict]:
    rows: dict[str, dict] = {}
    for row in read_jsonl(path):
        try:
            rows[str(row["id"])] = {"summary": [list(map(str, s)) for s in row["summary"]],
                                    "selected": [int(i) for i in row.get("selected", [])]}
        except (KeyError, TypeError, ValueError) as ex:
            raise DataError(f"{path}: malformed summary row ({ex})") from ex
    return rows


def _paired(corpus: Sequence[SummExample], hyps: dict[str, dict]) -> list[tuple[SummExample, dict]]:
    missing = [ex.id for ex in corpus if ex.id not in hyps]
    if missing:
        raise DataError(f"no hypothesis for {len(missing)} example(s), first: {missing[0]}")
    return [(ex, hyps[ex.id]) for ex in corpus]


# ───────────────────────────────────────────────────────────────────────────────
# Subcommands
# ───────────────────────────────────────────────────────────────────────────────
def cmd_synth(run: RunConfig, args: argparse.Namespace, settings: Settings) -> int:
    cfg = SynthConfig.from_dict(run.config("synth", settings))
    n, start = args.n, args.start
    if n < 1:
        raise UsageError("--n must be >= 1")
    # equal seed-split shards; every example has its own generator so the corpus is shard-invariant
    size = -(-n // run.jobs)
    shards = [(s, min(size, start + n - s)) for s in range(start, start + n, size)]
    parts = parallel_map(lambda sh: list(generate(cfg, sh[1], sh[0])), shards, run.jobs)
    written = write_corpus(run.output, (ex for part in parts for ex in part))
    log.info("event=synth_done out=%s examples=%d seed=%d", run.output, written, cfg.seed)
    return 0


def cmd_label(run: RunConfig, args: argparse.Namespace, settings: Settings) -> int:
    corpus = list(read_corpus(run.inputs["inp"]))
    labeled = parallel_map(lambda ex: ex.with_oracle(oracle_extract(ex.document, ex.summary).indices),
                           corpus, run.jobs)
    written = write_corpus(run.output, labeled)
    log.info("event=label_done out=%s examples=%d", run.output, written)
    return 0


def cmd_train(run: RunConfig, args: argparse.Namespace, settings: Settings) -> int:
    corpus = list(read_corpus(run.inputs["inp"]))
    vcfg = run.config("vocab", settings)
    vocab = build_vocab(corpus, int(vcfg["min_freq"]), int(vcfg["max_tag"]))
    mcfg = ModelConfig.from_dict({**run.config("model", settings), "max_tag": vocab.max_tag})
    train_values = {**run.config("train", settings), "freeze_tags": args.freeze_tags}
    if args.split_schedules:
        train_values["split_schedules"] = True
    tcfg = TrainConfig.from_dict(train_values)
    mode = run.mode or "external"
    model = RewriterModel(mcfg, vocab).to(args.device)
    run.output.mkdir(parents=True, exist_ok=True)
    result = train(model, corpus, mode, tcfg, run.output)
    print(f"trained {mode} model: steps={len(result.losses)} final_loss={result.losses[-1]:.4f} "
          f"checkpoint={result.checkpoints[-1] if result.checkpoints else '-'}")
    return 0


def cmd_summarize(run: RunConfig, args: argparse.Namespace, settings: Settings) -> int:
    ck = load_checkpoint(run.inputs["ckpt"], device=args.device)
    mode = run.mode or ck.mode
    if mode != ck.mode:
        log.warning("event=mode_mismatch trained=%s requested=%s", ck.mode, mode)
    cfg = DecodeConfig.from_dict({**run.config("decode", settings), "mode": mode})
    extractor = make_extractor(args.extractor) if mode == "external" else None
    if extractor is None and args.extractor != "oracle":
        log.warning("event=extractor_ignored mode=%s extractor=%s", mode, args.extractor)
    corpus = list(read_corpus(run.inputs["inp"]))

    def run_one(ex: SummExample) -> dict:
        alignment = extractor(ex) if extractor is not None else None
        out = summarize(ck.model, ex.document, mode, alignment, cfg)
        row = out.to_row(ex.id)
        if out.duplicates:
            row["duplicates"] = {str(k): v for k, v in out.duplicates.items()}
        return row

    rows = parallel_map(run_one, corpus, run.jobs)
    write_jsonl(run.output, rows)
    log.info("event=summarize_done out=%s examples=%d mode=%s beam=%d fallbacks=%d", run.output, len(rows),
             mode, cfg.beam_size, sum(r["fallback_used"] for r in rows))
    return 0


def _rouge_rows(score) -> list[dict]:
    return [{"metric": label, "f1": getattr(score, name).f1, "recall": getattr(score, name).recall,
             "precision": getattr(score, name).precision}
            for label, name in (("R-1", "r1"), ("R-2", "r2"), ("R-L", "rl"))]


def cmd_evaluate(run: RunConfig, args: argparse.Namespace, settings: Settings) -> int:
    corpus = list(read_corpus(run.inputs["ref"]))
    pairs = _paired(corpus, _hyp_rows(run.inputs["hyp"]))
    score = corpus_rouge((row["summary"], [s.tokens for s in ex.summary]) for ex, row in pairs)
    rows = _rouge_rows(score)
    print(f"n={score.n}")
    print(analysis.format_table(rows))
    if run.output is not None:
        analysis.write_csv(run.output, rows)
    log.info("event=evaluate n=%d r1_f1=%.4f r2_f1=%.4f rl_f1=%.4f", score.n, score.r1.f1, score.r2.f1, score.rl.f1)
    return 0


def cmd_analyze(run: RunConfig, args: argparse.Namespace, settings: Settings) -> int:
    corpus = _labeled(read_corpus(run.inputs["ref"]))
    if not corpus:
        raise DataError(f"{run.inputs['ref']}: empty corpus")
    hyps = _paired(corpus, _hyp_rows(run.inputs["hyp"])) if "hyp" in run.inputs else None
    reports: dict[str, list[dict]] = {}

    n_doc = max(len(ex.document) for ex in corpus)
    alignments = [row["selected"] for _, row in hyps] if hyps else [ex.oracle for ex in corpus]
    reports["histogram"] = analysis.extraction_histogram(alignments, n_doc).rows()

    counts = [{"source": "gold",
               "words": analysis.word_count_stats(ex.summary for ex in corpus),
               "sentences": analysis.sentence_count_stats(ex.summary for ex in corpus)}]
    if hyps:
        counts.append({"source": "hypothesis",
                       "words": analysis.word_count_stats(row["summary"] for _, row in hyps),
                       "sentences": analysis.sentence_count_stats(row["summary"] for _, row in hyps)})
    reports["wordcount"] = counts

    baseline = []
    oracle_sel = [ex.oracle for ex in corpus]
    lead_sel = [lead_alignment(ex.document, 3).indices for ex in corpus]
    for name, sel, dedup in (("oracle", oracle_sel, False), ("oracle_dedup", oracle_sel, True),
                             ("lead3", lead_sel, False)):
        baseline.append({"extractor": name, **analysis.extractive_baseline(corpus, sel, dedup).as_row()})
    reports["baseline"] = baseline

    if hyps:
        pairs = []
        for ex, row in hyps:
            for idx, words in zip(row["selected"], row["summary"]):
                if not 0 <= idx < len(ex.document):
                    raise DataError(f"example {ex.id}: selected sentence {idx} out of range")
                pairs.append((ex.document.sentences[idx].tokens, words))
        reports["edits"] = [{"category": c.value, "proportion": p}
                            for c, p in analysis.edit_proportions(pairs).items()]

    if "ckpt" in run.inputs:
        ck = load_checkpoint(run.inputs["ckpt"], device=args.device)
        cfg = DecodeConfig.from_dict({**run.config("decode", settings), "mode": ck.mode})
        reports["blocking"] = analysis.blocking_sensitivity(ck.model, corpus, cfg).rows()
        if ck.mode == "external":
            probes = analysis.swap_probe_set(ck.model, corpus, cfg, limit=args.probes)
            reports["swap"] = [{"probe": k, "i": p.i, "j": p.j, "content_swapped": p.content_swapped,
                                "before_j": " ".join(p.before[p.j - 1]) if len(p.before) >= p.j else "",
                                "after_i": " ".join(p.after[p.i - 1]) if len(p.after) >= p.i else ""}
                               for k, p in enumerate(probes)]
            rate = sum(p.content_swapped for p in probes) / len(probes) if probes else 0.0
            print(f"tag-swap probes={len(probes)} content_swapped={rate:.4f}")

    run.output.mkdir(parents=True, exist_ok=True)
    for name, rows in reports.items():
        if not rows:
            continue
        path = analysis.write_csv(run.output / REPORT_CSV_FILENAMES[name], rows)
        if name != "swap":
            print(f"[{name}]")
            print(analysis.format_table(rows))
        log.info("event=report name=%s path=%s rows=%d", name, path, len(rows))
    return 0


# ───────────────────────────────────────────────────────────────────────────────
# Parser
# ───────────────────────────────────────────────────────────────────────────────
def _flag(p: argparse.ArgumentParser, flag: str, group: str, name: str, **kw) -> None:
    """Override of a DEFAULTS/settings value; None means keep the configured value."""
    p.add_argument(flag, dest=f"{group}.{name}", default=None, **kw)


def _common(p: argparse.ArgumentParser, jobs: bool = True) -> None:
    p.add_argument("--seed", type=int, default=None, help="Seed for every random stage")
    p.add_argument("--config", default=None, help="Settings INI (default: the per-user settings.ini)")
    if jobs:
        p.add_argument("--jobs", type=int, default=1, help="Parallel workers over examples")


def _decode_flags(p: argparse.ArgumentParser) -> None:
    _flag(p, "--beam", "decode", "beam_size", type=int, help="Beam size")
    _flag(p, "--min-length", "decode", "min_length", type=int)
    _flag(p, "--max-length", "decode", "max_length", type=int)
    _flag(p, "--alpha", "decode", "alpha", type=float, help="Length-penalty exponent")
    _flag(p, "--block-trigrams", "decode", "block_trigrams", action=argparse.BooleanOptionalAction)
    _flag(p, "--dedup-selection", "decode", "dedup_selection", action=argparse.BooleanOptionalAction,
          help="Joint modes: never select a document sentence twice")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=CLI_NAME, description=f"{TAGLINE}\n\n{APP_DESCRIPTION}",
                     epilog="examples:\n" + CLI_EXAMPLES, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=banner())
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("synth", help="Generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True, help="Number of examples")
    p.add_argument("--start", type=int, default=0, help="Index of the first example")
    _flag(p, "--noise-rate", "synth", "noise_rate", type=float)
    _flag(p, "--coref-rate", "synth", "coref_rate", type=float)
    _flag(p, "--ref-rate", "synth", "ref_rate", type=float)
    _common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("label", help="Attach oracle extractions")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    _common(p)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="Train a rewriter")
    p.add_argument("--in", dest="inp", required=True, help="Labeled corpus")
    p.add_argument("--out", required=True, help="Run directory for checkpoints")
    p.add_argument("--mode", choices=MODES, default="external")
    p.add_argument("--device", default="cpu")
    p.add_argument("--split-schedules", action="store_true", help="Separate encoder/decoder learning-rate schedules")
    p.add_argument("--freeze-tags", action="store_true", help="Keep the group-tag embedding at zero")
    _flag(p, "--gamma", "model", "gamma", type=float, help="Loss weight on identifier tokens")
    _flag(p, "--d-model", "model", "d_model", type=int)
    _flag(p, "--heads", "model", "heads", type=int)
    _flag(p, "--enc-layers", "model", "enc_layers", type=int)
    _flag(p, "--dec-layers", "model", "dec_layers", type=int)
    _flag(p, "--dropout", "model", "dropout", type=float)
    _flag(p, "--max-steps", "train", "max_steps", type=int)
    _flag(p, "--batch-tokens", "train", "batch_tokens", type=int)
    _flag(p, "--warmup-enc", "train", "warmup_enc", type=int, help="Warmup steps of the encoder schedule")
    _flag(p, "--warmup-dec", "train", "warmup_dec", type=int, help="Warmup steps of the decoder (or single) schedule")
    _flag(p, "--checkpoint-every", "train", "checkpoint_every", type=int)
    _flag(p, "--max-tag", "vocab", "max_tag", type=int, help="Largest sentence identifier K")
    _flag(p, "--min-freq", "vocab", "min_freq", type=int)
    _common(p, jobs=False)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("summarize", help="Decode summaries with a trained rewriter")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=MODES, default=None, help="Defaults to the checkpoint's mode")
    p.add_argument("--extractor", default="oracle", help="External mode: oracle | lead3 | lead<m> | file:<path>")
    p.add_argument("--device", default="cpu")
    _decode_flags(p)
    _common(p)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("evaluate", help="ROUGE of hypotheses against references")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out", default=None, help="Optional CSV")
    _common(p, jobs=False)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="Diagnostic reports as CSV")
    p.add_argument("--ref", required=True, help="Reference corpus")
    p.add_argument("--out", required=True, help="Report directory")
    p.add_argument("--hyp", default=None, help="Decoded summaries (edits, histogram of model selections)")
    p.add_argument("--ckpt", default=None, help="Model for blocking sensitivity and the tag-swap probe")
    p.add_argument("--probes", type=int, default=200)
    p.add_argument("--device", default="cpu")
    _decode_flags(p)
    _common(p, jobs=False)
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        run = RunConfig.from_args(args)
        run.validate()
    except UsageError as ex:
        sys.stderr.write(f"{ex}\n")
        return 1

    try:
        ensure_app_dirs()
        setup_logging()
    except OSError:
        setup_logging(log_file=None)
    log.info("event=start app=%s version=%s command=%s seed=%s", APP_NAME, version_string(), run.command, run.seed)
    if run.seed is not None:
        torch.manual_seed(run.seed)

    try:
        settings = get_settings(Path(args.config) if args.config else None)
        return args.func(run, args, settings)
    except (UsageError, ConfigError) as ex:
        log.error("event=usage_error command=%s error=%s", run.command, ex)
        sys.stderr.write(f"{CLI_NAME} {run.command}: {ex}\n")
        return 1
    except (DataError, OSError) as ex:
        log.error("event=data_error command=%s error=%s", run.command, ex)
        sys.stderr.write(f"{CLI_NAME} {run.command}: {ex}\n")
        return 2
