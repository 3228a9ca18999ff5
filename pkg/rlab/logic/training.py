"""
Gold-prefix training with the weighted loss and the inverse-square-root schedules.
"""
from __future__ import annotations
import random
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterator, Optional, Sequence

import torch

from app_config import DEFAULTS, CHECKPOINT_PATTERN, CHECKPOINT_LATEST
from rlab.core.errors import ConfigError, DataError
from rlab.core.logging import get_logger
from rlab.logic.align import MODES, OracleAlignment, TaggedSequence, build_target
from rlab.logic.model import RewriterModel, batch_loss, make_batch, save_checkpoint
from rlab.logic.textcore import SummExample

log = get_logger(__name__)


@dataclass
class TrainConfig:
    warmup_enc: int = DEFAULTS["train"]["warmup_enc"]
    warmup_dec: int = DEFAULTS["train"]["warmup_dec"]
    factor_enc: float = DEFAULTS["train"]["factor_enc"]
    factor_dec: float = DEFAULTS["train"]["factor_dec"]
    split_schedules: bool = DEFAULTS["train"]["split_schedules"]
    batch_tokens: int = DEFAULTS["train"]["batch_tokens"]
    max_steps: int = DEFAULTS["train"]["max_steps"]
    checkpoint_every: int = DEFAULTS["train"]["checkpoint_every"]
    log_every: int = DEFAULTS["train"]["log_every"]
    grad_clip: float = DEFAULTS["train"]["grad_clip"]
    seed: int = DEFAULTS["train"]["seed"]
    freeze_tags: bool = False

    def __post_init__(self):
        if self.warmup_enc < 1 or self.warmup_dec < 1:
            raise ConfigError("warmup steps must be >= 1")
        if self.max_steps < 1 or self.batch_tokens < 1:
            raise ConfigError("max_steps and batch_tokens must be >= 1")
        if self.grad_clip <= 0:
            raise ConfigError("grad_clip must be > 0")

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in names})


def lr_at(step: int, warmup: int, factor: float) -> float:
    """factor · min(step^-0.5, step · warmup^-1.5)"""
    if step < 1:
        raise ConfigError(f"learning-rate schedule starts at step 1, got {step}")
    return factor * min(step ** -0.5, step * warmup ** -1.5)


def make_optimizer(model: RewriterModel, cfg: TrainConfig) -> tuple[torch.optim.Optimizer, torch.optim.lr_scheduler.LambdaLR]:
    """
    Adam with base lr 1.0 so each group's LambdaLR multiplier IS its learning rate.
    split_schedules: encoder stack on (factor_enc, warmup_enc), everything else on
    (factor_dec, warmup_dec). Otherwise one group on the decoder schedule.
    """
    def trainable(ps):
        return [p for p in ps if p.requires_grad]

    if cfg.split_schedules:
        groups = [{"params": trainable(model.encoder_parameters())},
                  {"params": trainable(model.decoder_parameters())}]
        lambdas = [lambda s: lr_at(s + 1, cfg.warmup_enc, cfg.factor_enc),
                   lambda s: lr_at(s + 1, cfg.warmup_dec, cfg.factor_dec)]
    else:
        groups = [{"params": trainable(model.parameters())}]
        lambdas = [lambda s: lr_at(s + 1, cfg.warmup_dec, cfg.factor_dec)]
    opt = torch.optim.Adam(groups, lr=1.0, betas=(0.9, 0.999), eps=1e-8)
    return opt, torch.optim.lr_scheduler.LambdaLR(opt, lambdas)


def forced_pairs(corpus: Sequence[SummExample], mode: str, model: RewriterModel) -> list[tuple[TaggedSequence, TaggedSequence]]:
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    pairs = []
    for ex in corpus:
        if ex.oracle is None:
            raise DataError(f"example {ex.id}: no oracle labels; run `label` first")
        pairs.append(build_target(mode, ex.document, OracleAlignment(ex.oracle), ex.summary, model.vocab))
    return pairs


def token_batches(pairs: Sequence[tuple[TaggedSequence, TaggedSequence]], budget: int,
                  rng: random.Random) -> Iterator[list[int]]:
    """Shuffled index batches whose padded size (rows x longest row) stays within the budget."""
    order = list(range(len(pairs)))
    rng.shuffle(order)
    batch: list[int] = []
    longest = 0
    for i in order:
        size = len(pairs[i][0]) + len(pairs[i][1]) + 1
        if batch and max(longest, size) * (len(batch) + 1) > budget:
            yield batch
            batch, longest = [], 0
        batch.append(i)
        longest = max(longest, size)
    if batch:
        yield batch


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


def train(model: RewriterModel, corpus: Sequence[SummExample], mode: str, cfg: TrainConfig,
          out_dir: Optional[str | Path] = None) -> TrainResult:
    """
    Optimizes the weighted loss; returns the per-step mean token loss and written checkpoints.
    Deterministic given cfg.seed (and the model's own init seed).
    """
    pairs = forced_pairs(corpus, mode, model)
    if not pairs:
        raise DataError("training corpus is empty")
    torch.manual_seed(cfg.seed)
    torch.use_deterministic_algorithms(True, warn_only=True)
    rng = random.Random(cfg.seed)
    if cfg.freeze_tags:
        model.freeze_tags()
    opt, sched = make_optimizer(model, cfg)
    device = model.tok_emb.weight.device
    out = Path(out_dir) if out_dir is not None else None
    result = TrainResult()
    log.info("event=train_start mode=%s examples=%d max_steps=%d split=%s gamma=%g freeze_tags=%s",
             mode, len(pairs), cfg.max_steps, cfg.split_schedules, model.config.gamma, cfg.freeze_tags)

    model.train()
    step = 0
    while step < cfg.max_steps:
        for idx in token_batches(pairs, cfg.batch_tokens, rng):
            batch = make_batch([pairs[i] for i in idx], model.vocab, device)
            opt.zero_grad(set_to_none=True)
            lo = batch_loss(model, batch, model.config.gamma)
            lo.total.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
            opt.step()
            sched.step()
            step += 1
            result.losses.append(lo.mean)
            if step % cfg.log_every == 0 or step == 1:
                lrs = " ".join(f"lr{g}={pg['lr']:.3e}" for g, pg in enumerate(opt.param_groups))
                log.info("event=train_step step=%d loss=%.4f tokens=%d %s", step, lo.mean, lo.n_tokens, lrs)
            if out is not None and (step % cfg.checkpoint_every == 0 or step == cfg.max_steps):
                path = save_checkpoint(model, out / CHECKPOINT_PATTERN.format(step=step), mode, step)
                save_checkpoint(model, out / CHECKPOINT_LATEST, mode, step)
                result.checkpoints.append(path)
                log.info("event=checkpoint step=%d path=%s", step, path)
            if step >= cfg.max_steps:
                break
    model.eval()
    log.info("event=train_done steps=%d final_loss=%.4f", step, result.losses[-1])
    return result
