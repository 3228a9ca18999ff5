"""
Tag-augmented encoder–decoder.

Three embedding tables: tokens, learned positions, and group tags. The tag table is shared:
the encoder adds Emb_tag(G^X′) to its OUTPUT states, the decoder adds Emb_tag(G^Y′) to its
INPUT (token + position + tag). Output projection is tied to the token table.
"""
from __future__ import annotations
import math
import os
import tempfile
from dataclasses import dataclass, asdict, fields
from pathlib import Path
from typing import Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from app_config import DEFAULTS, CHECKPOINT_FORMAT, CHECKPOINT_VERSION
from rlab.core.errors import ConfigError, DataError
from rlab.core.logging import get_logger
from rlab.logic.align import TaggedSequence
from rlab.logic.textcore import Vocab

log = get_logger(__name__)
NEG_INF = -1e9


@dataclass
class ModelConfig:
    d_model: int = DEFAULTS["model"]["d_model"]
    heads: int = DEFAULTS["model"]["heads"]
    enc_layers: int = DEFAULTS["model"]["enc_layers"]
    dec_layers: int = DEFAULTS["model"]["dec_layers"]
    ffn_dim: int = DEFAULTS["model"]["ffn_dim"]
    max_positions: int = DEFAULTS["model"]["max_positions"]
    max_tag: int = DEFAULTS["model"]["max_tag"]
    dropout: float = DEFAULTS["model"]["dropout"]
    gamma: float = DEFAULTS["model"]["gamma"]
    seed: int = DEFAULTS["model"]["seed"]

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if self.gamma <= 0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.max_tag < 1 or self.max_positions < 2:
            raise ConfigError("max_tag must be >= 1 and max_positions >= 2")

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in values.items() if k in names})


# ───────────────────────────────────────────────────────────────────────────────
# Layers
# ───────────────────────────────────────────────────────────────────────────────
class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.d_k = d_model // heads
        self.w_q = nn.Linear(d_model, d_model)
        self.w_k = nn.Linear(d_model, d_model)
        self.w_v = nn.Linear(d_model, d_model)
        self.w_o = nn.Linear(d_model, d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, q_in: torch.Tensor, kv_in: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        # mask: broadcastable to (B, heads, Tq, Tk), True where attention is allowed
        b, tq, d = q_in.shape
        tk = kv_in.shape[1]
        q = self.w_q(q_in).view(b, tq, self.heads, self.d_k).transpose(1, 2)
        k = self.w_k(kv_in).view(b, tk, self.heads, self.d_k).transpose(1, 2)
        v = self.w_v(kv_in).view(b, tk, self.heads, self.d_k).transpose(1, 2)
        scores = torch.matmul(q, k.transpose(-2, -1)) / math.sqrt(self.d_k)
        if mask is not None:
            scores = scores.masked_fill(~mask, NEG_INF)
        attn = self.drop(torch.softmax(scores, dim=-1))
        out = torch.matmul(attn, v).transpose(1, 2).contiguous().view(b, tq, d)
        return self.w_o(out)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, ffn_dim: int, dropout: float):
        super().__init__()
        self.lin1 = nn.Linear(d_model, ffn_dim)
        self.lin2 = nn.Linear(ffn_dim, d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # GELU keeps the network smooth for finite-difference checks
        return self.lin2(self.drop(F.gelu(self.lin1(x))))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.attn = MultiHeadAttention(cfg.d_model, cfg.heads, cfg.dropout)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, cfg.ffn_dim, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        x = x + self.drop(self.attn(h, h, mask))
        return x + self.drop(self.ffn(self.norm2(x)))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.heads, cfg.dropout)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.heads, cfg.dropout)
        self.norm3 = nn.LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, cfg.ffn_dim, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, y: torch.Tensor, memory: torch.Tensor, self_mask: torch.Tensor,
                cross_mask: torch.Tensor) -> torch.Tensor:
        h = self.norm1(y)
        y = y + self.drop(self.self_attn(h, h, self_mask))
        y = y + self.drop(self.cross_attn(self.norm2(y), memory, cross_mask))
        return y + self.drop(self.ffn(self.norm3(y)))


# ───────────────────────────────────────────────────────────────────────────────
# Model
# ───────────────────────────────────────────────────────────────────────────────
class RewriterModel(nn.Module):
    def __init__(self, config: ModelConfig, vocab: Vocab):
        super().__init__()
        if vocab.max_tag > config.max_tag:
            raise ConfigError(f"vocabulary K={vocab.max_tag} exceeds model max_tag={config.max_tag}")
        self.config = config
        self.vocab = vocab
        torch.manual_seed(config.seed)
        d = config.d_model
        self.tok_emb = nn.Embedding(len(vocab), d)
        self.pos_emb = nn.Embedding(config.max_positions, d)
        # one table, K+1 rows (tag 0 included), read by both sides
        self.tag_emb = nn.Embedding(config.max_tag + 1, d)
        self.drop = nn.Dropout(config.dropout)
        self.encoder = nn.ModuleList(EncoderLayer(config) for _ in range(config.enc_layers))
        self.enc_norm = nn.LayerNorm(d)
        self.decoder = nn.ModuleList(DecoderLayer(config) for _ in range(config.dec_layers))
        self.dec_norm = nn.LayerNorm(d)
        std = d ** -0.5
        for emb in (self.tok_emb, self.pos_emb, self.tag_emb):
            nn.init.normal_(emb.weight, std=std)

    # Parameter groups for the dual learning-rate schedule
    def encoder_parameters(self) -> list[nn.Parameter]:
        return [*self.encoder.parameters(), *self.enc_norm.parameters()]

    def decoder_parameters(self) -> list[nn.Parameter]:
        enc = {id(p) for p in self.encoder_parameters()}
        return [p for p in self.parameters() if id(p) not in enc]

    def freeze_tags(self) -> None:
        """Pin Emb_tag at zero (ablation baseline)."""
        with torch.no_grad():
            self.tag_emb.weight.zero_()
        self.tag_emb.weight.requires_grad_(False)

    def _positions(self, length: int, device) -> torch.Tensor:
        if length > self.config.max_positions:
            raise DataError(f"sequence of {length} positions exceeds max_positions={self.config.max_positions}")
        return torch.arange(length, device=device)

    def _check_tags(self, tags: torch.Tensor) -> None:
        if tags.numel() and (int(tags.max()) > self.config.max_tag or int(tags.min()) < 0):
            raise DataError(f"group tag outside [0, {self.config.max_tag}]")

    def encode_batch(self, src: torch.Tensor, src_tags: torch.Tensor, src_keep: torch.Tensor,
                     use_tags: bool = True) -> torch.Tensor:
        """src (B,S) -> memory (B,S,d). src_keep is True on real (non-pad) positions."""
        self._check_tags(src_tags)
        pos = self._positions(src.shape[1], src.device)
        x = self.drop(self.tok_emb(src) + self.pos_emb(pos)[None])
        mask = src_keep[:, None, None, :]
        for layer in self.encoder:
            x = layer(x, mask)
        x = self.enc_norm(x)
        if use_tags:
            x = x + self.tag_emb(src_tags)
        return x

    def decode_batch(self, memory: torch.Tensor, src_keep: torch.Tensor, tgt: torch.Tensor,
                     tgt_tags: torch.Tensor, tgt_keep: Optional[torch.Tensor] = None,
                     use_tags: bool = True) -> torch.Tensor:
        """Decoder inputs (B,T) -> log-probabilities (B,T,V)."""
        self._check_tags(tgt_tags)
        t = tgt.shape[1]
        pos = self._positions(t, tgt.device)
        y = self.tok_emb(tgt) + self.pos_emb(pos)[None]
        if use_tags:
            y = y + self.tag_emb(tgt_tags)
        y = self.drop(y)
        causal = torch.tril(torch.ones(t, t, dtype=torch.bool, device=tgt.device))
        self_mask = causal[None, None]
        if tgt_keep is not None:
            self_mask = self_mask & tgt_keep[:, None, None, :]
        cross_mask = src_keep[:, None, None, :]
        for layer in self.decoder:
            y = layer(y, memory, self_mask, cross_mask)
        logits = self.dec_norm(y) @ self.tok_emb.weight.t()
        return F.log_softmax(logits, dim=-1)

    def forward(self, src, src_tags, src_keep, tgt, tgt_tags, tgt_keep=None, use_tags: bool = True):
        memory = self.encode_batch(src, src_tags, src_keep, use_tags)
        return self.decode_batch(memory, src_keep, tgt, tgt_tags, tgt_keep, use_tags)

    # Beam-search interface ---------------------------------------------------
    @torch.no_grad()
    def start(self, source: TaggedSequence) -> torch.Tensor:
        return encode(self, source)

    @torch.no_grad()
    def step(self, memory: torch.Tensor, prefixes: Sequence[TaggedSequence]) -> torch.Tensor:
        """Next-token log-probabilities for several prefixes at once: (N, V)."""
        n = len(prefixes)
        width = 1 + max(len(p) for p in prefixes)
        device = memory.device
        tgt = torch.full((n, width), self.vocab.pad_id, dtype=torch.long, device=device)
        tags = torch.zeros((n, width), dtype=torch.long, device=device)
        last = torch.zeros(n, dtype=torch.long, device=device)
        for r, p in enumerate(prefixes):
            tgt[r, 0] = self.vocab.bos_id
            if len(p):
                tgt[r, 1:len(p) + 1] = torch.tensor(p.tokens, dtype=torch.long, device=device)
                tags[r, 1:len(p) + 1] = torch.tensor(p.tags, dtype=torch.long, device=device)
            last[r] = len(p)
        mem = memory.unsqueeze(0).expand(n, -1, -1)
        keep = torch.ones(mem.shape[:2], dtype=torch.bool, device=device)
        # right padding never leaks backwards under the causal mask
        out = self.decode_batch(mem, keep, tgt, tags)
        return out[torch.arange(n, device=device), last]


# ───────────────────────────────────────────────────────────────────────────────
# Single-sequence operations
# ───────────────────────────────────────────────────────────────────────────────
def encode(model: RewriterModel, source: TaggedSequence) -> torch.Tensor:
    """X′ -> (len, d_model): encoder states plus tag embeddings added after the stack."""
    if len(source) > model.config.max_positions:
        raise DataError(f"source of {len(source)} tokens exceeds max_positions={model.config.max_positions}")
    device = model.tok_emb.weight.device
    src = torch.tensor([source.tokens], dtype=torch.long, device=device)
    tags = torch.tensor([source.tags], dtype=torch.long, device=device)
    keep = torch.ones_like(src, dtype=torch.bool)
    return model.encode_batch(src, tags, keep)[0]


def decode_step(model: RewriterModel, memory: torch.Tensor, prefix: TaggedSequence) -> torch.Tensor:
    """log P(next | prefix, X′) over the vocabulary."""
    if not prefix.is_consistent(model.vocab):
        raise DataError("prefix tags disagree with group_tag(prefix tokens)")
    return model.step(memory, [prefix])[0]


# ───────────────────────────────────────────────────────────────────────────────
# Gold-prefix training batches
# ───────────────────────────────────────────────────────────────────────────────
@dataclass
class Batch:
    src: torch.Tensor
    src_tags: torch.Tensor
    src_keep: torch.Tensor
    tgt_in: torch.Tensor
    tgt_in_tags: torch.Tensor
    tgt_keep: torch.Tensor
    tgt_out: torch.Tensor
    out_is_ident: torch.Tensor

    @property
    def n_tokens(self) -> int:
        return int(self.tgt_keep.sum())


def make_batch(pairs: Sequence[tuple[TaggedSequence, TaggedSequence]], vocab: Vocab,
               device: torch.device | str = "cpu") -> Batch:
    """Decoder input is <BOS>+Y′ (tag 0 first), output is Y′+</SUM>."""
    b = len(pairs)
    s_len = max(len(x) for x, _ in pairs)
    t_len = max(len(y) for _, y in pairs) + 1
    pad = vocab.pad_id
    src = torch.full((b, s_len), pad, dtype=torch.long)
    src_tags = torch.zeros((b, s_len), dtype=torch.long)
    tgt_in = torch.full((b, t_len), pad, dtype=torch.long)
    tgt_in_tags = torch.zeros((b, t_len), dtype=torch.long)
    tgt_out = torch.full((b, t_len), pad, dtype=torch.long)
    for r, (x, y) in enumerate(pairs):
        src[r, :len(x)] = torch.tensor(x.tokens)
        src_tags[r, :len(x)] = torch.tensor(x.tags)
        tgt_in[r, 0] = vocab.bos_id
        tgt_in[r, 1:len(y) + 1] = torch.tensor(y.tokens, dtype=torch.long)
        tgt_in_tags[r, 1:len(y) + 1] = torch.tensor(y.tags, dtype=torch.long)
        tgt_out[r, :len(y)] = torch.tensor(y.tokens, dtype=torch.long)
        tgt_out[r, len(y)] = vocab.end_id
    lo = vocab.ident_id(0)
    is_ident = (tgt_out >= lo) & (tgt_out <= lo + vocab.max_tag)
    return Batch(
        src.to(device), src_tags.to(device), (src != pad).to(device),
        tgt_in.to(device), tgt_in_tags.to(device), (tgt_out != pad).to(device),
        tgt_out.to(device), is_ident.to(device),
    )


def weighted_nll(log_probs: torch.Tensor, targets: torch.Tensor, is_ident: torch.Tensor,
                 gamma: float, keep: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Σ −w·log p(target), w = γ on identifier targets and 1 elsewhere."""
    picked = log_probs.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    weights = torch.where(is_ident, torch.full_like(picked, gamma), torch.ones_like(picked))
    if keep is not None:
        weights = weights * keep.to(picked.dtype)
    return -(weights * picked).sum()


@dataclass
class LossOutput:
    total: torch.Tensor   # summed, used for gradients
    n_tokens: int

    @property
    def mean(self) -> float:
        return float(self.total.detach()) / max(1, self.n_tokens)


def batch_loss(model: RewriterModel, batch: Batch, gamma: float, use_tags: bool = True) -> LossOutput:
    log_probs = model(batch.src, batch.src_tags, batch.src_keep, batch.tgt_in, batch.tgt_in_tags,
                      batch.tgt_keep, use_tags=use_tags)
    total = weighted_nll(log_probs, batch.tgt_out, batch.out_is_ident, gamma, batch.tgt_keep)
    return LossOutput(total, batch.n_tokens)


def loss(model: RewriterModel, source: TaggedSequence, target: TaggedSequence,
         gamma: Optional[float] = None, backward: bool = False) -> LossOutput:
    out = batch_loss(model, make_batch([(source, target)], model.vocab, model.tok_emb.weight.device),
                     model.config.gamma if gamma is None else gamma)
    if backward:
        out.total.backward()
    return out


# ───────────────────────────────────────────────────────────────────────────────
# Finite-difference gradient check
# ───────────────────────────────────────────────────────────────────────────────
@dataclass
class BlockCheck:
    name: str
    checked: int
    max_rel_error: float
    ok: bool


def gradient_check(model: RewriterModel, batch: Batch, eps: float = 1e-3, rtol: float = 1e-2,
                   per_block: int = 3, gamma: Optional[float] = None) -> list[BlockCheck]:
    """
    Central differences against autograd in float64, on the `per_block` entries with the
    largest analytic gradient of every parameter tensor. Dropout is disabled for the check.
    """
    gamma = model.config.gamma if gamma is None else gamma
    was_training = model.training
    model.double().eval()
    model.zero_grad(set_to_none=True)
    batch_loss(model, batch, gamma).total.backward()
    report: list[BlockCheck] = []
    with torch.no_grad():
        for name, param in model.named_parameters():
            if param.grad is None:
                continue
            grad = param.grad.detach().flatten()
            if float(grad.abs().max()) == 0.0:
                report.append(BlockCheck(name, 0, 0.0, True))
                continue
            flat = param.data.view(-1)
            worst = 0.0
            picks = torch.topk(grad.abs(), min(per_block, grad.numel())).indices.tolist()
            for idx in picks:
                orig = float(flat[idx])
                flat[idx] = orig + eps
                plus = float(batch_loss(model, batch, gamma).total)
                flat[idx] = orig - eps
                minus = float(batch_loss(model, batch, gamma).total)
                flat[idx] = orig
                numeric = (plus - minus) / (2 * eps)
                analytic = float(grad[idx])
                rel = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-12)
                worst = max(worst, rel)
            report.append(BlockCheck(name, len(picks), worst, worst <= rtol))
    model.zero_grad(set_to_none=True)
    model.float()
    model.train(was_training)
    return report


# ───────────────────────────────────────────────────────────────────────────────
# Checkpoints
# ───────────────────────────────────────────────────────────────────────────────
def save_checkpoint(model: RewriterModel, path: str | Path, mode: str, step: int = 0) -> Path:
    """Write-temp-then-rename so a reader never sees a partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "vocab_tokens": list(model.vocab.itos),
        "vocab_max_tag": model.vocab.max_tag,
        "vocab_hash": model.vocab.fingerprint(),
        "mode": mode,
        "step": int(step),
        "state_dict": model.state_dict(),
    }
    fd, tmp = tempfile.mkstemp(prefix=path.name, suffix=".tmp", dir=path.parent)
    os.close(fd)
    try:
        torch.save(blob, tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)
    return path


@dataclass
class LoadedCheckpoint:
    model: RewriterModel
    mode: str
    step: int


def load_checkpoint(path: str | Path, vocab: Optional[Vocab] = None,
                    device: torch.device | str = "cpu") -> LoadedCheckpoint:
    try:
        blob = torch.load(path, map_location=device, weights_only=True)
    except Exception as ex:
        raise DataError(f"{path}: not a readable checkpoint ({ex})") from ex
    if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path}: not an rlab checkpoint")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: checkpoint version {blob.get('version')} unsupported (want {CHECKPOINT_VERSION})")
    stored = Vocab(blob["vocab_tokens"], blob["vocab_max_tag"])
    if stored.fingerprint() != blob["vocab_hash"]:
        raise DataError(f"{path}: vocabulary hash does not match its own token list")
    if vocab is not None and vocab.fingerprint() != blob["vocab_hash"]:
        raise DataError(f"{path}: vocabulary hash mismatch; checkpoint was trained with another vocabulary")
    model = RewriterModel(ModelConfig.from_dict(blob["config"]), vocab or stored)
    model.load_state_dict(blob["state_dict"])
    model.to(device).eval()
    log.info("event=checkpoint_loaded path=%s mode=%s step=%d", path, blob["mode"], blob["step"])
    return LoadedCheckpoint(model, blob["mode"], int(blob["step"]))
