from __future__ import annotations
import random

import pytest
import torch

from app_config import CHECKPOINT_LATEST
from rlab.core.errors import ConfigError, DataError
from rlab.logic.model import RewriterModel
from rlab.logic.training import TrainConfig, forced_pairs, lr_at, make_optimizer, token_batches, train


def test_lr_schedule_peaks_at_warmup():
    warmup, factor = 100, 0.5
    peak = lr_at(warmup, warmup, factor)
    assert peak == pytest.approx(factor * warmup ** -0.5)
    assert lr_at(10, warmup, factor) < lr_at(50, warmup, factor) < peak
    assert lr_at(400, warmup, factor) == pytest.approx(factor * 400 ** -0.5)
    with pytest.raises(ConfigError):
        lr_at(0, warmup, factor)


def test_split_schedules_use_two_groups(tiny_model):
    cfg = TrainConfig(split_schedules=True, warmup_enc=20, warmup_dec=10, factor_enc=0.1, factor_dec=0.3)
    opt, _ = make_optimizer(tiny_model, cfg)
    assert len(opt.param_groups) == 2
    assert opt.param_groups[0]["lr"] == pytest.approx(lr_at(1, 20, 0.1))
    assert opt.param_groups[1]["lr"] == pytest.approx(lr_at(1, 10, 0.3))
    enc = {id(p) for p in opt.param_groups[0]["params"]}
    dec = {id(p) for p in opt.param_groups[1]["params"]}
    assert not enc & dec
    assert len(enc) + len(dec) == len(list(tiny_model.parameters()))

    opt, _ = make_optimizer(tiny_model, TrainConfig())
    assert len(opt.param_groups) == 1


def test_unlabeled_examples_are_rejected(tiny_model, synth_corpus):
    unlabeled = [type(ex)(ex.document, ex.summary) for ex in synth_corpus[:2]]
    with pytest.raises(DataError, match=unlabeled[0].id):
        forced_pairs(unlabeled, "external", tiny_model)
    with pytest.raises(ConfigError):
        forced_pairs(synth_corpus, "bogus", tiny_model)


def test_token_batches_cover_everything_within_budget(tiny_model, synth_corpus):
    pairs = forced_pairs(synth_corpus, "joint", tiny_model)
    budget = 300
    seen = []
    for batch in token_batches(pairs, budget, random.Random(0)):
        longest = max(len(pairs[i][0]) + len(pairs[i][1]) + 1 for i in batch)
        assert len(batch) == 1 or longest * len(batch) <= budget
        seen.extend(batch)
    assert sorted(seen) == list(range(len(pairs)))


def _short_run(**kw):
    return TrainConfig(max_steps=30, batch_tokens=2000, warmup_dec=10, factor_dec=0.05, log_every=10,
                       checkpoint_every=15, seed=0, **kw)


def test_training_reduces_loss_and_is_reproducible(tmp_path, tiny_config, synth_vocab, synth_corpus):
    a = RewriterModel(tiny_config, synth_vocab)
    first = train(a, synth_corpus, "external", _short_run(), tmp_path)
    assert sum(first.losses[-5:]) / 5 < sum(first.losses[:5]) / 5
    assert len(first.checkpoints) == 2
    assert (tmp_path / CHECKPOINT_LATEST).is_file()

    b = RewriterModel(tiny_config, synth_vocab)
    second = train(b, synth_corpus, "external", _short_run())
    assert second.losses == first.losses
    assert not a.training


def test_frozen_tags_stay_zero(tiny_config, synth_vocab, synth_corpus):
    model = RewriterModel(tiny_config, synth_vocab)
    train(model, synth_corpus, "joint", _short_run(freeze_tags=True))
    assert float(model.tag_emb.weight.abs().sum()) == 0.0
    assert not model.tag_emb.weight.requires_grad
    assert torch.isfinite(model.tok_emb.weight).all()
