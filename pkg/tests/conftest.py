# tests/conftest.py
from __future__ import annotations
import os
import tempfile

# keep settings and logs out of the real user profile; must happen before app_config is imported
os.environ["RLAB_HOME"] = tempfile.mkdtemp(prefix="rlab-test-")

import pytest
import torch

from app_config import SLOW_TESTS_ENV_VAR
from rlab.logic.model import ModelConfig, RewriterModel
from rlab.logic.synth import SynthConfig, generate
from rlab.logic.textcore import FIXED_RESERVED, Vocab, build_vocab, ident_token


def pytest_collection_modifyitems(config, items):
    if os.getenv(SLOW_TESTS_ENV_VAR) == "1":
        return
    skip = pytest.mark.skip(reason=f"slow; set {SLOW_TESTS_ENV_VAR}=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def make_vocab():
    def build(words, max_tag=4):
        reserved = list(FIXED_RESERVED) + [ident_token(k) for k in range(max_tag + 1)]
        return Vocab(reserved + list(words), max_tag)
    return build


@pytest.fixture(scope="session")
def synth_corpus():
    return list(generate(SynthConfig(seed=3), 12))


@pytest.fixture(scope="session")
def synth_vocab(synth_corpus):
    return build_vocab(synth_corpus, max_tag=8)


@pytest.fixture
def tiny_config():
    return ModelConfig(d_model=16, heads=2, enc_layers=1, dec_layers=1, ffn_dim=32,
                       max_positions=256, max_tag=8, dropout=0.0, seed=0)


@pytest.fixture
def tiny_model(tiny_config, synth_vocab):
    torch.set_num_threads(1)
    return RewriterModel(tiny_config, synth_vocab).eval()
