"""
Application configuration settings
This file centralises brand, paths, reserved tokens and runtime defaults.
Change defaults here (or per user through settings.ini), never inside the logic modules.
"""

from __future__ import annotations
import os
import platform
from pathlib import Path

# ───────────────────────────────────────────────────────────────────────────────
# Identity
# ───────────────────────────────────────────────────────────────────────────────
APP_NAME = "RLab"
APP_VERSION = "0.3.0"
COMPANY_NAME = "Digi Monsters"

APP_ID = "uk.digimonsters.rlab"
ORG_NAME = "Digi Monsters"
ORG_DIRNAME = "DigiMonsters"
ORG_DOMAIN = "digimonsters.uk"

TAGLINE = "Rewrite what you extract."
APP_DESCRIPTION = (
    "RLab trains and runs small contextualized rewriters: extractive selections are "
    "aligned to summary sentences through group tags and rewritten in context."
)

BUILD_COMMIT = os.getenv("RLAB_BUILD_COMMIT", "")[:7]
BUILD_CHANNEL = os.getenv("RLAB_BUILD_CHANNEL", "dev")  # dev/beta/stable


def version_string() -> str:
    """Human-friendly version string for logs."""
    meta = f"+{BUILD_COMMIT}" if BUILD_COMMIT else ""
    chan = f" ({BUILD_CHANNEL})" if BUILD_CHANNEL and BUILD_CHANNEL != "stable" else ""
    return f"{APP_VERSION}{meta}{chan}"


# ───────────────────────────────────────────────────────────────────────────────
# Reserved tokens (the vocabulary places these in the lowest id range, in this order)
# ───────────────────────────────────────────────────────────────────────────────
PAD_TOKEN = "<PAD>"
UNK_TOKEN = "<UNK>"
BOS_TOKEN = "<BOS>"
EOS_SENT_TOKEN = "</S>"
END_SUMMARY_TOKEN = "</SUM>"
IDENT_PREFIX = "<S_"
IDENT_SUFFIX = ">"

# Largest sentence identifier <S_K>
DEFAULT_MAX_TAG = 64

# ───────────────────────────────────────────────────────────────────────────────
# Corpus / report formats
# ───────────────────────────────────────────────────────────────────────────────
CHECKPOINT_FORMAT = "rlab-ckpt"
CHECKPOINT_VERSION = 1
CHECKPOINT_PATTERN = "step_{step:07d}.pt"
CHECKPOINT_LATEST = "latest.pt"

REPORT_CSV_FILENAMES = {
    "edits": "edit_categories.csv",
    "histogram": "extraction_histogram.csv",
    "blocking": "blocking_sensitivity.csv",
    "swap": "tag_swap_probe.csv",
    "wordcount": "word_counts.csv",
    "baseline": "extractive_baseline.csv",
}


# ───────────────────────────────────────────────────────────────────────────────
# User data locations (settings, logs, cache)
# ───────────────────────────────────────────────────────────────────────────────
def _appdata_base() -> Path:
    override = os.getenv("RLAB_HOME")
    if override:
        return Path(override)
    system = platform.system()
    if system == "Windows":
        base = os.getenv("APPDATA") or (Path.home() / "AppData" / "Roaming")
    elif system == "Darwin":
        base = Path.home() / "Library" / "Application Support"
    else:
        base = Path(os.getenv("XDG_CONFIG_HOME", Path.home() / ".config"))
    return Path(base) / ORG_DIRNAME / APP_NAME


APPDATA_DIR = _appdata_base()
LOG_DIR = APPDATA_DIR / "logs"
CACHE_DIR = APPDATA_DIR / "cache"
SETTINGS_FILE = APPDATA_DIR / "settings.ini"


def ensure_app_dirs() -> None:
    """Create required folders if they don't exist."""
    for p in (APPDATA_DIR, LOG_DIR, CACHE_DIR):
        p.mkdir(parents=True, exist_ok=True)


def apply_qsettings_org() -> None:
    """
    Apply org/app metadata for QSettings. Call before constructing the first QSettings instance.
    """
    try:
        from PySide6.QtCore import QCoreApplication
        QCoreApplication.setOrganizationName(ORG_NAME)
        QCoreApplication.setOrganizationDomain(ORG_DOMAIN)
        QCoreApplication.setApplicationName(APP_NAME)
    except Exception:
        # Settings then fall back to DEFAULTS only
        pass


# ───────────────────────────────────────────────────────────────────────────────
# Logging
# ───────────────────────────────────────────────────────────────────────────────
LOG_ENV_VAR = "RLAB_LOG"
DEFAULT_LOG_LEVEL = "INFO"
LOG_MAX_BYTES = 10_000_000
LOG_BACKUPS = 5
SLOW_TESTS_ENV_VAR = "RLAB_SLOW"

# ───────────────────────────────────────────────────────────────────────────────
# CLI hints
# ───────────────────────────────────────────────────────────────────────────────
CLI_NAME = "rlab"
CLI_EXAMPLES = (
    "rlab synth --out train.jsonl --n 5000 --seed 1\n"
    "rlab label --in corpus.jsonl --out labeled.jsonl\n"
    "rlab train --in labeled.jsonl --out runs/ext --mode external --max-steps 3000\n"
    "rlab summarize --ckpt runs/ext/latest.pt --in test.jsonl --out hyp.jsonl --mode external --extractor lead3\n"
    "rlab evaluate --hyp hyp.jsonl --ref test.jsonl\n"
    "rlab analyze --ref test.jsonl --hyp hyp.jsonl --ckpt runs/ext/latest.pt --out reports/\n"
)

# ───────────────────────────────────────────────────────────────────────────────
# Defaults (read by the settings wrapper; the config dataclasses start from these)
# ───────────────────────────────────────────────────────────────────────────────
DEFAULTS = {
    "model": {
        "d_model": 128,
        "heads": 4,
        "enc_layers": 2,
        "dec_layers": 2,
        "ffn_dim": 256,
        "max_positions": 512,
        "max_tag": DEFAULT_MAX_TAG,
        "dropout": 0.1,
        "gamma": 1.0,
        "seed": 0,
    },
    "train": {
        "warmup_enc": 2000,
        "warmup_dec": 1000,
        "factor_enc": 0.002,
        "factor_dec": 0.2,
        "split_schedules": False,
        "batch_tokens": 4096,
        "max_steps": 3000,
        "checkpoint_every": 500,
        "log_every": 50,
        "grad_clip": 1.0,
        "seed": 0,
    },
    "decode": {
        "beam_size": 5,
        "min_length": 50,
        "max_length": 200,
        "alpha": 0.95,
        "block_trigrams": True,
        "dedup_selection": False,
    },
    "synth": {
        "seed": 0,
        "n_entities": 40,
        "n_content": 300,
        "n_salient": 120,
        "n_noise": 20,
        "min_doc_sentences": 5,
        "max_doc_sentences": 8,
        "min_summary_sentences": 2,
        "max_summary_sentences": 3,
        "min_content_tokens": 3,
        "max_content_tokens": 6,
        "noise_rate": 0.2,
        "coref_rate": 0.4,
        "ref_rate": 0.3,
    },
    "vocab": {
        "min_freq": 1,
        "max_tag": DEFAULT_MAX_TAG,
    },
}


def banner() -> str:
    return (
        f"{APP_NAME} {version_string()}  •  {APP_ID}\n"
        f"Vendor: {COMPANY_NAME}\n"
        f"Data: {APPDATA_DIR}"
    )


if __name__ == "__main__":
    ensure_app_dirs()
    print(banner())
    print("Settings:", SETTINGS_FILE)
    print("Logs:    ", LOG_DIR)
