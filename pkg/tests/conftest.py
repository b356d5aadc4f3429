from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from esnlm.reservoir import ReservoirHyperparams
from esnlm.synthetic import MarkovSentenceSource, write_synthetic_corpus
from esnlm.evaluation import write_pairs

ACCEPTANCE_LINES: list[str] = []


def small_hp(**changes) -> ReservoirHyperparams:
    base = dict(
        state_size=32, vocab_size=16, spectral_radius_target=0.99, input_scale=1.0, rec_degree=4,
        leak_min=0.0, leak_max=1.0, activation="tanh", output_rank=4, seed=0,
    )
    base.update(changes)
    return ReservoirHyperparams(**base)


def write_config(directory: Path, **overrides) -> Path:
    """Config for the tiny fixture corpus; overrides replace or add keys."""
    keys = {
        "state_size": 32, "vocab_size": 16, "spectral_radius": 0.99, "input_scale": 1.0, "rec_degree": 4,
        "leak_min": 0.0, "leak_max": 1.0, "activation": "tanh", "output_rank": 4, "seed": 7,
        "train_manifest": "train.manifest", "valid_manifest": "valid.manifest",
        "pairs": "pairs.txt", "pairs_index": "pairs.txt.index",
        "batch_size_sentences": 8, "shuffle_seed": 7,
    }
    keys.update(overrides)
    text = "".join(f"{k} = {v}\n" for k, v in keys.items() if v is not None)
    path = directory / "run.cfg"
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def tiny_corpus(tmp_path: Path) -> Path:
    """Markov-chain corpus (about 3k train ids), a pair file and a config."""
    src = MarkovSentenceSource()
    write_synthetic_corpus(tmp_path, src, 3000, 600, seed=11)
    rng = np.random.default_rng(5)
    pairs = []
    for i in range(12):
        good = src.sample_sentence(rng)
        bad = list(good)
        # move the last token into the other hidden state's alphabet
        e = src.emit_size
        bad[-1] = bad[-1] + e if bad[-1] < 2 + e else bad[-1] - e
        pairs.append((good, bad, "swap_a" if i % 2 else "swap_b"))
    write_pairs(tmp_path / "pairs.txt", tmp_path / "pairs.txt.index", pairs)
    write_config(tmp_path)
    return tmp_path


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
