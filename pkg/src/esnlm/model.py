"""A reservoir paired with its readout, and batched scoring of whole sentences."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .head import OutputHead, token_nlls
from .reservoir import Reservoir, run_batch

EVAL_CHUNK = 64


@dataclass(eq=False)
class LanguageModel:
    reservoir: Reservoir
    head: OutputHead

    def __post_init__(self):
        if self.head.state_size != self.reservoir.state_size:
            raise ValueError("head and reservoir disagree on state size")
        if self.head.vocab_size != self.reservoir.vocab_size:
            raise ValueError("head and reservoir disagree on vocabulary size")


def sentence_nlls(model: LanguageModel, sequences: Sequence, chunk: int = EVAL_CHUNK) -> tuple[np.ndarray, np.ndarray]:
    """Total NLL and number of predictions for each sentence."""
    totals, counts = [], []
    for start in range(0, len(sequences), chunk):
        part = sequences[start : start + chunk]
        states, targets = run_batch(model.reservoir, part)
        nll = token_nlls(model.head, states, targets)
        lengths = np.array([len(getattr(s, "ids", s)) - 1 for s in part])
        bounds = np.concatenate([[0], np.cumsum(lengths)])
        # fsum: correctly rounded, so a sentence's total never depends on its batch
        totals.append([math.fsum(nll[a:b]) for a, b in zip(bounds[:-1], bounds[1:])])
        counts.append(lengths)
    return np.concatenate(totals).astype(np.float64), np.concatenate(counts)
