"""Validation NLL and minimal-pair grammaticality accuracy.

Pair files use the corpus line format: two lines per pair, grammatical
sentence first. A sidecar index file gives one phenomenon tag per pair, one
per line, in the same order.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import TokenSequence, parse_corpus_lines
from .errors import FormatError, InvalidArgument
from .model import LanguageModel, sentence_nlls

SCORE_MODES = ("total", "per-token")


@dataclass(frozen=True)
class MinimalPair:
    good: TokenSequence
    bad: TokenSequence
    phenomenon_tag: str

    def __post_init__(self):
        if self.good == self.bad:
            raise InvalidArgument("a minimal pair needs two different sentences")


@dataclass
class EvalReport:
    overall_accuracy: float
    per_phenomenon: dict[str, float]
    phenomenon_counts: dict[str, int]
    pair_count: int
    validation_nll: float | None = None
    score_mode: str = "total"

    @property
    def macro_accuracy(self) -> float:
        return float(np.mean(list(self.per_phenomenon.values())))

    def rows(self) -> list[tuple[str, int, float]]:
        out = [(tag, self.phenomenon_counts[tag], self.per_phenomenon[tag]) for tag in sorted(self.per_phenomenon)]
        out.append(("overall", self.pair_count, self.overall_accuracy))
        return out

    def to_tsv(self) -> str:
        lines = ["phenomenon\tpairs\taccuracy"]
        lines += [f"{tag}\t{n}\t{acc!r}" for tag, n, acc in self.rows()]
        lines.append(f"macro\t{len(self.per_phenomenon)}\t{self.macro_accuracy!r}")
        if self.validation_nll is not None:
            lines.append(f"validation_nll\t-\t{self.validation_nll!r}")
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        parts = [
            f"minimal pairs: {self.pair_count}, accuracy {100 * self.overall_accuracy:.1f}% "
            f"(macro over {len(self.per_phenomenon)} phenomena {100 * self.macro_accuracy:.1f}%)"
        ]
        width = max(len(t) for t in self.per_phenomenon)
        for tag, n, acc in self.rows()[:-1]:
            parts.append(f"  {tag:<{width}}  {100 * acc:5.1f}%  ({n} pairs)")
        if self.validation_nll is not None:
            parts.append(f"validation NLL {self.validation_nll:.4f} nats/token")
        return "\n".join(parts)


def sentence_scores(model: LanguageModel, seqs: Sequence[TokenSequence], mode: str = "total") -> np.ndarray:
    if mode not in SCORE_MODES:
        raise InvalidArgument(f"score mode must be one of {SCORE_MODES}, got {mode!r}")
    totals, counts = sentence_nlls(model, seqs)
    return -totals if mode == "total" else -totals / counts


def sentence_score(model: LanguageModel, seq: TokenSequence, mode: str = "total") -> float:
    """Log-probability of the whole sentence (sum over its predictions)."""
    return float(sentence_scores(model, [seq], mode)[0])


def minimal_pair_accuracy(model: LanguageModel, pairs: Sequence[MinimalPair], mode: str = "total") -> EvalReport:
    """A pair is correct only if the grammatical sentence scores strictly higher."""
    if not pairs:
        raise InvalidArgument("no minimal pairs to evaluate")
    good = sentence_scores(model, [p.good for p in pairs], mode)
    bad = sentence_scores(model, [p.bad for p in pairs], mode)
    return accuracy_report([p.phenomenon_tag for p in pairs], good > bad, mode)


def accuracy_report(tags: Sequence[str], correct: np.ndarray, mode: str = "total") -> EvalReport:
    hits: dict[str, int] = defaultdict(int)
    counts: dict[str, int] = defaultdict(int)
    for tag, ok in zip(tags, correct):
        counts[tag] += 1
        hits[tag] += bool(ok)
    per = {t: hits[t] / counts[t] for t in counts}
    return EvalReport(
        overall_accuracy=sum(hits.values()) / len(tags),
        per_phenomenon=per,
        phenomenon_counts=dict(counts),
        pair_count=len(tags),
        score_mode=mode,
    )


def validation_nll(model: LanguageModel, corpus: Sequence[TokenSequence]) -> float:
    """Token-weighted NLL per prediction over the whole corpus."""
    if not corpus:
        raise InvalidArgument("validation corpus is empty")
    totals, counts = sentence_nlls(model, corpus)
    return math.fsum(totals) / int(counts.sum())


def load_pairs(
    pairs_path: str | Path, index_path: str | Path, vocab_size: int, bos: int, eos: int
) -> list[MinimalPair]:
    pairs_path, index_path = Path(pairs_path), Path(index_path)
    for p in (pairs_path, index_path):
        if not p.is_file():
            raise FileNotFoundError(f"pair file not found: {p}")
    with open(pairs_path, encoding="utf-8") as fh:
        lines = [ids for _, ids in parse_corpus_lines(fh, str(pairs_path), vocab_size, bos, eos, skip_empty=False)]
    if len(lines) % 2:
        raise FormatError(f"{pairs_path}: odd number of lines ({len(lines)}); pairs need good and bad lines")
    tags = [t.strip() for t in index_path.read_text(encoding="utf-8").splitlines() if t.strip()]
    if len(tags) != len(lines) // 2:
        raise FormatError(f"{index_path}: {len(tags)} tags for {len(lines) // 2} pairs in {pairs_path}")
    return [
        MinimalPair(TokenSequence.framed(lines[2 * i], bos, eos), TokenSequence.framed(lines[2 * i + 1], bos, eos), tag)
        for i, tag in enumerate(tags)
    ]


def write_pairs(pairs_path: str | Path, index_path: str | Path, pairs: Sequence[tuple[Sequence[int], Sequence[int], str]]) -> None:
    with open(pairs_path, "w", encoding="utf-8", newline="\n") as f:
        for good, bad, _ in pairs:
            f.write(" ".join(map(str, good)) + "\n")
            f.write(" ".join(map(str, bad)) + "\n")
    with open(index_path, "w", encoding="utf-8", newline="\n") as f:
        for _, _, tag in pairs:
            f.write(f"{tag}\n")
