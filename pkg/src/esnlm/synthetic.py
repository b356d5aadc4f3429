"""Synthetic sentence sources with known statistics.

``MarkovSentenceSource`` has a closed-form per-token entropy, which gives an
exact floor for validation NLL. ``AgreementGrammar`` needs memory across a
variable-length filler span, so larger reservoirs should do better on it,
and it yields minimal pairs (agreeing vs. disagreeing verb).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import CorpusManifest, make_manifest, write_corpus

BOS, EOS = 0, 1


def _entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


@dataclass(frozen=True)
class MarkovSentenceSource:
    """Two hidden states with disjoint emission alphabets, so the tokens are Markov.

    State 0 emits uniformly from ids ``2 .. 2+E-1``, state 1 from the next
    ``E`` ids. A sentence starts in the stationary distribution, has at least
    ``min_content`` content tokens, and after that ends with probability
    ``stop_prob`` after every token.
    """

    transition: tuple[tuple[float, float], tuple[float, float]] = ((0.8, 0.2), (0.3, 0.7))
    emit_size: int = 7
    stop_prob: float = 0.15
    min_content: int = 4

    @property
    def vocab_size(self) -> int:
        return 2 + 2 * self.emit_size

    @property
    def stationary(self) -> np.ndarray:
        p = np.asarray(self.transition)
        a, b = p[0, 1], p[1, 0]
        return np.array([b / (a + b), a / (a + b)])

    def entropy_per_token(self) -> float:
        """Expected NLL per predicted token (EOS included) of the true process, in nats."""
        pi = self.stationary
        q = self.stop_prob
        log_e = math.log(self.emit_size)
        h_step = float(sum(pi[s] * _entropy(self.transition[s]) for s in range(2))) + log_e
        h_stop = _entropy([q, 1 - q])
        per_sentence = (_entropy(pi) + log_e) + (self.min_content - 1) * h_step + (h_stop + (1 - q) * h_step) / q
        predictions = self.min_content + (1 - q) / q + 1
        return per_sentence / predictions

    def sample_sentence(self, rng: np.random.Generator) -> list[int]:
        p = np.asarray(self.transition)
        s = int(rng.random() < self.stationary[1])
        out = []
        while True:
            out.append(2 + s * self.emit_size + int(rng.integers(self.emit_size)))
            if len(out) >= self.min_content and rng.random() < self.stop_prob:
                return out
            s = int(rng.random() < p[s, 1])

    def sample(self, n_tokens: int, rng: np.random.Generator) -> list[list[int]]:
        """Sentences until at least ``n_tokens`` framed ids have been produced."""
        out, total = [], 0
        while total < n_tokens:
            s = self.sample_sentence(rng)
            out.append(s)
            total += len(s) + 2
        return out


@dataclass
class AgreementGrammar:
    """``noun(c) filler* verb(c) filler+ EOS`` with a Markov filler chain.

    The verb class must match the noun class across a geometric-length
    filler span. Each filler has a few preferred successors.
    """

    n_nouns: int = 8
    n_verbs: int = 8
    n_fillers: int = 30
    mean_gap: float = 5.0
    mean_tail: float = 2.0
    successors: int = 3
    seed: int = 1234
    filler_transition: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        t = np.full((self.n_fillers, self.n_fillers), 0.02 / self.n_fillers)
        for i in range(self.n_fillers):
            nxt = rng.choice(self.n_fillers, self.successors, replace=False)
            t[i, nxt] += rng.dirichlet(np.ones(self.successors)) * 0.98
        self.filler_transition = t / t.sum(axis=1, keepdims=True)
        self._cdf = np.cumsum(self.filler_transition, axis=1)

    @property
    def vocab_size(self) -> int:
        return 2 + 2 * self.n_nouns + 2 * self.n_verbs + self.n_fillers

    def noun(self, cls: int, i: int) -> int:
        return 2 + cls * self.n_nouns + i

    def verb(self, cls: int, i: int) -> int:
        return 2 + 2 * self.n_nouns + cls * self.n_verbs + i

    def filler(self, i: int) -> int:
        return 2 + 2 * self.n_nouns + 2 * self.n_verbs + i

    def _fillers(self, n: int, start: int, rng: np.random.Generator) -> tuple[list[int], int]:
        out, f = [], start
        for _ in range(n):
            f = min(int(np.searchsorted(self._cdf[f], rng.random(), side="right")), self.n_fillers - 1)
            out.append(self.filler(f))
        return out, f

    def sample_parts(self, rng: np.random.Generator) -> tuple[list[int], int, int, int]:
        """Sentence with its verb position, class and verb index."""
        cls = int(rng.integers(2))
        gap = int(rng.geometric(1.0 / self.mean_gap))
        tail = int(rng.geometric(1.0 / self.mean_tail))
        f0 = int(rng.integers(self.n_fillers))
        left, f = self._fillers(gap, f0, rng)
        vi = int(rng.integers(self.n_verbs))
        right, _ = self._fillers(tail, f, rng)
        sent = [self.noun(cls, int(rng.integers(self.n_nouns)))] + left + [self.verb(cls, vi)] + right
        return sent, 1 + gap, cls, vi

    def sample(self, n_tokens: int, rng: np.random.Generator) -> list[list[int]]:
        out, total = [], 0
        while total < n_tokens:
            s = self.sample_parts(rng)[0]
            out.append(s)
            total += len(s) + 2
        return out

    def minimal_pairs(self, n: int, rng: np.random.Generator) -> list[tuple[list[int], list[int], str]]:
        """``(good, bad, tag)`` where ``bad`` swaps the verb to the other class."""
        pairs = []
        for _ in range(n):
            sent, pos, cls, vi = self.sample_parts(rng)
            bad = list(sent)
            bad[pos] = self.verb(1 - cls, vi)
            tag = "agreement_short" if pos <= 3 else "agreement_long"
            pairs.append((sent, bad, tag))
        return pairs


def write_split(
    directory: str | Path, name: str, sentences: list[list[int]], vocab_size: int
) -> CorpusManifest:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    corpus = directory / f"{name}.txt"
    write_corpus(corpus, sentences)
    return make_manifest(directory / f"{name}.manifest", [corpus], vocab_size, BOS, EOS)


def write_synthetic_corpus(
    directory: str | Path, source, train_tokens: int, valid_tokens: int, seed: int
) -> tuple[CorpusManifest, CorpusManifest]:
    rng = np.random.default_rng(seed)
    train = write_split(directory, "train", source.sample(train_tokens, rng), source.vocab_size)
    valid = write_split(directory, "valid", source.sample(valid_tokens, rng), source.vocab_size)
    return train, valid
