"""Low-rank softmax readout ``o = A (B h) + b`` and its cross-entropy gradients.

The full ``vocab x state`` output matrix is never formed; every product goes
through the rank-``r`` bottleneck ``z = B h`` first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvalidArgument
from .reservoir import STREAM_HEAD, ReservoirHyperparams, make_rng

PARAM_DTYPE = np.float32
ACCUM_DTYPE = np.float64


@dataclass(eq=False)
class OutputHead:
    a_mat: np.ndarray  # (vocab, rank)
    b_mat: np.ndarray  # (rank, state)
    bias: np.ndarray  # (vocab,)

    def __post_init__(self):
        v, r = self.a_mat.shape
        if self.b_mat.ndim != 2 or self.b_mat.shape[0] != r:
            raise InvalidArgument(f"B must have {r} rows, got shape {self.b_mat.shape}")
        if self.bias.shape != (v,):
            raise InvalidArgument(f"bias must have shape ({v},), got {self.bias.shape}")

    @property
    def vocab_size(self) -> int:
        return self.a_mat.shape[0]

    @property
    def rank(self) -> int:
        return self.a_mat.shape[1]

    @property
    def state_size(self) -> int:
        return self.b_mat.shape[1]

    def tensors(self) -> dict[str, np.ndarray]:
        return {"a_mat": self.a_mat, "b_mat": self.b_mat, "bias": self.bias}

    def copy(self) -> "OutputHead":
        return OutputHead(self.a_mat.copy(), self.b_mat.copy(), self.bias.copy())

    @classmethod
    def zeros(cls, vocab_size: int, rank: int, state_size: int, dtype=PARAM_DTYPE) -> "OutputHead":
        return cls(
            np.zeros((vocab_size, rank), dtype=dtype),
            np.zeros((rank, state_size), dtype=dtype),
            np.zeros(vocab_size, dtype=dtype),
        )


class Gradients(NamedTuple):
    a_mat: np.ndarray
    b_mat: np.ndarray
    bias: np.ndarray


@dataclass(frozen=True)
class LossReport:
    total_nll: float
    predicted_token_count: int

    @property
    def nll_per_token(self) -> float:
        return self.total_nll / self.predicted_token_count


def init_output_head(hp: ReservoirHyperparams, rng: np.random.Generator | None = None) -> OutputHead:
    """Same scheme as a default-initialized linear layer, applied to each factor."""
    rng = rng if rng is not None else make_rng(hp.seed, STREAM_HEAD)
    bound_a = math.sqrt(1.0 / hp.output_rank)
    bound_b = math.sqrt(1.0 / hp.state_size)
    a = rng.uniform(-bound_a, bound_a, (hp.vocab_size, hp.output_rank))
    b = rng.uniform(-bound_b, bound_b, (hp.output_rank, hp.state_size))
    bias = rng.uniform(-bound_a, bound_a, hp.vocab_size)
    return OutputHead(a.astype(PARAM_DTYPE), b.astype(PARAM_DTYPE), bias.astype(PARAM_DTYPE))


def _as_rows(head: OutputHead, states) -> np.ndarray:
    if isinstance(states, np.ndarray):
        h = states
    else:
        h = np.stack([getattr(s, "h", s) for s in states]) if len(states) else np.empty((0, head.state_size))
    if h.ndim == 1:
        h = h[None, :]
    if h.shape[1] != head.state_size:
        raise InvalidArgument(f"state length {h.shape[1]} does not match head state size {head.state_size}")
    return h


def _forward(head: OutputHead, h: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shared float64 forward pass: returns ``(z, A, logits)``."""
    h = h.astype(ACCUM_DTYPE, copy=False)
    a = head.a_mat.astype(ACCUM_DTYPE)
    z = h @ head.b_mat.T.astype(ACCUM_DTYPE)
    return z, a, z @ a.T + head.bias


def logits(head: OutputHead, state: np.ndarray) -> np.ndarray:
    """``A (B h) + b`` for one state vector, or row-wise for a ``(n, state)`` block."""
    h = np.asarray(getattr(state, "h", state))
    out = _forward(head, _as_rows(head, h))[2]
    return out[0] if h.ndim == 1 else out


def log_softmax(o: np.ndarray) -> np.ndarray:
    shifted = o - o.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _check_targets(head: OutputHead, h: np.ndarray, targets) -> np.ndarray:
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    if h.shape[0] == 0 or t.size == 0:
        raise InvalidArgument("no predictions to score")
    if t.size != h.shape[0]:
        raise InvalidArgument(f"{h.shape[0]} states but {t.size} targets")
    if t.min() < 0 or t.max() >= head.vocab_size:
        raise InvalidArgument(f"target outside vocabulary of size {head.vocab_size}")
    return t


def token_nlls(head: OutputHead, states, targets) -> np.ndarray:
    """Per-prediction negative log-probabilities of ``targets``."""
    h = _as_rows(head, states)
    t = _check_targets(head, h, targets)
    lp = log_softmax(_forward(head, h)[2])
    return -lp[np.arange(t.size), t]


def sequence_log_prob(head: OutputHead, states, targets) -> LossReport:
    nll = token_nlls(head, states, targets)
    return LossReport(math.fsum(nll), int(nll.size))


def loss_and_grads(head: OutputHead, states, targets) -> tuple[LossReport, Gradients]:
    """Mean-per-token cross-entropy gradients of the readout.

    With ``g = softmax(o) - onehot(target)`` and ``z = B h``:
    ``dbias = sum g``, ``dA = sum g z^T``, ``dB = sum (A^T g) h^T``, each
    divided by the number of predictions. Accumulation is float64.
    """
    h = _as_rows(head, states).astype(ACCUM_DTYPE, copy=False)
    t = _check_targets(head, h, targets)
    z, a, o = _forward(head, h)
    lp = log_softmax(o)
    n = t.size
    nll = -lp[np.arange(n), t]
    g = np.exp(lp)
    g[np.arange(n), t] -= 1.0
    grads = Gradients(
        a_mat=(g.T @ z) / n,
        b_mat=((g @ a).T @ h) / n,
        bias=g.sum(axis=0) / n,
    )
    return LossReport(math.fsum(nll), n), grads
