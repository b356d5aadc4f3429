"""Frozen echo-state reservoir: initialization, leaky tanh dynamics, parameter counts."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, fields
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InitializationError, InvalidArgument
from .sparse import SparseMatrix, sample_masked_gaussian
from .spectral import DENSE_FALLBACK_MAX, DEFAULT_TOL, dense_spectral_radius, estimate_spectral_radius

STATE_DTYPE = np.float32
RNG_FAMILY = "numpy.PCG64"

# independent child streams of the master seed
STREAM_RESERVOIR = 0
STREAM_HEAD = 1
STREAM_SHUFFLE = 2


def make_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream,))))


ACTIVATIONS = {"tanh": np.tanh}


@dataclass(frozen=True)
class ReservoirHyperparams:
    state_size: int
    vocab_size: int
    spectral_radius_target: float
    input_scale: float
    rec_degree: int
    leak_min: float
    leak_max: float
    activation: str
    output_rank: int
    seed: int

    def __post_init__(self):
        for name in ("state_size", "vocab_size", "rec_degree", "output_rank"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v <= 0:
                raise InvalidArgument(f"{name} must be a positive integer, got {v!r}")
        if self.rec_degree > self.state_size:
            raise InvalidArgument(
                f"rec_degree={self.rec_degree} exceeds state_size={self.state_size} (connectivity > 1)"
            )
        if not (math.isfinite(self.spectral_radius_target) and self.spectral_radius_target > 0):
            raise InvalidArgument(f"spectral_radius_target must be positive, got {self.spectral_radius_target}")
        if not (math.isfinite(self.input_scale) and self.input_scale >= 0):
            raise InvalidArgument(f"input_scale must be finite and non-negative, got {self.input_scale}")
        for name in ("leak_min", "leak_max"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidArgument(f"{name} must lie in [0, 1], got {v}")
        if self.leak_min > self.leak_max:
            raise InvalidArgument(f"leak_min={self.leak_min} exceeds leak_max={self.leak_max}")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgument(f"unknown activation {self.activation!r}; choose from {sorted(ACTIVATIONS)}")
        if self.output_rank >= min(self.state_size, self.vocab_size):
            raise InvalidArgument(
                f"output_rank={self.output_rank} must be below min(state_size, vocab_size)="
                f"{min(self.state_size, self.vocab_size)}"
            )
        if self.seed < 0:
            raise InvalidArgument("seed must be non-negative")

    @property
    def connectivity(self) -> float:
        return self.rec_degree / self.state_size

    def replace(self, **changes) -> "ReservoirHyperparams":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return ReservoirHyperparams(**values)


@dataclass(frozen=True, eq=False)
class Reservoir:
    hyperparams: ReservoirHyperparams
    w_in: SparseMatrix
    w_rec: SparseMatrix
    leak: np.ndarray
    measured_spectral_radius: float

    def __post_init__(self):
        hp = self.hyperparams
        if self.w_in.shape != (hp.state_size, hp.vocab_size):
            raise InvalidArgument(f"w_in has shape {self.w_in.shape}")
        if self.w_rec.shape != (hp.state_size, hp.state_size):
            raise InvalidArgument(f"w_rec has shape {self.w_rec.shape}")
        if self.leak.shape != (hp.state_size,):
            raise InvalidArgument(f"leak has shape {self.leak.shape}")
        self.leak.setflags(write=False)
        object.__setattr__(self, "_retain", (1 - self.leak).astype(STATE_DTYPE))

    @property
    def state_size(self) -> int:
        return self.hyperparams.state_size

    @property
    def vocab_size(self) -> int:
        return self.hyperparams.vocab_size

    def realized_nnz(self) -> tuple[int, int]:
        """Actual stored entries of (w_in, w_rec); ``count_params`` gives expectations."""
        return self.w_in.nnz, self.w_rec.nnz

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.w_in.digest().encode())
        h.update(self.w_rec.digest().encode())
        h.update(np.ascontiguousarray(self.leak).tobytes())
        h.update(repr(self.measured_spectral_radius).encode())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class ReservoirState:
    h: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, state_size: int) -> "ReservoirState":
        return cls(np.zeros(state_size, dtype=STATE_DTYPE), 0)


def init_input_matrix(hp: ReservoirHyperparams, rng: np.random.Generator) -> SparseMatrix:
    return sample_masked_gaussian(hp.state_size, hp.vocab_size, hp.connectivity, hp.input_scale, rng)


def init_recurrent_matrix(
    hp: ReservoirHyperparams, rng: np.random.Generator, tol: float = DEFAULT_TOL
) -> tuple[SparseMatrix, float]:
    """Sample a sparse Gaussian matrix and rescale it to the target spectral radius.

    Returns the rescaled matrix (state dtype) and the radius of the raw sample.
    The raw radius is exact for ``state_size <= 512`` and a power-iteration
    estimate above that.
    """
    raw = sample_masked_gaussian(hp.state_size, hp.state_size, hp.connectivity, 1.0, rng, dtype=np.float64)
    if hp.state_size <= DENSE_FALLBACK_MAX:
        radius = dense_spectral_radius(raw)
    else:
        radius = estimate_spectral_radius(raw, tol=tol, rng=rng).value
    if not radius > 0.0:
        raise InitializationError(
            f"raw recurrent sample has zero spectral radius (nnz={raw.nnz}); "
            "change the seed or raise rec_degree"
        )
    return raw.scaled(hp.spectral_radius_target / radius, dtype=STATE_DTYPE), radius


def init_leaking_rates(hp: ReservoirHyperparams, rng: np.random.Generator) -> np.ndarray:
    if hp.leak_min == hp.leak_max:
        return np.full(hp.state_size, hp.leak_min, dtype=STATE_DTYPE)
    return rng.uniform(hp.leak_min, hp.leak_max, hp.state_size).astype(STATE_DTYPE)


def build_reservoir(hp: ReservoirHyperparams) -> Reservoir:
    """Deterministic in ``hp`` (including ``hp.seed``): W_in, then W_rec, then leak rates."""
    rng = make_rng(hp.seed, STREAM_RESERVOIR)
    w_in = init_input_matrix(hp, rng)
    w_rec, radius = init_recurrent_matrix(hp, rng)
    leak = init_leaking_rates(hp, rng)
    return Reservoir(hp, w_in, w_rec, leak, radius)


def _update(res: Reservoir, h: np.ndarray, drive: np.ndarray) -> np.ndarray:
    a = res.leak if h.ndim == 1 else res.leak[:, None]
    keep = res._retain if h.ndim == 1 else res._retain[:, None]
    pre = res.w_rec.matvec(h) + drive
    return keep * h + a * ACTIVATIONS[res.hyperparams.activation](pre)


def step(res: Reservoir, state: ReservoirState, token: int) -> ReservoirState:
    if not 0 <= token < res.vocab_size:
        raise InvalidArgument(f"token {token} outside vocabulary of size {res.vocab_size}")
    if state.h.shape != (res.state_size,):
        raise InvalidArgument(f"state has shape {state.h.shape}, expected ({res.state_size},)")
    h = state.h.astype(STATE_DTYPE, copy=False)
    return ReservoirState(_update(res, h, res.w_in.column(int(token))), state.t + 1)


def run_sequence(res: Reservoir, tokens: Sequence[int], h0: np.ndarray | None = None) -> list[ReservoirState]:
    """States after feeding ``tokens[:-1]`` from a zero state.

    The last token (EOS) is only ever a prediction target. ``h0`` overrides
    the zero initial state; it exists for perturbation experiments.
    """
    ids = list(getattr(tokens, "ids", tokens))
    if len(ids) < 2:
        raise InvalidArgument("a sequence needs at least BOS and one more token")
    state = ReservoirState.zeros(res.state_size)
    if h0 is not None:
        state = ReservoirState(np.asarray(h0, dtype=STATE_DTYPE).copy(), 0)
    out = []
    for tok in ids[:-1]:
        state = step(res, state, tok)
        out.append(state)
    return out


def run_batch(res: Reservoir, sequences: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Batched ``run_sequence`` over sentences of different lengths.

    Returns ``(states, targets)``: row k of ``states`` is the state that
    predicts ``targets[k]``. Rows are grouped sentence by sentence, in input
    order, so sentence i owns rows ``offsets[i]:offsets[i+1]`` with
    ``offsets = cumsum(len(seq) - 1)``.
    """
    seqs = [np.asarray(getattr(s, "ids", s), dtype=np.int64) for s in sequences]
    if not seqs:
        raise InvalidArgument("empty batch")
    lengths = np.array([len(s) - 1 for s in seqs])
    if lengths.min() < 1:
        raise InvalidArgument("every sequence needs at least BOS and one more token")
    for s in seqs:
        if s.min() < 0 or s.max() >= res.vocab_size:
            raise InvalidArgument(f"token outside vocabulary of size {res.vocab_size}")
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    states = np.empty((offsets[-1], res.state_size), dtype=STATE_DTYPE)
    targets = np.concatenate([s[1:] for s in seqs])

    order = np.argsort(-lengths, kind="stable")
    h = np.zeros((res.state_size, len(seqs)), dtype=STATE_DTYPE)
    for t in range(int(lengths.max())):
        # sentences still running at step t are a prefix of the length-sorted order
        live = order[: int(np.count_nonzero(lengths[order] > t))]
        if live.size < h.shape[1]:
            h = np.ascontiguousarray(h[:, : live.size])
        toks = np.array([seqs[i][t] for i in live])
        h = _update(res, h, res.w_in.gather_columns(toks))
        states[offsets[live] + t] = h.T
    return states, targets


class ParamCounts(NamedTuple):
    frozen: int
    trainable: int
    total: int


def count_params(hp: ReservoirHyperparams) -> ParamCounts:
    """Expected parameter counts (non-zeros of the sparse matrices in expectation)."""
    width = hp.state_size + hp.vocab_size
    frozen = width * hp.rec_degree + hp.state_size
    trainable = width * hp.output_rank + hp.vocab_size
    total = width * (hp.rec_degree + hp.output_rank + 1)
    assert frozen + trainable == total
    return ParamCounts(frozen, trainable, total)
