"""One-epoch readout training: frozen reservoir forward, analytic gradients, AdamW."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .errors import InvalidArgument, NonFiniteError
from .head import LossReport, OutputHead, loss_and_grads
from .optim import OptimizerState, adamw_step
from .reservoir import Reservoir, run_batch


@dataclass
class EpochProgress:
    """Running record of an epoch; enough to resume it exactly."""

    batch_nlls: list[float] = field(default_factory=list)
    predicted_tokens: int = 0

    @property
    def batches_done(self) -> int:
        return len(self.batch_nlls)

    @property
    def train_nll(self) -> float:
        """Equal-weight mean of per-batch NLLs."""
        if not self.batch_nlls:
            raise InvalidArgument("no batches recorded")
        return math.fsum(self.batch_nlls) / len(self.batch_nlls)


def train_batch(reservoir: Reservoir, head: OutputHead, opt: OptimizerState, batch: Sequence) -> LossReport:
    states, targets = run_batch(reservoir, batch)
    report, grads = loss_and_grads(head, states, targets)
    if not math.isfinite(report.total_nll):
        raise NonFiniteError("non-finite training loss")
    adamw_step(head, opt, grads)
    return report


def train_epoch(
    reservoir: Reservoir,
    head: OutputHead,
    opt: OptimizerState,
    batches: Iterable[Sequence],
    progress: EpochProgress | None = None,
    on_batch: Callable[[int, LossReport, EpochProgress], None] | None = None,
) -> tuple[OutputHead, OptimizerState, EpochProgress]:
    """Train the readout on every batch once, one AdamW step per batch.

    ``progress`` continues a partially finished epoch; the caller is then
    responsible for skipping the batches already consumed. ``on_batch`` is
    called after each step with the zero-based batch index.
    """
    progress = progress if progress is not None else EpochProgress()
    seen = 0
    for batch in batches:
        index = progress.batches_done
        try:
            report = train_batch(reservoir, head, opt, batch)
        except NonFiniteError as e:
            raise NonFiniteError(f"{e} at batch {index}", tensor=e.tensor, batch_index=index) from e
        progress.batch_nlls.append(report.nll_per_token)
        progress.predicted_tokens += report.predicted_token_count
        seen += 1
        if on_batch is not None:
            on_batch(index, report, progress)
    if seen == 0 and progress.batches_done == 0:
        raise InvalidArgument("training batch iterator was empty")
    return head, opt, progress
