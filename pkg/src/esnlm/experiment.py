"""Training runs, evaluation and hyperparameter sweeps built from a RunConfig."""

from __future__ import annotations

import itertools
import json
import logging
import math
import statistics
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import CorpusManifest, TokenSequence, batch_iterator, num_batches, prepare_corpus
from .errors import InvalidArgument
from .evaluation import EvalReport, load_pairs, minimal_pair_accuracy, validation_nll
from .head import init_output_head
from .model import LanguageModel
from .optim import OptimizerState
from .reservoir import build_reservoir, count_params
from .train import EpochProgress, train_epoch

log = logging.getLogger(__name__)

AXES = ("state_size", "connectivity", "leak_min")


class MetricsLog:
    """Append-only JSON-lines log, flushed after every record."""

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path else None
        self._t0 = time.monotonic()

    def write(self, event: str, **fields) -> None:
        if self.path is None:
            return
        rec = {"event": event, "wall_s": round(time.monotonic() - self._t0, 3), **fields}
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps(rec) + "\n")


@dataclass(eq=False)
class RunResult:
    model: LanguageModel
    opt: OptimizerState
    progress: EpochProgress
    valid_nll: float | None = None
    pair_report: EvalReport | None = None
    final_digest: str | None = None

    @property
    def train_nll(self) -> float:
        return self.progress.train_nll


def load_split(manifest_path: Path, config: RunConfig) -> tuple[list[TokenSequence], CorpusManifest]:
    manifest = CorpusManifest.read(manifest_path)
    if manifest.vocab_size != config.hyperparams.vocab_size:
        raise InvalidArgument(
            f"{manifest_path}: vocab_size {manifest.vocab_size} differs from config vocab_size "
            f"{config.hyperparams.vocab_size}"
        )
    seqs, stats = prepare_corpus(manifest, config.max_len, config.min_len)
    log.info(
        "%s: %d sentences kept, %d dropped, %d truncated", manifest_path, stats.kept, stats.dropped, stats.truncated
    )
    return seqs, manifest


def evaluate(model: LanguageModel, config: RunConfig, bos: int, eos: int) -> tuple[float | None, EvalReport | None]:
    valid = pairs = None
    if config.valid_manifest is not None:
        seqs, _ = load_split(config.valid_manifest, config)
        valid = validation_nll(model, seqs)
    if config.pairs is not None:
        mp = load_pairs(config.pairs, config.pairs_index, config.hyperparams.vocab_size, bos, eos)
        pairs = minimal_pair_accuracy(model, mp, config.score_mode)
        pairs.validation_nll = valid
    return valid, pairs


def train_run(
    config: RunConfig,
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
    evaluate_after: bool = True,
) -> RunResult:
    """Initialize (or resume), train one epoch, optionally evaluate.

    With ``out_dir`` the run writes ``metrics.jsonl``, ``config.txt``,
    periodic checkpoints under ``checkpoints/`` and ``final.ckpt``.
    """
    config.validate_paths()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        config.save(out / "config.txt")
    metrics = MetricsLog(out / "metrics.jsonl" if out else None)

    train_seqs, manifest = load_split(config.train_manifest, config)
    total = num_batches(len(train_seqs), config.batch_size)
    if resume is not None:
        ck = load_checkpoint(resume)
        if ck.config.hyperparams != config.hyperparams or ck.config.shuffle_seed != config.shuffle_seed:
            raise InvalidArgument(f"{resume}: checkpoint was written by a different configuration")
        reservoir, head, opt, progress = ck.reservoir, ck.head, ck.opt, ck.progress
        metrics.write("resume", checkpoint=str(resume), batches_done=progress.batches_done)
    else:
        reservoir = build_reservoir(config.hyperparams)
        head = init_output_head(config.hyperparams)
        opt = OptimizerState.for_head(head, **config.optimizer_settings())
        progress = EpochProgress()
        metrics.write("init", reservoir_digest=reservoir.digest(), measured_spectral_radius=reservoir.measured_spectral_radius)

    def snapshot(path: Path) -> str:
        ck = Checkpoint(config, reservoir, head, opt, progress, manifest.bos_id, manifest.eos_id, total)
        return save_checkpoint(path, ck)

    def on_batch(index, report, prog):
        metrics.write("batch", batch=index, train_nll=report.nll_per_token, tokens=report.predicted_token_count)
        done = index + 1
        if out is not None and config.checkpoint_every and done % config.checkpoint_every == 0 and done < total:
            (out / "checkpoints").mkdir(exist_ok=True)
            snapshot(out / "checkpoints" / f"batch-{done:06d}.ckpt")

    batches = itertools.islice(
        batch_iterator(train_seqs, config.batch_size, config.shuffle_seed), progress.batches_done, None
    )
    if progress.batches_done < total:
        head, opt, progress = train_epoch(reservoir, head, opt, batches, progress, on_batch)
    result = RunResult(LanguageModel(reservoir, head), opt, progress)
    metrics.write("epoch", train_nll=progress.train_nll, batches=progress.batches_done, tokens=progress.predicted_tokens)
    if out is not None:
        result.final_digest = snapshot(out / "final.ckpt")
    if evaluate_after:
        result.valid_nll, result.pair_report = evaluate(result.model, config, manifest.bos_id, manifest.eos_id)
        if result.valid_nll is not None:
            metrics.write("eval", validation_nll=result.valid_nll)
        if result.pair_report is not None:
            metrics.write("eval", pair_accuracy=result.pair_report.overall_accuracy, pairs=result.pair_report.pair_count)
    return result


def apply_axis(config: RunConfig, axis: str, value: float) -> RunConfig:
    hp = config.hyperparams
    if axis == "state_size":
        if value != int(value) or value <= 0:
            raise InvalidArgument(f"state_size values must be positive integers, got {value}")
        return config.with_hyperparams(state_size=int(value))
    if axis == "connectivity":
        if not 0 < value <= 1:
            raise InvalidArgument(f"connectivity must lie in (0, 1], got {value}")
        degree = value * hp.state_size
        if abs(degree - round(degree)) > 1e-9 or round(degree) < 1:
            raise InvalidArgument(f"connectivity {value} x state_size {hp.state_size} is not a whole degree")
        return config.with_hyperparams(rec_degree=int(round(degree)))
    if axis == "leak_min":
        return config.with_hyperparams(leak_min=float(value))
    raise InvalidArgument(f"unknown sweep axis {axis!r}; choose from {AXES}")


def standard_error(xs: Sequence[float]) -> float:
    return statistics.stdev(xs) / math.sqrt(len(xs)) if len(xs) > 1 else math.nan


@dataclass
class SweepRow:
    axis: str
    value: float
    trainable: int
    total: int
    seeds: list[int]
    train_nll: list[float]
    valid_nll: list[float]
    pair_accuracy: list[float]

    @staticmethod
    def _stats(xs):
        if not xs:
            return (math.nan, math.nan, math.nan)
        return (statistics.fmean(xs), standard_error(xs), statistics.median(xs))

    def cells(self) -> list[str]:
        out = [f"{self.value:g}", str(self.trainable), str(self.total), f"{self.trainable / 1e6:.0f}", f"{self.total / 1e6:.0f}"]
        for xs in (self.train_nll, self.valid_nll, self.pair_accuracy):
            out += [f"{v:.6f}" for v in self._stats(xs)]
        return out


SWEEP_COLUMNS = [
    "value", "trainable", "total", "trainable_M", "total_M",
    "train_nll_mean", "train_nll_se", "train_nll_median",
    "valid_nll_mean", "valid_nll_se", "valid_nll_median",
    "pair_acc_mean", "pair_acc_se", "pair_acc_median",
]


def validate_sweep(config: RunConfig, axis: str, values: Sequence[float]) -> list[RunConfig]:
    if not values:
        raise InvalidArgument("no sweep values given")
    return [apply_axis(config, axis, v) for v in values]


def sweep(
    config: RunConfig, axis: str, values: Sequence[float], seeds: int = 1, out_dir: str | Path | None = None
) -> list[SweepRow]:
    """Train and evaluate one model per (value, seed).

    Run ``i`` of every value uses master seed ``config.seed + i`` for both the
    frozen draws and the data order.
    """
    if seeds <= 0:
        raise InvalidArgument("seeds must be positive")
    configs = validate_sweep(config, axis, values)
    out = Path(out_dir) if out_dir is not None else None
    runs_log = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        runs_log = MetricsLog(out / "sweep_runs.jsonl")
    base_seed = config.hyperparams.seed
    rows = []
    for value, cfg in zip(values, configs):
        counts = count_params(cfg.hyperparams)
        row = SweepRow(axis, float(value), counts.trainable, counts.total, [], [], [], [])
        for i in range(seeds):
            run_cfg = cfg.with_seed(base_seed + i)
            res = train_run(run_cfg)
            row.seeds.append(base_seed + i)
            row.train_nll.append(res.train_nll)
            if res.valid_nll is not None:
                row.valid_nll.append(res.valid_nll)
            if res.pair_report is not None:
                row.pair_accuracy.append(res.pair_report.overall_accuracy)
            log.info("%s=%g seed=%d train=%.4f valid=%s", axis, value, base_seed + i, res.train_nll, res.valid_nll)
            if runs_log is not None:
                runs_log.write(
                    "run", axis=axis, value=value, seed=base_seed + i, train_nll=res.train_nll,
                    valid_nll=res.valid_nll,
                    pair_accuracy=res.pair_report.overall_accuracy if res.pair_report else None,
                )
        rows.append(row)
    if out is not None:
        write_sweep_table(out / "sweep.tsv", config, axis, seeds, rows)
    return rows


def write_sweep_table(path: Path, config: RunConfig, axis: str, seeds: int, rows: list[SweepRow]) -> None:
    lines = [f"# sweep axis = {axis}", f"# seeds per value = {seeds} (master seeds from seed = {config.hyperparams.seed})"]
    lines += [f"# {line}" for line in config.to_text().splitlines() if not line.startswith("#")]
    lines.append("\t".join([axis] + SWEEP_COLUMNS[1:]))
    lines += ["\t".join(r.cells()) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> tuple[LanguageModel, Checkpoint]:
    ck = load_checkpoint(path)
    return LanguageModel(ck.reservoir, ck.head), ck
