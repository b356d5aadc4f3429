"""Echo state network language models: frozen sparse reservoir, trained low-rank readout."""

from .data import CorpusManifest, TokenSequence, batch_iterator, filter_and_truncate, load_corpus
from .evaluation import EvalReport, MinimalPair, minimal_pair_accuracy, sentence_score, validation_nll
from .head import LossReport, OutputHead, init_output_head, logits, loss_and_grads, sequence_log_prob
from .model import LanguageModel
from .optim import OptimizerState, adamw_step
from .reservoir import (
    Reservoir,
    ReservoirHyperparams,
    ReservoirState,
    build_reservoir,
    count_params,
    run_sequence,
    step,
)
from .sparse import SparseMatrix, sample_masked_gaussian
from .spectral import estimate_spectral_radius
from .train import train_epoch

__version__ = "0.1.0"

__all__ = ["CorpusManifest", "TokenSequence", "batch_iterator", "filter_and_truncate", "load_corpus",
    "EvalReport", "MinimalPair", "minimal_pair_accuracy", "sentence_score", "validation_nll", "LossReport",
    "OutputHead", "init_output_head", "logits", "loss_and_grads", "sequence_log_prob", "LanguageModel",
    "OptimizerState", "adamw_step", "Reservoir", "ReservoirHyperparams", "ReservoirState", "build_reservoir",
    "count_params", "run_sequence", "step", "SparseMatrix", "sample_masked_gaussian",
    "estimate_spectral_radius", "train_epoch"]
