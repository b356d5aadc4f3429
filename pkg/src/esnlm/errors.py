"""Exception hierarchy. Each class carries a short category used by the CLI."""

from __future__ import annotations


class EsnError(Exception):
    category = "error"


class InvalidArgument(EsnError, ValueError):
    category = "invalid-argument"


class InitializationError(EsnError):
    category = "initialization"


class CorpusIntegrityError(EsnError):
    category = "corpus-integrity"


class VocabularyError(EsnError, ValueError):
    category = "vocabulary"


class FormatError(EsnError, ValueError):
    category = "format"


class CheckpointError(EsnError):
    category = "checkpoint"


class NonFiniteError(EsnError, FloatingPointError):
    """Raised when a loss or gradient leaves the finite range."""

    category = "non-finite"

    def __init__(self, message: str, tensor: str | None = None, batch_index: int | None = None):
        super().__init__(message)
        self.tensor = tensor
        self.batch_index = batch_index
