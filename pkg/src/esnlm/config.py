"""Run configuration: a flat ``key = value`` file.

Model hyperparameters have no defaults here and must be written
out. Count-valued keys carry their unit in the name (``_ids``, ``_sentences``,
``_batches``). Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from .data import parse_kv
from .errors import FormatError, InvalidArgument
from .reservoir import ReservoirHyperparams

REQUIRED = (
    "state_size",
    "vocab_size",
    "spectral_radius",
    "input_scale",
    "rec_degree",
    "leak_min",
    "leak_max",
    "activation",
    "output_rank",
    "seed",
    "train_manifest",
    "batch_size_sentences",
    "shuffle_seed",
)

_HP_KEYS = {
    "state_size": ("state_size", int),
    "vocab_size": ("vocab_size", int),
    "spectral_radius": ("spectral_radius_target", float),
    "input_scale": ("input_scale", float),
    "rec_degree": ("rec_degree", int),
    "leak_min": ("leak_min", float),
    "leak_max": ("leak_max", float),
    "activation": ("activation", str),
    "output_rank": ("output_rank", int),
    "seed": ("seed", int),
}

_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


@dataclass(frozen=True)
class RunConfig:
    hyperparams: ReservoirHyperparams
    train_manifest: Path
    batch_size: int
    shuffle_seed: int
    valid_manifest: Path | None = None
    pairs: Path | None = None
    pairs_index: Path | None = None
    out_dir: Path | None = None
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 1e-2
    decay_bias: bool = True
    max_len: int = 512
    min_len: int = 6
    checkpoint_every: int = 0
    score_mode: str = "total"

    def __post_init__(self):
        if self.batch_size <= 0:
            raise InvalidArgument("batch_size_sentences must be positive")
        if self.min_len < 3 or self.max_len < self.min_len:
            raise InvalidArgument("need 3 <= min_len_ids <= max_len_ids")
        if self.checkpoint_every < 0:
            raise InvalidArgument("checkpoint_every_batches must be >= 0")
        if self.score_mode not in ("total", "per-token"):
            raise InvalidArgument(f"score_mode must be 'total' or 'per-token', got {self.score_mode!r}")
        if (self.pairs is None) != (self.pairs_index is None):
            raise InvalidArgument("pairs and pairs_index must be given together")

    def optimizer_settings(self) -> dict:
        return dict(
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.epsilon,
            weight_decay=self.weight_decay,
            decay_bias=self.decay_bias,
        )

    def with_seed(self, seed: int) -> "RunConfig":
        """Master seed: drives both the frozen draws and the data order."""
        return replace(self, hyperparams=self.hyperparams.replace(seed=seed), shuffle_seed=seed)

    def with_hyperparams(self, **changes) -> "RunConfig":
        return replace(self, hyperparams=self.hyperparams.replace(**changes))

    def validate_paths(self) -> None:
        for name in ("train_manifest", "valid_manifest", "pairs", "pairs_index"):
            p = getattr(self, name)
            if p is not None and not Path(p).is_file():
                raise FileNotFoundError(f"{name}: no such file: {p}")

    def to_text(self, include_out_dir: bool = True) -> str:
        hp = self.hyperparams
        lines = ["# reservoir"]
        for key, (attr, _) in _HP_KEYS.items():
            lines.append(f"{key} = {getattr(hp, attr)}")
        lines.append("# data")
        lines.append(f"train_manifest = {self.train_manifest}")
        for key in ("valid_manifest", "pairs", "pairs_index"):
            if getattr(self, key) is not None:
                lines.append(f"{key} = {getattr(self, key)}")
        lines += [
            f"batch_size_sentences = {self.batch_size}",
            f"shuffle_seed = {self.shuffle_seed}",
            f"max_len_ids = {self.max_len}",
            f"min_len_ids = {self.min_len}",
            "# optimizer (AdamW)",
            f"learning_rate = {self.learning_rate!r}",
            f"beta1 = {self.beta1!r}",
            f"beta2 = {self.beta2!r}",
            f"epsilon = {self.epsilon!r}",
            f"weight_decay = {self.weight_decay!r}",
            f"decay_bias = {str(self.decay_bias).lower()}",
            "# run",
            f"checkpoint_every_batches = {self.checkpoint_every}",
            f"score_mode = {self.score_mode}",
        ]
        if include_out_dir and self.out_dir is not None:
            lines.append(f"out_dir = {self.out_dir}")
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.to_text(), encoding="utf-8")
        return path


def parse_config(text: str, source: str = "<config>", base: Path | None = None) -> RunConfig:
    pairs = parse_kv(text, source)
    values: dict[str, str] = {}
    for key, value in pairs:
        if key in values:
            raise FormatError(f"{source}: key {key!r} given twice")
        values[key] = value
    missing = [k for k in REQUIRED if k not in values]
    if missing:
        raise FormatError(f"{source}: missing required keys {missing}")

    def path(key):
        if key not in values:
            return None
        p = Path(values.pop(key))
        return p if p.is_absolute() or base is None else base / p

    def conv(key, fn, default=None):
        if key not in values:
            return default
        raw = values.pop(key)
        try:
            return fn(raw)
        except (ValueError, KeyError):
            raise FormatError(f"{source}: bad value for {key}: {raw!r}") from None

    hp = {attr: conv(key, fn) for key, (attr, fn) in _HP_KEYS.items()}
    cfg = dict(
        hyperparams=ReservoirHyperparams(**hp),
        train_manifest=path("train_manifest"),
        valid_manifest=path("valid_manifest"),
        pairs=path("pairs"),
        pairs_index=path("pairs_index"),
        out_dir=path("out_dir"),
        batch_size=conv("batch_size_sentences", int),
        shuffle_seed=conv("shuffle_seed", int),
    )
    optional = {
        "learning_rate": ("learning_rate", float),
        "beta1": ("beta1", float),
        "beta2": ("beta2", float),
        "epsilon": ("epsilon", float),
        "weight_decay": ("weight_decay", float),
        "decay_bias": ("decay_bias", lambda s: _BOOL[s.lower()]),
        "max_len_ids": ("max_len", int),
        "min_len_ids": ("min_len", int),
        "checkpoint_every_batches": ("checkpoint_every", int),
        "score_mode": ("score_mode", str),
    }
    for key, (attr, fn) in optional.items():
        if key in values:
            cfg[attr] = conv(key, fn)
    if values:
        raise FormatError(f"{source}: unknown keys {sorted(values)}")
    return RunConfig(**cfg)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), str(path), path.parent)
