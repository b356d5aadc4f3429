"""Pre-tokenized sentence corpora: manifest, loading, length filtering, batching.

Corpus files hold one sentence per line as whitespace-separated decimal
token ids, without BOS/EOS; the loader adds the framing. A manifest is a
flat ``key = value`` file::

    vocab_size = 50257
    bos_id = 50255
    eos_id = 50256
    token_count = 1234567
    file = train.txt sha256=9f86d0...

``token_count`` is the number of content ids over all files. ``file`` may
repeat; relative paths resolve against the manifest's directory.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .errors import CorpusIntegrityError, FormatError, InvalidArgument, VocabularyError
from .reservoir import STREAM_SHUFFLE, make_rng

log = logging.getLogger(__name__)

MAX_LEN = 512
MIN_LEN = 6


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]

    def __post_init__(self):
        if len(self.ids) < 3:
            raise InvalidArgument(f"a framed sequence needs at least 3 ids, got {len(self.ids)}")

    @classmethod
    def framed(cls, content: Iterable[int], bos: int, eos: int) -> "TokenSequence":
        return cls((bos, *(int(x) for x in content), eos))

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def content(self) -> tuple[int, ...]:
        return self.ids[1:-1]


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def parse_kv(text: str, source: str) -> list[tuple[str, str]]:
    """``key = value`` lines; ``#`` starts a comment. Keys may repeat."""
    out = []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{source}:{n}: expected 'key = value', got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise FormatError(f"{source}:{n}: empty key")
        out.append((key, value))
    return out


@dataclass
class CorpusManifest:
    files: list[Path]
    vocab_size: int
    bos_id: int
    eos_id: int
    token_count: int
    digests: list[str]
    path: Path | None = None

    def __post_init__(self):
        if self.vocab_size <= 0:
            raise InvalidArgument("vocab_size must be positive")
        if self.bos_id == self.eos_id:
            raise InvalidArgument("bos_id and eos_id must differ")
        for name in ("bos_id", "eos_id"):
            if not 0 <= getattr(self, name) < self.vocab_size:
                raise InvalidArgument(f"{name} must lie in [0, vocab_size)")
        if len(self.files) != len(self.digests):
            raise InvalidArgument("every file needs a digest")

    @classmethod
    def read(cls, path: str | Path) -> "CorpusManifest":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"manifest not found: {path}")
        pairs = parse_kv(path.read_text(encoding="utf-8"), str(path))
        scalars: dict[str, str] = {}
        files, digests = [], []
        for key, value in pairs:
            if key == "file":
                parts = value.rsplit(None, 1)
                if len(parts) != 2 or not parts[1].startswith("sha256="):
                    raise FormatError(f"{path}: file entry must be '<path> sha256=<hex>', got {value!r}")
                files.append(path.parent / parts[0])
                digests.append(parts[1][len("sha256="):])
            elif key in ("vocab_size", "bos_id", "eos_id", "token_count"):
                scalars[key] = value
            else:
                raise FormatError(f"{path}: unknown manifest key {key!r}")
        missing = {"vocab_size", "bos_id", "eos_id", "token_count"} - scalars.keys()
        if missing:
            raise FormatError(f"{path}: missing keys {sorted(missing)}")
        if not files:
            raise FormatError(f"{path}: no corpus files listed")
        try:
            ints = {k: int(v) for k, v in scalars.items()}
        except ValueError as e:
            raise FormatError(f"{path}: {e}") from None
        return cls(files, ints["vocab_size"], ints["bos_id"], ints["eos_id"], ints["token_count"], digests, path)

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        lines = [
            f"vocab_size = {self.vocab_size}",
            f"bos_id = {self.bos_id}",
            f"eos_id = {self.eos_id}",
            f"token_count = {self.token_count}",
        ]
        for f, d in zip(self.files, self.digests):
            rel = Path(f)
            try:
                rel = rel.resolve().relative_to(path.parent.resolve())
            except ValueError:
                rel = rel.resolve()
            lines.append(f"file = {rel.as_posix()} sha256={d}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        self.path = path
        return path


def write_corpus(path: str | Path, sentences: Iterable[Sequence[int]]) -> int:
    """Write content-id sentences in corpus format; returns the number of ids written."""
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for s in sentences:
            f.write(" ".join(str(int(x)) for x in s) + "\n")
            count += len(s)
    return count


def make_manifest(
    manifest_path: str | Path, corpus_files: Sequence[str | Path], vocab_size: int, bos_id: int, eos_id: int
) -> CorpusManifest:
    """Digest and count ``corpus_files`` and write a manifest next to them."""
    count = 0
    for f in corpus_files:
        with open(f, encoding="utf-8") as fh:
            count += sum(len(line.split()) for line in fh)
    m = CorpusManifest(
        [Path(f) for f in corpus_files], vocab_size, bos_id, eos_id, count, [sha256_file(f) for f in corpus_files]
    )
    m.write(manifest_path)
    return m


@dataclass
class LoadStats:
    lines: int = 0
    empty_lines: int = 0
    sequences: int = 0
    content_tokens: int = 0


def parse_corpus_lines(
    lines: Iterable[str], source: str, vocab_size: int, bos: int, eos: int, skip_empty: bool = True
) -> Iterator[tuple[int, list[int] | None]]:
    """Yield ``(line_number, content_ids)``; empty lines give ``None`` content.

    Non-integer tokens are collected and reported together with their line
    numbers once the input is exhausted.
    """
    malformed = []
    for n, raw in enumerate(lines, 1):
        text = raw.rstrip("\n").rstrip("\r")
        parts = text.split()
        if not parts:
            if not skip_empty:
                raise FormatError(f"{source}:{n}: empty line")
            yield n, None
            continue
        try:
            ids = [int(p, 10) for p in parts]
        except ValueError:
            malformed.append(n)
            continue
        for col, tok in enumerate(ids, 1):
            if not 0 <= tok < vocab_size:
                raise VocabularyError(f"{source}:{n}: token {tok} (position {col}) outside vocabulary of size {vocab_size}")
            if tok in (bos, eos):
                raise VocabularyError(f"{source}:{n}: token {tok} (position {col}) is a reserved BOS/EOS id")
        yield n, ids
    if malformed:
        shown = ", ".join(map(str, malformed[:20])) + (" ..." if len(malformed) > 20 else "")
        raise FormatError(f"{source}: {len(malformed)} malformed line(s) at {shown}")


def load_corpus(manifest: CorpusManifest, stats: LoadStats | None = None) -> Iterator[TokenSequence]:
    """Stream framed sentences from every manifest file, in listed order."""
    stats = stats if stats is not None else LoadStats()
    for f, digest in zip(manifest.files, manifest.digests):
        if not Path(f).is_file():
            raise FileNotFoundError(f"corpus file not found: {f}")
        actual = sha256_file(f)
        if actual != digest:
            raise CorpusIntegrityError(f"{f}: sha256 {actual} does not match manifest digest {digest}")
    for f in manifest.files:
        with open(f, encoding="utf-8") as fh:
            for _, ids in parse_corpus_lines(fh, str(f), manifest.vocab_size, manifest.bos_id, manifest.eos_id):
                stats.lines += 1
                if ids is None:
                    stats.empty_lines += 1
                    continue
                stats.sequences += 1
                stats.content_tokens += len(ids)
                yield TokenSequence.framed(ids, manifest.bos_id, manifest.eos_id)
    if stats.empty_lines:
        log.warning("skipped %d empty line(s)", stats.empty_lines)
    if stats.content_tokens != manifest.token_count:
        raise CorpusIntegrityError(
            f"manifest declares {manifest.token_count} tokens, files contain {stats.content_tokens}"
        )


def filter_and_truncate(seq: TokenSequence, max_len: int = MAX_LEN, min_len: int = MIN_LEN) -> TokenSequence | None:
    """Drop sentences shorter than ``min_len`` ids, cut longer ones to ``max_len``.

    Lengths include BOS and EOS. A cut sentence keeps its first
    ``max_len - 1`` ids and ends in EOS.
    """
    n = len(seq.ids)
    if n < min_len:
        return None
    if n <= max_len:
        return seq
    return TokenSequence(seq.ids[: max_len - 1] + (seq.ids[-1],))


@dataclass
class FilterStats:
    raw_tokens: int = 0
    kept_tokens: int = 0
    dropped_tokens: int = 0
    truncated_tokens: int = 0
    kept: int = 0
    dropped: int = 0
    truncated: int = 0
    load: LoadStats = field(default_factory=LoadStats)

    def reconciles(self) -> bool:
        return self.kept_tokens + self.dropped_tokens + self.truncated_tokens == self.raw_tokens


def filter_corpus(
    sequences: Iterable[TokenSequence], max_len: int = MAX_LEN, min_len: int = MIN_LEN, stats: FilterStats | None = None
) -> list[TokenSequence]:
    """Apply ``filter_and_truncate`` to a stream; counts are framed ids."""
    stats = stats if stats is not None else FilterStats()
    out = []
    for seq in sequences:
        n = len(seq)
        stats.raw_tokens += n
        kept = filter_and_truncate(seq, max_len, min_len)
        if kept is None:
            stats.dropped += 1
            stats.dropped_tokens += n
            continue
        if len(kept) < n:
            stats.truncated += 1
            stats.truncated_tokens += n - len(kept)
        stats.kept += 1
        stats.kept_tokens += len(kept)
        out.append(kept)
    return out


def prepare_corpus(
    manifest: CorpusManifest, max_len: int = MAX_LEN, min_len: int = MIN_LEN
) -> tuple[list[TokenSequence], FilterStats]:
    stats = FilterStats()
    seqs = filter_corpus(load_corpus(manifest, stats.load), max_len, min_len, stats)
    return seqs, stats


def batch_iterator(
    corpus: Sequence[TokenSequence], batch_size: int = 32, shuffle_seed: int = 0
) -> Iterator[list[TokenSequence]]:
    """One pass over ``corpus`` in a seeded random order; the last batch may be short."""
    if batch_size <= 0:
        raise InvalidArgument("batch_size must be positive")
    if len(corpus) == 0:
        raise InvalidArgument("corpus is empty after filtering")
    order = make_rng(shuffle_seed, STREAM_SHUFFLE).permutation(len(corpus))
    return ([corpus[i] for i in order[s : s + batch_size]] for s in range(0, len(order), batch_size))


def num_batches(corpus_size: int, batch_size: int) -> int:
    return -(-corpus_size // batch_size)
