"""Command line: ``esnlm <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import read_header
from .config import load_config
from .data import CorpusManifest, prepare_corpus
from .errors import EsnError, InvalidArgument
from .evaluation import load_pairs, minimal_pair_accuracy, validation_nll
from .experiment import AXES, SWEEP_COLUMNS, load_model, sweep, train_run, validate_sweep
from .reservoir import ReservoirHyperparams, count_params

REFERENCE_STATE_SIZES = (1024, 2048, 4096, 8192, 16384, 32768, 65536)


def _emit(text: str, out_dir: Path | None, name: str) -> None:
    sys.stdout.write(text)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / name).write_text(text, encoding="utf-8")


def _parse_values(text: str) -> list[float]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "^" in part:
            base, exp = part.split("^", 1)
            out.append(float(base) ** float(exp))
        else:
            out.append(float(part))
    if not out:
        raise InvalidArgument("empty --values list")
    return out


def count_params_table(hp: ReservoirHyperparams, state_sizes) -> str:
    lines = [
        f"# vocab_size = {hp.vocab_size}",
        f"# rec_degree = {hp.rec_degree}",
        f"# output_rank = {hp.output_rank}",
        "state_size\tfrozen\ttrainable\ttotal\ttrainable_M\ttotal_M",
    ]
    for n in state_sizes:
        c = count_params(hp.replace(state_size=int(n)))
        lines.append(f"{n}\t{c.frozen}\t{c.trainable}\t{c.total}\t{round(c.trainable / 1e6)}\t{round(c.total / 1e6)}")
    return "\n".join(lines) + "\n"


def cmd_count_params(args) -> int:
    sizes = None if args.values is None else [int(v) for v in _parse_values(args.values)]
    if args.config:
        hp = load_config(args.config).hyperparams
        sizes = sizes or [hp.state_size]
    else:
        sizes = sizes or list(REFERENCE_STATE_SIZES)
        hp = ReservoirHyperparams(
            state_size=max(sizes), vocab_size=args.vocab_size, spectral_radius_target=0.99, input_scale=1.0,
            rec_degree=args.rec_degree, leak_min=0.0, leak_max=1.0, activation="tanh",
            output_rank=args.output_rank, seed=0,
        )
    _emit(count_params_table(hp, sizes), Path(args.out) if args.out else None, "params.tsv")
    return 0


def _resolve(args):
    config = load_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    out = Path(args.out) if args.out else config.out_dir
    return config, out


def cmd_train(args) -> int:
    config, out = _resolve(args)
    if out is None:
        raise InvalidArgument("train needs --out or out_dir in the config")
    result = train_run(config, out, resume=args.resume)
    summary = {
        "train_nll": result.train_nll,
        "batches": result.progress.batches_done,
        "predicted_tokens": result.progress.predicted_tokens,
        "validation_nll": result.valid_nll,
        "pair_accuracy": result.pair_report.overall_accuracy if result.pair_report else None,
        "final_checkpoint": str(out / "final.ckpt"),
        "final_digest": result.final_digest,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(summary, indent=2))
    return 0


def cmd_eval_nll(args) -> int:
    model, ck = load_model(args.checkpoint)
    manifest = CorpusManifest.read(args.manifest)
    if manifest.vocab_size != model.reservoir.vocab_size:
        raise InvalidArgument(f"{args.manifest}: vocab_size {manifest.vocab_size} does not match the checkpoint")
    seqs, stats = prepare_corpus(manifest, ck.config.max_len, ck.config.min_len)
    nll = validation_nll(model, seqs)
    text = (
        f"# checkpoint = {args.checkpoint}\n# manifest = {args.manifest}\n"
        "sentences\tpredicted_tokens\tvalidation_nll\n"
        f"{stats.kept}\t{stats.kept_tokens - stats.kept}\t{nll!r}\n"
    )
    _emit(text, Path(args.out) if args.out else None, "eval_nll.tsv")
    return 0


def cmd_eval_pairs(args) -> int:
    model, ck = load_model(args.checkpoint)
    index = args.index or str(args.pairs) + ".index"
    pairs = load_pairs(args.pairs, index, model.reservoir.vocab_size, ck.bos_id, ck.eos_id)
    report = minimal_pair_accuracy(model, pairs, args.score_mode or ck.config.score_mode)
    out = Path(args.out) if args.out else None
    _emit(report.to_tsv(), out, "pairs.tsv")
    sys.stderr.write(report.summary() + "\n")
    if out is not None:
        (out / "pairs_summary.txt").write_text(report.summary() + "\n", encoding="utf-8")
    return 0


def cmd_sweep(args) -> int:
    config, out = _resolve(args)
    values = _parse_values(args.values)
    validate_sweep(config, args.axis, values)
    rows = sweep(config, args.axis, values, args.seeds, out)
    sys.stdout.write("\t".join([args.axis] + SWEEP_COLUMNS[1:]) + "\n")
    for r in rows:
        sys.stdout.write("\t".join(r.cells()) + "\n")
    return 0


def cmd_inspect(args) -> int:
    header, data = read_header(args.checkpoint)
    cursor = header["cursor"]
    info = {k: v for k, v in header.items() if k not in ("cursor", "config")}
    info["cursor"] = {k: v for k, v in cursor.items() if k != "batch_nlls"}
    info["bytes"] = len(data)
    print(json.dumps(info, indent=2, sort_keys=True))
    print("# config")
    print(header["config"], end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="esnlm", description="Echo state network language models.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("count-params", help="expected parameter counts per state size")
    c.add_argument("--config")
    c.add_argument("--values", help="comma-separated state sizes (default: 2^10 .. 2^16)")
    c.add_argument("--vocab-size", type=int, default=50257)
    c.add_argument("--rec-degree", type=int, default=32)
    c.add_argument("--output-rank", type=int, default=512)
    c.add_argument("--out")
    c.set_defaults(func=cmd_count_params)

    t = sub.add_parser("train", help="train the readout for one epoch")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--resume")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval-nll", help="per-token NLL of a checkpoint on a corpus")
    e.add_argument("checkpoint")
    e.add_argument("--manifest", required=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval_nll)

    ep = sub.add_parser("eval-pairs", help="minimal-pair accuracy of a checkpoint")
    ep.add_argument("checkpoint")
    ep.add_argument("--pairs", required=True)
    ep.add_argument("--index", help="tag file, one tag per pair (default: PAIRS.index)")
    ep.add_argument("--score-mode", choices=("total", "per-token"))
    ep.add_argument("--out")
    ep.set_defaults(func=cmd_eval_pairs)

    s = sub.add_parser("sweep", help="train/evaluate across one hyperparameter axis")
    s.add_argument("--config", required=True)
    s.add_argument("--axis", required=True, choices=AXES)
    s.add_argument("--values", required=True, help="comma-separated; '2^-7' style powers allowed")
    s.add_argument("--seeds", type=int, default=1)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    i = sub.add_parser("inspect-checkpoint", help="print a checkpoint header")
    i.add_argument("checkpoint")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except EsnError as e:
        sys.stderr.write(f"error[{e.category}]: {e}\n")
        return 2
    except FileNotFoundError as e:
        sys.stderr.write(f"error[missing-path]: {e}\n")
        return 3
    except (ValueError, OSError) as e:
        sys.stderr.write(f"error[{type(e).__name__}]: {e}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
