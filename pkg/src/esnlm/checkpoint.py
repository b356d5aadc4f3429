"""Binary checkpoint, format version 1.

Layout (all integers little-endian)::

    b"ESNLMCKP"  u32 version  u32 header_len  header (UTF-8 JSON)
    tensor*      u16 name_len, name, u8 dtype code, u8 ndim, u64 dims[ndim], raw data
    sha256 of every preceding byte (32 bytes)

Frozen reservoir tensors are stored, not re-derived from the seed. Parameters
are 32-bit floats; optimizer moments are 64-bit.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig, parse_config
from .errors import CheckpointError
from .head import OutputHead
from .optim import PARAM_NAMES, OptimizerState
from .reservoir import RNG_FAMILY, Reservoir
from .sparse import SparseMatrix
from .train import EpochProgress

MAGIC = b"ESNLMCKP"
FORMAT_VERSION = 1
_DTYPES = {1: "<f4", 2: "<f8", 3: "<i4", 4: "<i8"}
_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


@dataclass(eq=False)
class Checkpoint:
    config: RunConfig
    reservoir: Reservoir
    head: OutputHead
    opt: OptimizerState
    progress: EpochProgress
    bos_id: int
    eos_id: int
    total_batches: int
    digest: str = ""

    @property
    def complete(self) -> bool:
        return self.progress.batches_done >= self.total_batches


def _write_tensor(buf: io.BytesIO, name: str, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    code = _CODES.get(np.dtype(dt))
    if code is None:
        raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
    raw = name.encode()
    buf.write(struct.pack("<H", len(raw)) + raw)
    buf.write(struct.pack("<BB", code, arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


def _read_tensor(view: memoryview, pos: int) -> tuple[str, np.ndarray, int]:
    (n,) = struct.unpack_from("<H", view, pos)
    pos += 2
    name = bytes(view[pos : pos + n]).decode()
    pos += n
    code, ndim = struct.unpack_from("<BB", view, pos)
    pos += 2
    shape = struct.unpack_from(f"<{ndim}Q", view, pos)
    pos += 8 * ndim
    dt = np.dtype(_DTYPES[code])
    count = int(np.prod(shape)) if ndim else 1
    arr = np.frombuffer(view, dtype=dt, count=count, offset=pos).reshape(shape)
    pos += count * dt.itemsize
    return name, arr.astype(dt.newbyteorder("="), copy=True), pos


def _sparse_tensors(prefix: str, m: SparseMatrix) -> list[tuple[str, np.ndarray]]:
    return [
        (f"{prefix}.indptr", m.indptr.astype(np.int64)),
        (f"{prefix}.indices", m.indices.astype(np.int32)),
        (f"{prefix}.data", m.data.astype(np.float32)),
    ]


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> str:
    """Write ``ckpt`` atomically; returns the content digest."""
    res, head, opt = ckpt.reservoir, ckpt.head, ckpt.opt
    hp = res.hyperparams
    header = {
        "format_version": FORMAT_VERSION,
        "rng_family": RNG_FAMILY,
        "seed": hp.seed,
        "shuffle_seed": ckpt.config.shuffle_seed,
        "config": ckpt.config.to_text(include_out_dir=False),
        "shapes": {"w_in": [res.w_in.rows, res.w_in.cols], "w_rec": [res.w_rec.rows, res.w_rec.cols]},
        "measured_spectral_radius": res.measured_spectral_radius,
        "bos_id": ckpt.bos_id,
        "eos_id": ckpt.eos_id,
        "optimizer": {
            "step_count": opt.step_count,
            "learning_rate": opt.learning_rate,
            "beta1": opt.beta1,
            "beta2": opt.beta2,
            "epsilon": opt.epsilon,
            "weight_decay": opt.weight_decay,
            "decay_bias": opt.decay_bias,
        },
        "cursor": {
            "batches_done": ckpt.progress.batches_done,
            "total_batches": ckpt.total_batches,
            "predicted_tokens": ckpt.progress.predicted_tokens,
            "batch_nlls": ckpt.progress.batch_nlls,
        },
    }
    tensors = _sparse_tensors("w_in", res.w_in) + _sparse_tensors("w_rec", res.w_rec)
    tensors.append(("leak", res.leak.astype(np.float32)))
    tensors += [(name, arr.astype(np.float32)) for name, arr in head.tensors().items()]
    tensors += [(f"m.{k}", opt.first_moment[k].astype(np.float64)) for k in PARAM_NAMES]
    tensors += [(f"v.{k}", opt.second_moment[k].astype(np.float64)) for k in PARAM_NAMES]

    buf = io.BytesIO()
    head_bytes = json.dumps(header, sort_keys=True).encode()
    buf.write(MAGIC + struct.pack("<II", FORMAT_VERSION, len(head_bytes)) + head_bytes)
    for name, arr in tensors:
        _write_tensor(buf, name, arr)
    body = buf.getvalue()
    digest = hashlib.sha256(body).digest()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(body + digest)
    tmp.replace(path)
    ckpt.digest = digest.hex()
    return ckpt.digest


def read_header(path: str | Path) -> tuple[dict, bytes]:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 8 + 32 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not an esnlm checkpoint")
    version, hlen = struct.unpack_from("<II", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: content digest mismatch (file corrupted or truncated)")
    start = len(MAGIC) + 8
    header = json.loads(body[start : start + hlen].decode())
    return header, data


def load_checkpoint(path: str | Path) -> Checkpoint:
    header, data = read_header(path)
    view = memoryview(data[:-32])
    pos = len(MAGIC) + 8 + struct.unpack_from("<I", data, len(MAGIC) + 4)[0]
    tensors = {}
    while pos < len(view):
        name, arr, pos = _read_tensor(view, pos)
        tensors[name] = arr

    config = parse_config(header["config"], f"{path}:config")
    hp = config.hyperparams

    def sparse(prefix):
        rows, cols = header["shapes"][prefix]
        return SparseMatrix(rows, cols, tensors[f"{prefix}.indptr"], tensors[f"{prefix}.indices"], tensors[f"{prefix}.data"])

    try:
        res = Reservoir(hp, sparse("w_in"), sparse("w_rec"), tensors["leak"], header["measured_spectral_radius"])
        head = OutputHead(tensors["a_mat"], tensors["b_mat"], tensors["bias"])
    except KeyError as e:
        raise CheckpointError(f"{path}: missing tensor {e}") from None
    o = header["optimizer"]
    opt = OptimizerState(
        {k: tensors[f"m.{k}"] for k in PARAM_NAMES},
        {k: tensors[f"v.{k}"] for k in PARAM_NAMES},
        step_count=o["step_count"],
        learning_rate=o["learning_rate"],
        beta1=o["beta1"],
        beta2=o["beta2"],
        epsilon=o["epsilon"],
        weight_decay=o["weight_decay"],
        decay_bias=o["decay_bias"],
    )
    c = header["cursor"]
    progress = EpochProgress(list(c["batch_nlls"]), c["predicted_tokens"])
    return Checkpoint(
        config, res, head, opt, progress, header["bos_id"], header["eos_id"], c["total_batches"],
        hashlib.sha256(data[:-32]).hexdigest(),
    )
