"""Frozen sparse weight storage.

Entries are kept in compressed-row form for the recurrent product ``W @ h``;
a compressed-column index is built on demand for gathering single columns,
which is how a one-hot input is applied without ever forming the one-hot
vector.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgument

# Above this fill fraction products go through a dense copy; BLAS beats CSR there.
DENSE_PRODUCT_DENSITY = 0.25

_MASK_CHUNK_CELLS = 1 << 22


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    rows: int
    cols: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0:
            raise InvalidArgument(f"matrix dimensions must be positive, got {self.rows}x{self.cols}")
        if self.indptr.shape != (self.rows + 1,):
            raise InvalidArgument("indptr length must be rows + 1")
        if self.indices.shape != self.data.shape:
            raise InvalidArgument("indices and data lengths differ")
        if self.indptr[0] != 0 or self.indptr[-1] != self.data.size or np.any(np.diff(self.indptr) < 0):
            raise InvalidArgument("indptr is not a valid row pointer")
        if self.data.size:
            if self.indices.min() < 0 or self.indices.max() >= self.cols:
                raise InvalidArgument("column index out of range")
            if not np.all(np.isfinite(self.data)):
                raise InvalidArgument("stored values must be finite")
            # strictly increasing columns within every row rules out duplicates
            row_of = np.repeat(np.arange(self.rows), np.diff(self.indptr))
            key = row_of.astype(np.int64) * self.cols + self.indices
            if np.any(np.diff(key) <= 0):
                raise InvalidArgument("entries must be sorted row-major without duplicates")
        for arr in (self.indptr, self.indices, self.data):
            arr.setflags(write=False)

    @classmethod
    def from_coo(cls, rows: int, cols: int, row_idx, col_idx, values, dtype=np.float32) -> "SparseMatrix":
        row_idx = np.asarray(row_idx, dtype=np.int64)
        col_idx = np.asarray(col_idx, dtype=np.int64)
        values = np.asarray(values, dtype=dtype)
        order = np.lexsort((col_idx, row_idx))
        row_idx, col_idx, values = row_idx[order], col_idx[order], values[order]
        indptr = np.zeros(rows + 1, dtype=np.int64)
        if row_idx.size:
            if row_idx.min() < 0 or row_idx.max() >= rows:
                raise InvalidArgument("row index out of range")
            np.cumsum(np.bincount(row_idx, minlength=rows), out=indptr[1:])
        return cls(rows, cols, indptr, col_idx.astype(np.int32), values)

    @classmethod
    def from_dense(cls, dense, dtype=np.float32) -> "SparseMatrix":
        dense = np.asarray(dense)
        r, c = np.nonzero(dense)
        return cls.from_coo(dense.shape[0], dense.shape[1], r, c, dense[r, c], dtype=dtype)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def nnz(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def density(self) -> float:
        return self.nnz / (self.rows * self.cols)

    def row_indices(self) -> np.ndarray:
        return np.repeat(np.arange(self.rows, dtype=np.int64), np.diff(self.indptr))

    def entries(self):
        """Iterate ``(row, col, value)`` in row-major order."""
        for r, c, v in zip(self.row_indices(), self.indices, self.data):
            yield int(r), int(c), v.item()

    def to_dense(self, dtype=None) -> np.ndarray:
        out = np.zeros(self.shape, dtype=dtype or self.dtype)
        out[self.row_indices(), self.indices] = self.data
        return out

    def scaled(self, factor: float, dtype=None) -> "SparseMatrix":
        dtype = dtype or self.dtype
        data = (self.data.astype(np.float64) * factor).astype(dtype)
        return SparseMatrix(self.rows, self.cols, self.indptr.copy(), self.indices.copy(), data)

    def astype(self, dtype) -> "SparseMatrix":
        return SparseMatrix(self.rows, self.cols, self.indptr.copy(), self.indices.copy(), self.data.astype(dtype))

    def _scipy(self) -> sp.csr_matrix:
        m = self._cache.get("csr")
        if m is None:
            m = sp.csr_matrix((self.data, self.indices, self.indptr), shape=self.shape)
            self._cache["csr"] = m
        return m

    def _dense_cached(self) -> np.ndarray:
        d = self._cache.get("dense")
        if d is None:
            d = self.to_dense()
            d.setflags(write=False)
            self._cache["dense"] = d
        return d

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """``W @ x`` for a vector ``x`` or a column block ``x`` of shape (cols, k)."""
        if x.shape[0] != self.cols:
            raise InvalidArgument(f"operand has {x.shape[0]} rows, matrix has {self.cols} columns")
        if self.density >= DENSE_PRODUCT_DENSITY:
            return self._dense_cached() @ x
        return self._scipy() @ x

    @cached_property
    def _column_index(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        # stable sort keeps row order inside each column
        order = np.argsort(self.indices, kind="stable")
        colptr = np.zeros(self.cols + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.indices, minlength=self.cols), out=colptr[1:])
        return colptr, self.row_indices()[order], self.data[order]

    def column(self, j: int) -> np.ndarray:
        """Dense copy of column ``j``."""
        if not 0 <= j < self.cols:
            raise InvalidArgument(f"column {j} out of range [0, {self.cols})")
        colptr, rows, vals = self._column_index
        out = np.zeros(self.rows, dtype=self.dtype)
        lo, hi = colptr[j], colptr[j + 1]
        out[rows[lo:hi]] = vals[lo:hi]
        return out

    def gather_columns(self, cols) -> np.ndarray:
        """Dense ``(rows, len(cols))`` block whose k-th column is column ``cols[k]``."""
        cols = np.asarray(cols, dtype=np.int64)
        if cols.size and (cols.min() < 0 or cols.max() >= self.cols):
            raise InvalidArgument("column index out of range")
        colptr, rows, vals = self._column_index
        starts, ends = colptr[cols], colptr[cols + 1]
        counts = ends - starts
        out = np.zeros((self.rows, cols.size), dtype=self.dtype)
        total = int(counts.sum())
        if total:
            which = np.repeat(np.arange(cols.size), counts)
            offsets = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
            src = np.repeat(starts, counts) + offsets
            out[rows[src], which] = vals[src]
        return out

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.array([self.rows, self.cols], dtype="<i8").tobytes())
        for arr in (self.indptr, self.indices, self.data):
            h.update(str(arr.dtype).encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def sample_masked_gaussian(
    rows: int,
    cols: int,
    connectivity: float,
    std: float,
    rng: np.random.Generator,
    dtype=np.float32,
) -> SparseMatrix:
    """Bernoulli(connectivity) mask times Normal(0, std**2) values.

    Draw order is fixed: every mask cell first, row-major, then one normal
    per kept cell in the same order. Chunking the mask draws does not change
    the stream.
    """
    if rows <= 0 or cols <= 0:
        raise InvalidArgument(f"dimensions must be positive, got {rows}x{cols}")
    if not (0.0 < connectivity <= 1.0):
        raise InvalidArgument(f"connectivity must lie in (0, 1], got {connectivity}")
    if not math.isfinite(std) or std < 0:
        raise InvalidArgument(f"std must be finite and non-negative, got {std}")

    chunk_rows = max(1, _MASK_CHUNK_CELLS // cols)
    kept = []
    for r0 in range(0, rows, chunk_rows):
        r1 = min(rows, r0 + chunk_rows)
        u = rng.random((r1 - r0) * cols)
        kept.append(np.flatnonzero(u < connectivity) + r0 * cols)
    flat = np.concatenate(kept) if kept else np.empty(0, dtype=np.int64)
    values = rng.standard_normal(flat.size) * std
    row_idx, col_idx = np.divmod(flat, cols)
    indptr = np.zeros(rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(row_idx, minlength=rows), out=indptr[1:])
    return SparseMatrix(rows, cols, indptr, col_idx.astype(np.int32), values.astype(dtype))
