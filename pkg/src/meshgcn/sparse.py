"""Row-compressed sparse matrices and the sparse-dense product.

The only sparse operation the network needs is ``spmm`` (CSR times a
dense matrix). Two interchangeable kernels exist: a compiled Cython
extension and a pure-numpy fallback. The compiled one is picked at
import when available; setting ``MESHGCN_PURE=1`` forces the fallback.
Both accumulate each output row in ascending column order, so results
are bit-reproducible and backend-independent.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _spmm_py
from .dtypes import DTYPE, INDEX_DTYPE
from .errors import StructuralInputError

try:
    from . import _spmm as _spmm_ext
except ImportError:  # extension not built
    _spmm_ext = None

_FORCE_PURE = os.environ.get("MESHGCN_PURE", "0") not in ("", "0")
_ACTIVE = _spmm_py if (_spmm_ext is None or _FORCE_PURE) else _spmm_ext


def spmm_backend() -> str:
    """Name of the kernel selected at import: 'compiled' or 'python'."""
    return "python" if _ACTIVE is _spmm_py else "compiled"


@dataclass(frozen=True)
class CsrMatrix:
    """Immutable CSR matrix with sorted, duplicate-free column indices."""

    indptr: np.ndarray   # (n_rows + 1,) int64
    indices: np.ndarray  # (nnz,) int64, sorted per row
    data: np.ndarray     # (nnz,) DTYPE
    shape: tuple[int, int]

    def __post_init__(self):
        indptr = np.ascontiguousarray(self.indptr, dtype=INDEX_DTYPE)
        indices = np.ascontiguousarray(self.indices, dtype=INDEX_DTYPE)
        data = np.ascontiguousarray(self.data, dtype=DTYPE)
        n_rows, n_cols = self.shape
        if indptr.shape != (n_rows + 1,) or indptr[0] != 0:
            raise StructuralInputError("malformed indptr")
        if indptr[-1] != indices.shape[0] or indices.shape != data.shape:
            raise StructuralInputError("index/data length mismatch")
        if np.any(np.diff(indptr) < 0):
            raise StructuralInputError("indptr must be non-decreasing")
        if indices.size:
            if indices.min() < 0 or indices.max() >= n_cols:
                raise StructuralInputError("column index out of range")
            for arr in np.split(indices, indptr[1:-1]):
                if arr.size > 1 and np.any(np.diff(arr) <= 0):
                    raise StructuralInputError(
                        "columns must be strictly increasing within a row"
                    )
        for arr in (indptr, indices, data):
            arr.setflags(write=False)
        object.__setattr__(self, "indptr", indptr)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "data", data)

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    @classmethod
    def from_dense(cls, dense) -> "CsrMatrix":
        dense = np.asarray(dense, dtype=DTYPE)
        if dense.ndim != 2:
            raise StructuralInputError("dense input must be 2-D")
        rows, cols = np.nonzero(dense)
        indptr = np.zeros(dense.shape[0] + 1, dtype=INDEX_DTYPE)
        np.add.at(indptr, rows + 1, 1)
        np.cumsum(indptr, out=indptr)
        return cls(indptr, cols.astype(INDEX_DTYPE), dense[rows, cols],
                   dense.shape)

    @classmethod
    def from_edges(cls, n: int, edges, values=None) -> "CsrMatrix":
        """Build an n x n matrix from (row, col) pairs.

        Duplicate pairs are collapsed (last value wins; for the default
        all-ones values this is plain deduplication).
        """
        edges = np.asarray(edges, dtype=INDEX_DTYPE).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= n):
            raise StructuralInputError("edge index out of range")
        if values is None:
            values = np.ones(edges.shape[0], dtype=DTYPE)
        values = np.asarray(values, dtype=DTYPE)
        order = np.lexsort((edges[:, 1], edges[:, 0]))
        edges, values = edges[order], values[order]
        if edges.shape[0]:
            keep = np.ones(edges.shape[0], dtype=bool)
            keep[1:] = np.any(edges[1:] != edges[:-1], axis=1)
            edges, values = edges[keep], values[keep]
        indptr = np.zeros(n + 1, dtype=INDEX_DTYPE)
        np.add.at(indptr, edges[:, 0] + 1, 1)
        np.cumsum(indptr, out=indptr)
        return cls(indptr, edges[:, 1].copy(), values, (n, n))

    @classmethod
    def identity(cls, n: int) -> "CsrMatrix":
        idx = np.arange(n, dtype=INDEX_DTYPE)
        indptr = np.arange(n + 1, dtype=INDEX_DTYPE)
        return cls(indptr, idx, np.ones(n, dtype=DTYPE), (n, n))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=DTYPE)
        for i in range(self.shape[0]):
            sl = slice(self.indptr[i], self.indptr[i + 1])
            out[i, self.indices[sl]] = self.data[sl]
        return out

    def row_counts(self) -> np.ndarray:
        return np.diff(self.indptr)

    def is_structurally_symmetric(self) -> bool:
        rows = np.repeat(np.arange(self.shape[0]), self.row_counts())
        here = set(zip(rows.tolist(), self.indices.tolist()))
        return all((c, r) in here for r, c in here)


def spmm(a: CsrMatrix, x: np.ndarray) -> np.ndarray:
    """Exact CSR-dense product a @ x with fixed per-row summation order.

    Accepts x of shape (n, k) or (n,); the result has the matching shape.
    """
    x = np.asarray(x, dtype=DTYPE)
    vector_in = x.ndim == 1
    if vector_in:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] != a.shape[1]:
        raise StructuralInputError(
            f"spmm dimension mismatch: {a.shape} @ {x.shape}"
        )
    x = np.ascontiguousarray(x)
    out = np.empty((a.shape[0], x.shape[1]), dtype=DTYPE)
    _ACTIVE.csr_matmul_dense(a.indptr, a.indices, a.data, x, out)
    return out[:, 0] if vector_in else out


def spmm_python(a: CsrMatrix, x: np.ndarray) -> np.ndarray:
    """spmm forced onto the pure-numpy kernel (for tests and benchmarks)."""
    x = np.ascontiguousarray(x, dtype=DTYPE)
    out = np.empty((a.shape[0], x.shape[1]), dtype=DTYPE)
    _spmm_py.csr_matmul_dense(a.indptr, a.indices, a.data, x, out)
    return out


def spmm_compiled(a: CsrMatrix, x: np.ndarray) -> np.ndarray:
    """spmm forced onto the compiled kernel; raises if it is not built."""
    if _spmm_ext is None:
        raise RuntimeError("compiled spmm extension is not available")
    x = np.ascontiguousarray(x, dtype=DTYPE)
    out = np.empty((a.shape[0], x.shape[1]), dtype=DTYPE)
    _spmm_ext.csr_matmul_dense(a.indptr, a.indices, a.data, x, out)
    return out
