"""Surface graphs and symmetric adjacency normalization.

A surface graph couples an N x F node feature matrix with a binary,
symmetric, zero-diagonal N x N adjacency. Before propagation the
adjacency gets a self loop per node and is rescaled on both sides by
the inverse square root of the self-loop-inclusive degree; the result
is symmetric with every entry in (0, 1] and diagonal entries equal to
the reciprocal degree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dtypes import DTYPE, INDEX_DTYPE
from .errors import StructuralInputError
from .sparse import CsrMatrix, spmm


@dataclass(frozen=True)
class SurfaceGraph:
    """N nodes with F-dim features plus a binary symmetric adjacency."""

    node_features: np.ndarray  # (N, F)
    adjacency: CsrMatrix       # (N, N), binary, symmetric, zero diagonal
    num_nodes: int

    def __post_init__(self):
        feats = np.ascontiguousarray(self.node_features, dtype=DTYPE)
        if feats.ndim != 2 or feats.shape[0] != self.num_nodes:
            raise StructuralInputError(
                f"node_features must be ({self.num_nodes}, F), "
                f"got {feats.shape}"
            )
        _check_adjacency(self.adjacency, self.num_nodes)
        feats.setflags(write=False)
        object.__setattr__(self, "node_features", feats)

    @property
    def num_features(self) -> int:
        return self.node_features.shape[1]


@dataclass(frozen=True)
class NormalizedAdjacency:
    """Propagation matrix: self-looped adjacency scaled by degree.

    ``degrees`` holds the self-loop-inclusive node degrees the scaling
    was derived from.
    """

    matrix: CsrMatrix
    degrees: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.matrix.shape[0]

    def matmul(self, x: np.ndarray) -> np.ndarray:
        return spmm(self.matrix, x)

    @classmethod
    def identity(cls, n: int) -> "NormalizedAdjacency":
        """Propagation matrix of the edgeless graph (every node isolated)."""
        return cls(CsrMatrix.identity(n), np.ones(n, dtype=DTYPE))


def _check_adjacency(a: CsrMatrix, n: int) -> None:
    if a.shape != (n, n):
        raise StructuralInputError(f"adjacency must be {n}x{n}, got {a.shape}")
    if a.data.size and not np.all(a.data == 1.0):
        raise StructuralInputError("adjacency entries must all be 1")
    rows = np.repeat(np.arange(n), a.row_counts())
    if np.any(rows == a.indices):
        raise StructuralInputError("adjacency diagonal must be zero")
    if not a.is_structurally_symmetric():
        raise StructuralInputError("adjacency must be symmetric")


def normalize_adjacency(a: CsrMatrix) -> NormalizedAdjacency:
    """Add self loops and scale symmetrically by inverse sqrt degrees.

    The entry at (i, j) becomes 1/sqrt(d_i * d_j) where d is the
    self-loop-inclusive degree; symmetry is exact because the value is
    computed from the same product on both sides of the diagonal.
    """
    if a.shape[0] != a.shape[1]:
        raise StructuralInputError(f"adjacency must be square, got {a.shape}")
    _check_adjacency(a, a.shape[0])
    n = a.shape[0]
    counts = a.row_counts()
    degrees = (counts + 1).astype(DTYPE)

    # splice the diagonal entry into each row, keeping columns sorted
    all_rows = np.arange(n, dtype=INDEX_DTYPE)
    old_rows = np.repeat(all_rows, counts)
    below_diag = np.zeros(n, dtype=INDEX_DTYPE)
    np.add.at(below_diag, old_rows[a.indices < old_rows], 1)
    insert_at = a.indptr[:-1] + below_diag
    indices = np.insert(a.indices, insert_at, all_rows)
    row_of = np.insert(old_rows, insert_at, all_rows)
    indptr = np.zeros(n + 1, dtype=INDEX_DTYPE)
    np.cumsum(counts + 1, out=indptr[1:])
    values = 1.0 / np.sqrt(degrees[row_of] * degrees[indices])
    matrix = CsrMatrix(indptr, indices, values, (n, n))
    return NormalizedAdjacency(matrix, degrees)


def permute_graph(g: SurfaceGraph, perm) -> SurfaceGraph:
    """Relabel nodes: node i of the result is node perm[i] of the input.

    Adjacency entry (i, j) of the result equals entry (perm[i], perm[j])
    of the input, so normalization and permutation commute.
    """
    perm = np.asarray(perm, dtype=INDEX_DTYPE)
    n = g.num_nodes
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise StructuralInputError("perm must be a bijection on 0..N-1")
    inverse = np.empty(n, dtype=INDEX_DTYPE)
    inverse[perm] = np.arange(n, dtype=INDEX_DTYPE)

    a = g.adjacency
    old_rows = np.repeat(np.arange(n), a.row_counts())
    new_rows = inverse[old_rows]
    new_cols = inverse[a.indices]
    adj = CsrMatrix.from_edges(n, np.column_stack((new_rows, new_cols)))
    return SurfaceGraph(g.node_features[perm], adj, n)
