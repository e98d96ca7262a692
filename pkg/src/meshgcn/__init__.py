"""meshgcn: graph convolutional networks for triangulated surface meshes.

From-scratch numpy implementation of a two-headed graph network that
jointly classifies a whole surface and segments its nodes, plus mesh
ingestion, a synthetic dataset generator, training, evaluation metrics,
and a command line interface. The one non-BLAS hot loop (sparse
adjacency propagation) runs on a compiled kernel with a pure-numpy
fallback selected at import.
"""

from .dtypes import DTYPE
from .graph import (
    NormalizedAdjacency,
    SurfaceGraph,
    normalize_adjacency,
    permute_graph,
)
from .sparse import CsrMatrix, spmm, spmm_backend

__version__ = "0.1.0"

__all__ = [
    "DTYPE",
    "CsrMatrix",
    "NormalizedAdjacency",
    "SurfaceGraph",
    "normalize_adjacency",
    "permute_graph",
    "spmm",
    "spmm_backend",
    "__version__",
]
