import numpy as np
import pytest

from meshgcn.graph import SurfaceGraph
from meshgcn.sparse import CsrMatrix


def random_adjacency(rng, n, p=0.3):
    """Random binary symmetric zero-diagonal adjacency, at least one edge."""
    while True:
        upper = rng.random((n, n)) < p
        dense = np.triu(upper, k=1)
        dense = (dense | dense.T).astype(float)
        if dense.sum() > 0:
            return CsrMatrix.from_dense(dense)


def random_graph(rng, n, f=3, p=0.3):
    feats = rng.standard_normal((n, f))
    return SurfaceGraph(feats, random_adjacency(rng, n, p), n)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
