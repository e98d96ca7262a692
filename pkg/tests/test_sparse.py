"""CSR container and the two spmm kernels."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshgcn.errors import StructuralInputError
from meshgcn.sparse import (
    CsrMatrix,
    spmm,
    spmm_backend,
    spmm_compiled,
    spmm_python,
)


def test_from_dense_roundtrip(rng):
    dense = rng.random((7, 5))
    dense[dense < 0.6] = 0.0
    mat = CsrMatrix.from_dense(dense)
    assert np.array_equal(mat.to_dense(), dense)
    assert mat.nnz == np.count_nonzero(dense)


def test_identity():
    eye = CsrMatrix.identity(4)
    assert np.array_equal(eye.to_dense(), np.eye(4))


def test_from_edges_deduplicates():
    edges = [(0, 1), (1, 0), (0, 1), (2, 2)]
    mat = CsrMatrix.from_edges(3, edges)
    expect = np.zeros((3, 3))
    expect[0, 1] = expect[1, 0] = expect[2, 2] = 1.0
    assert np.array_equal(mat.to_dense(), expect)
    assert mat.nnz == 3


def test_from_edges_range_check():
    with pytest.raises(StructuralInputError):
        CsrMatrix.from_edges(3, [(0, 3)])


def test_malformed_rejected():
    with pytest.raises(StructuralInputError):
        CsrMatrix(np.array([0, 2]), np.array([1, 0]), np.ones(2), (1, 3))
    with pytest.raises(StructuralInputError):
        CsrMatrix(np.array([1, 2]), np.array([0]), np.ones(1), (1, 3))
    with pytest.raises(StructuralInputError):
        CsrMatrix(np.array([0, 1]), np.array([5]), np.ones(1), (1, 3))


def test_immutable():
    mat = CsrMatrix.identity(3)
    with pytest.raises(ValueError):
        mat.data[0] = 2.0


def test_spmm_exact_on_integer_values(rng):
    # integer-valued doubles make every partial sum exact, so the result
    # must equal the dense product bit for bit regardless of sum order
    dense = rng.integers(-3, 4, size=(9, 9)).astype(float)
    dense[rng.random((9, 9)) < 0.5] = 0.0
    x = rng.integers(-3, 4, size=(9, 4)).astype(float)
    out = spmm(CsrMatrix.from_dense(dense), x)
    assert np.array_equal(out, dense @ x)


def test_spmm_vector_input(rng):
    dense = rng.random((6, 6))
    dense[dense < 0.5] = 0.0
    mat = CsrMatrix.from_dense(dense)
    v = rng.random(6)
    out = spmm(mat, v)
    assert out.shape == (6,)
    assert np.allclose(out, dense @ v, rtol=1e-12, atol=0)


def test_spmm_identity_is_exact(rng):
    x = rng.standard_normal((8, 5))
    assert np.array_equal(spmm(CsrMatrix.identity(8), x), x)


def test_spmm_dimension_mismatch(rng):
    with pytest.raises(StructuralInputError):
        spmm(CsrMatrix.identity(3), rng.random((4, 2)))


def test_backends_bit_identical(rng):
    if spmm_backend() != "compiled":
        pytest.skip("compiled kernel not built")
    dense = rng.standard_normal((40, 40))
    dense[rng.random((40, 40)) < 0.7] = 0.0
    mat = CsrMatrix.from_dense(dense)
    x = rng.standard_normal((40, 16))
    a = spmm_compiled(mat, x)
    b = spmm_python(mat, x)
    assert np.array_equal(a, b)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 12), st.integers(1, 6))
def test_spmm_matches_dense(seed, n, k):
    rng = np.random.default_rng(seed)
    dense = rng.standard_normal((n, n))
    dense[rng.random((n, n)) < 0.6] = 0.0
    x = rng.standard_normal((n, k))
    out = spmm(CsrMatrix.from_dense(dense), x)
    assert np.allclose(out, dense @ x, rtol=1e-12, atol=1e-14)
