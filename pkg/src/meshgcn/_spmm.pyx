# cython: boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled CSR * dense kernel.

Row i of the output is accumulated entry by entry in ascending column
order, one multiply and one add per entry, matching the pure-numpy
fallback in ``_spmm_py`` bit for bit (the extension is compiled with
-ffp-contract=off so no FMA contraction changes the rounding).
"""

cimport cython

ctypedef fused real:
    float
    double


@cython.boundscheck(False)
@cython.wraparound(False)
def csr_matmul_dense(const long long[::1] indptr,
                     const long long[::1] indices,
                     const real[::1] data,
                     const real[:, ::1] x,
                     real[:, ::1] out):
    """out[i, :] = sum_j csr[i, j] * x[j, :], rows summed in index order."""
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    cdef Py_ssize_t n_cols = x.shape[1]
    cdef Py_ssize_t i, jj, k
    cdef long long col
    cdef real v

    for i in range(n_rows):
        for k in range(n_cols):
            out[i, k] = 0
        for jj in range(indptr[i], indptr[i + 1]):
            col = indices[jj]
            v = data[jj]
            for k in range(n_cols):
                out[i, k] = out[i, k] + v * x[col, k]
