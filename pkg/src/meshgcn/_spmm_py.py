"""Pure-numpy CSR * dense kernel, the fallback when the extension is absent.

Accumulates by entry position within each row: step p adds the p-th
stored entry of every row that has one. Per output element this is the
same left-to-right fold in ascending column order as the compiled
kernel, so the two backends agree bit for bit. The step count equals
the maximum row population, which for mesh adjacency is a small
constant.
"""

import numpy as np


def csr_matmul_dense(indptr, indices, data, x, out):
    out[:] = 0.0
    row_len = np.diff(indptr)
    max_len = int(row_len.max()) if row_len.size else 0
    rows = np.arange(indptr.shape[0] - 1)
    for p in range(max_len):
        active = row_len > p
        pos = indptr[:-1][active] + p
        out[rows[active]] += data[pos, None] * x[indices[pos]]
