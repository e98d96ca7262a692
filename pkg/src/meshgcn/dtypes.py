"""Floating point precision selection.

Everything numeric runs in ``DTYPE``, chosen once at import time from the
``MESHGCN_DTYPE`` environment variable (``float64`` by default, ``float32``
as the cheaper option). Gradient checking is only meaningful in float64.
"""

import os

import numpy as np

_REQUESTED = os.environ.get("MESHGCN_DTYPE", "float64").lower()

if _REQUESTED in ("float64", "f64", "double"):
    DTYPE = np.float64
elif _REQUESTED in ("float32", "f32", "single"):
    DTYPE = np.float32
else:
    raise ImportError(
        f"MESHGCN_DTYPE must be 'float64' or 'float32', got {_REQUESTED!r}"
    )

INDEX_DTYPE = np.int64
