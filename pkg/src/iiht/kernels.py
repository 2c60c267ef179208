"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise (or when
``IIHT_PURE_PYTHON=1``) the numpy/Python versions are used.  ``BACKEND``
records the choice.
"""

import os

from . import _pykernels

if os.environ.get("IIHT_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
        BACKEND = "python"

# the einsum forward lowers to BLAS and beats the compiled loop (see
# benchmarks/bench_kernels.py), so it is used with either backend
conv2d_forward = _pykernels.conv2d_forward
conv2d_backward = _impl.conv2d_backward
lcs_length = _impl.lcs_length
bpe_merge = _impl.bpe_merge

__all__ = ["BACKEND", "conv2d_forward", "conv2d_backward", "lcs_length", "bpe_merge"]
