"""Pure-Python/numpy reference versions of the compiled kernels.

Signatures and results match ``_ckernels`` exactly; the two modules are
interchangeable and ``iiht.kernels`` picks one at import time.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(x, w, pad):
    kh, kw = w.shape[2], w.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return np.einsum("nchwij,ocij->nohw", win, w, optimize=True)


def conv2d_backward(x, w, gout, pad):
    n, c, h, wd = x.shape
    kh, kw = w.shape[2], w.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    gw = np.einsum("nchwij,nohw->ocij", win, gout, optimize=True)
    ho, wo = gout.shape[2], gout.shape[3]
    gxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + ho, j:j + wo] += np.einsum("nohw,oc->nchw", gout, w[:, :, i, j])
    gx = gxp[:, :, pad:pad + h, pad:pad + wd]
    return np.ascontiguousarray(gx), gw


def lcs_length(a, b):
    if len(a) == 0 or len(b) == 0:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, 1):
            if x == y:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = cur[j - 1] if cur[j - 1] > prev[j] else prev[j]
        prev = cur
    return prev[-1]


def bpe_merge(seq, left, right, new):
    """Replace every non-overlapping (left, right) pair, scanning left to right."""
    out = []
    i = 0
    n = len(seq)
    while i < n:
        if i + 1 < n and seq[i] == left and seq[i + 1] == right:
            out.append(new)
            i += 2
        else:
            out.append(int(seq[i]))
            i += 1
    return np.asarray(out, dtype=np.int64)
