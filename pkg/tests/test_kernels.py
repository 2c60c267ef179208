import os
import subprocess
import sys

import numpy as np
import pytest

from iiht import _pykernels, kernels

ckernels = pytest.importorskip("iiht._ckernels")


@pytest.mark.skipif(os.environ.get("IIHT_PURE_PYTHON", "") not in ("", "0"), reason="fallback forced")
def test_compiled_backend_selected():
    assert kernels.BACKEND == "cython"


def test_env_var_forces_python():
    env = dict(os.environ, IIHT_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from iiht import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("pad", [0, 1])
def test_conv_backends_agree(rng, pad):
    x = rng.normal(size=(2, 3, 6, 5))
    w = rng.normal(size=(4, 3, 3, 3))
    y_py = _pykernels.conv2d_forward(x, w, pad)
    y_c = ckernels.conv2d_forward(x, w, pad)
    np.testing.assert_allclose(y_c, y_py, atol=1e-12, rtol=0)
    g = rng.normal(size=y_py.shape)
    for a, b in zip(_pykernels.conv2d_backward(x, w, g, pad), ckernels.conv2d_backward(x, w, g, pad)):
        np.testing.assert_allclose(a, b, atol=1e-12, rtol=0)


def test_conv_against_loops(rng):
    x = rng.normal(size=(1, 2, 4, 4))
    w = rng.normal(size=(3, 2, 3, 3))
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((1, 3, 4, 4))
    for o in range(3):
        for i in range(4):
            for j in range(4):
                ref[0, o, i, j] = (xp[0, :, i:i + 3, j:j + 3] * w[o]).sum()
    np.testing.assert_allclose(kernels.conv2d_forward(x, w, 1), ref, atol=1e-12, rtol=0)


def test_lcs_backends_agree(rng):
    for _ in range(50):
        a = rng.integers(0, 4, size=int(rng.integers(0, 15))).astype(np.int64)
        b = rng.integers(0, 4, size=int(rng.integers(0, 15))).astype(np.int64)
        assert _pykernels.lcs_length(a, b) == ckernels.lcs_length(a, b)


def test_bpe_merge_backends_agree(rng):
    for _ in range(50):
        seq = rng.integers(0, 3, size=int(rng.integers(0, 12))).astype(np.int64)
        a = _pykernels.bpe_merge(seq, 1, 1, 9)
        b = ckernels.bpe_merge(seq, 1, 1, 9)
        assert list(a) == list(b)
    assert list(kernels.bpe_merge(np.array([1, 1, 1], dtype=np.int64), 1, 1, 9)) == [9, 1]
