"""Compiled kernels against the NumPy reference, plus backend selection."""

import os
import subprocess
import sys

import numpy as np
import pytest

from smogcast.neuro import kernels, kernels_py

ckernels = pytest.importorskip(
    "smogcast.neuro._ckernels", reason="compiled extension not built"
)


def _lstm_inputs(rng, B=4, T=9, I=5, H=6):
    return (
        rng.standard_normal((B, T, I)),
        rng.standard_normal((4 * H, I)) * 0.4,
        rng.standard_normal((4 * H, H)) * 0.4,
        rng.standard_normal(4 * H) * 0.1,
        rng.standard_normal(4 * H) * 0.1,
        np.zeros((B, H)),
        np.zeros((B, H)),
    )


def _gru_inputs(rng, B=4, T=9, I=5, H=6):
    return (
        rng.standard_normal((B, T, I)),
        rng.standard_normal((3 * H, I)) * 0.4,
        rng.standard_normal((3 * H, H)) * 0.4,
        rng.standard_normal(3 * H) * 0.1,
        rng.standard_normal(3 * H) * 0.1,
        np.zeros((B, H)),
    )


def test_lstm_backends_agree(rng):
    args = _lstm_inputs(rng)
    h_py, cache_py = kernels_py.lstm_seq_forward(*args)
    h_ck, cache_ck = ckernels.lstm_seq_forward(*args)
    np.testing.assert_allclose(h_ck, h_py, atol=1e-12, rtol=0)

    g = rng.standard_normal(h_py.shape)
    out_py = kernels_py.lstm_seq_backward(args[0], args[1], args[2], h_py, cache_py, g)
    out_ck = ckernels.lstm_seq_backward(args[0], args[1], args[2], h_ck, cache_ck, g)
    for a, b in zip(out_py, out_ck):
        np.testing.assert_allclose(b, a, atol=1e-11, rtol=0)


def test_gru_backends_agree(rng):
    args = _gru_inputs(rng)
    h_py, cache_py = kernels_py.gru_seq_forward(*args)
    h_ck, cache_ck = ckernels.gru_seq_forward(*args)
    np.testing.assert_allclose(h_ck, h_py, atol=1e-12, rtol=0)

    g = rng.standard_normal(h_py.shape)
    out_py = kernels_py.gru_seq_backward(args[0], args[1], args[2], h_py, cache_py, g)
    out_ck = ckernels.gru_seq_backward(args[0], args[1], args[2], h_ck, cache_ck, g)
    for a, b in zip(out_py, out_ck):
        np.testing.assert_allclose(b, a, atol=1e-11, rtol=0)


def test_cache_layouts_match(rng):
    args = _gru_inputs(rng)
    _, cache_py = kernels_py.gru_seq_forward(*args)
    _, cache_ck = ckernels.gru_seq_forward(*args)
    assert len(cache_py) == len(cache_ck)
    for a, b in zip(cache_py, cache_ck):
        assert np.asarray(a).shape == np.asarray(b).shape
    # caches are interchangeable between backends
    g = rng.standard_normal((4, 9, 6))
    h_py, _ = kernels_py.gru_seq_forward(*args)
    mixed = kernels_py.gru_seq_backward(args[0], args[1], args[2], h_py, cache_ck, g)
    pure = kernels_py.gru_seq_backward(args[0], args[1], args[2], h_py, cache_py, g)
    for a, b in zip(mixed, pure):
        np.testing.assert_allclose(a, b, atol=1e-11, rtol=0)


def test_env_forces_python_backend():
    code = (
        "from smogcast.neuro import kernels, kernels_py\n"
        "assert kernels.backend() == 'numpy'\n"
        "assert kernels.lstm_seq_forward is kernels_py.lstm_seq_forward\n"
    )
    env = dict(os.environ, SMOGCAST_BACKEND="python")
    subprocess.run([sys.executable, "-c", code], check=True, env=env)


@pytest.mark.skipif(
    os.environ.get("SMOGCAST_BACKEND", "auto").lower() in ("python", "numpy", "py"),
    reason="fallback forced via SMOGCAST_BACKEND",
)
def test_auto_prefers_compiled():
    assert kernels.backend() == "cython"
    assert kernels.lstm_seq_forward is ckernels.lstm_seq_forward
