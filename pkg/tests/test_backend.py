"""Both convolution backends must agree; selection is an env override."""

import os
import subprocess
import sys

import numpy as np
import numpy.testing as npt
import pytest

from vimagine import backend


def test_a_backend_is_selected():
    assert backend.BACKEND in ("native", "reference")


def test_native_backend_compiled():
    # the extension ships with the package; if this fails the build is broken
    assert "native" in backend.available_backends()


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_conv2d_forward_backends_agree(dtype):
    mods = backend.available_backends()
    if len(mods) < 2:
        pytest.skip("only one backend available")
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 9, 8)).astype(dtype)
    k = rng.standard_normal((4, 3, 3, 3)).astype(dtype)
    outs = [m.conv2d_forward(x, k, (2, 2), (1, 1)) for m in mods.values()]
    npt.assert_allclose(outs[0], outs[1], atol=1e-5)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_conv2d_backward_backends_agree(dtype):
    mods = backend.available_backends()
    if len(mods) < 2:
        pytest.skip("only one backend available")
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 9, 8)).astype(dtype)
    k = rng.standard_normal((4, 3, 4, 4)).astype(dtype)
    ref = backend.available_backends()["reference"]
    gy = np.ones_like(ref.conv2d_forward(x, k, (2, 2), (1, 1)))
    grads = [m.conv2d_backward(x, k, (2, 2), (1, 1), gy) for m in mods.values()]
    npt.assert_allclose(grads[0][0], grads[1][0], atol=1e-5)
    npt.assert_allclose(grads[0][1], grads[1][1], atol=1e-5)


def test_conv3d_backends_agree():
    mods = backend.available_backends()
    if len(mods) < 2:
        pytest.skip("only one backend available")
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 2, 5, 8, 8)).astype(np.float32)
    k = rng.standard_normal((3, 2, 3, 4, 4)).astype(np.float32)
    outs = [m.conv3d_forward(x, k, (1, 2, 2), (1, 1, 1)) for m in mods.values()]
    npt.assert_allclose(outs[0], outs[1], atol=1e-5)
    gy = np.ones_like(outs[0])
    grads = [m.conv3d_backward(x, k, (1, 2, 2), (1, 1, 1), gy) for m in mods.values()]
    npt.assert_allclose(grads[0][0], grads[1][0], atol=1e-5)
    npt.assert_allclose(grads[0][1], grads[1][1], atol=1e-5)


@pytest.mark.parametrize("choice", ["reference", "native"])
def test_env_var_forces_backend(choice):
    if choice not in backend.available_backends():
        pytest.skip(f"{choice} backend not built")
    env = dict(os.environ, VIMAGINE_BACKEND=choice)
    out = subprocess.run(
        [sys.executable, "-c", "from vimagine import backend; print(backend.BACKEND)"],
        capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == choice


def test_env_var_rejects_unknown():
    env = dict(os.environ, VIMAGINE_BACKEND="cuda")
    out = subprocess.run(
        [sys.executable, "-c", "import vimagine"],
        capture_output=True, text=True, env=env)
    assert out.returncode != 0
    assert "VIMAGINE_BACKEND" in out.stderr
