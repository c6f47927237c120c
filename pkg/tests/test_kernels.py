"""Kernel backend tests: numpy fallback against brute-force oracles, the
compiled extension against the fallback, and backend selection."""

import os
import subprocess
import sys

import numpy as np
import pytest

import distillaug._kernels as kernels
from distillaug._kernels import reference

try:
    from distillaug._kernels import _conv as compiled
except ImportError:
    compiled = None

BACKENDS = [pytest.param(reference, id="python")]
if compiled is not None:
    BACKENDS.append(pytest.param(compiled, id="compiled"))


def conv_oracle(x, w, b):
    """Direct definition: same padding, stride 1, 3x3 taps."""
    n, h, wd, cin = x.shape
    cout = w.shape[3]
    xpad = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    y = np.zeros((n, h, wd, cout))
    for nn in range(n):
        for i in range(h):
            for j in range(wd):
                for co in range(cout):
                    acc = b[co]
                    for di in range(3):
                        for dj in range(3):
                            for ci in range(cin):
                                acc += xpad[nn, i + di, j + dj, ci] * w[di, dj, ci, co]
                    y[nn, i, j, co] = acc
    return y


@pytest.fixture
def conv_case():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 5, 4, 3))
    w = rng.normal(size=(3, 3, 3, 4))
    b = rng.normal(size=4)
    return x, w, b


class TestConv:
    @pytest.mark.parametrize("impl", BACKENDS)
    def test_forward_matches_direct_definition(self, impl, conv_case):
        x, w, b = conv_case
        assert np.allclose(impl.conv2d_forward(x, w, b), conv_oracle(x, w, b), atol=1e-12)

    @pytest.mark.parametrize("impl", BACKENDS)
    def test_backward_matches_finite_differences(self, impl, conv_case):
        x, w, b = conv_case
        dy = np.random.default_rng(1).normal(size=(2, 5, 4, 4))
        dx, dw, db = impl.conv2d_backward(x, w, dy)
        eps = 1e-6

        def loss(xx, ww, bb):
            return float((impl.conv2d_forward(xx, ww, bb) * dy).sum())

        for arr, grad, name in ((x, dx, "dx"), (w, dw, "dw"), (b, db, "db")):
            flat = arr.reshape(-1)
            picks = np.random.default_rng(2).choice(flat.size, min(20, flat.size), replace=False)
            for k in picks:
                orig = flat[k]
                flat[k] = orig + eps
                lp = loss(x, w, b)
                flat[k] = orig - eps
                lm = loss(x, w, b)
                flat[k] = orig
                fd = (lp - lm) / (2 * eps)
                assert grad.reshape(-1)[k] == pytest.approx(fd, rel=1e-6, abs=1e-9), name

    @pytest.mark.parametrize("impl", BACKENDS)
    def test_deterministic(self, impl, conv_case):
        x, w, b = conv_case
        assert np.array_equal(impl.conv2d_forward(x, w, b), impl.conv2d_forward(x, w, b))
        dy = np.ones((2, 5, 4, 4))
        a = impl.conv2d_backward(x, w, dy)
        c = impl.conv2d_backward(x, w, dy)
        for u, v in zip(a, c):
            assert np.array_equal(u, v)

    @pytest.mark.skipif(compiled is None, reason="extension not built")
    def test_backends_agree(self):
        rng = np.random.default_rng(3)
        for shape, cout in (((1, 8, 8, 1), 16), ((3, 7, 9, 16), 32)):
            x = rng.normal(size=shape)
            w = rng.normal(size=(3, 3, shape[3], cout))
            b = rng.normal(size=cout)
            dy = rng.normal(size=shape[:3] + (cout,))
            ours = compiled.conv2d_forward(x, w, b)
            ref = reference.conv2d_forward(x, w, b)
            assert np.allclose(ours, ref, rtol=1e-12, atol=1e-13)
            for u, v in zip(compiled.conv2d_backward(x, w, dy),
                            reference.conv2d_backward(x, w, dy)):
                assert np.allclose(u, v, rtol=1e-12, atol=1e-13)


class TestMaxpool:
    @pytest.mark.parametrize("impl", BACKENDS)
    def test_known_values_and_tie_rule(self, impl):
        # windows flatten row-major: [x00, x01, x10, x11]
        x = np.array(
            [
                [5.0, 5.0, 1.0, 3.0],
                [5.0, 5.0, 2.0, 3.0],
                [0.0, 1.0, 7.0, 7.0],
                [2.0, 1.0, 7.0, 8.0],
            ]
        ).reshape(1, 4, 4, 1)
        y, idx = impl.maxpool2_forward(x)
        assert np.array_equal(y[0, :, :, 0], [[5.0, 3.0], [2.0, 8.0]])
        # all-equal window -> first element; 3-tie in column 1 -> index 1
        assert np.array_equal(np.asarray(idx)[0, :, :, 0], [[0, 1], [2, 3]])

    @pytest.mark.parametrize("impl", BACKENDS)
    def test_backward_routes_to_argmax(self, impl):
        x = np.array(
            [
                [5.0, 5.0, 1.0, 3.0],
                [5.0, 5.0, 2.0, 3.0],
                [0.0, 1.0, 7.0, 7.0],
                [2.0, 1.0, 7.0, 8.0],
            ]
        ).reshape(1, 4, 4, 1)
        _, idx = impl.maxpool2_forward(x)
        dy = np.array([[10.0, 20.0], [30.0, 40.0]]).reshape(1, 2, 2, 1)
        dx = impl.maxpool2_backward(dy, idx, 4, 4)
        expect = np.array(
            [
                [10.0, 0.0, 0.0, 20.0],
                [0.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 0.0],
                [30.0, 0.0, 0.0, 40.0],
            ]
        ).reshape(1, 4, 4, 1)
        assert np.array_equal(dx, expect)

    @pytest.mark.parametrize("impl", BACKENDS)
    def test_odd_edges_dropped(self, impl):
        x = np.arange(25, dtype=np.float64).reshape(1, 5, 5, 1)
        y, idx = impl.maxpool2_forward(x)
        assert y.shape == (1, 2, 2, 1)
        assert y[0, :, :, 0].tolist() == [[6.0, 8.0], [16.0, 18.0]]
        dx = impl.maxpool2_backward(np.ones((1, 2, 2, 1)), idx, 5, 5)
        assert np.all(dx[0, 4, :, 0] == 0) and np.all(dx[0, :, 4, 0] == 0)
        assert dx.sum() == 4.0

    @pytest.mark.skipif(compiled is None, reason="extension not built")
    def test_backends_bit_identical(self):
        # pooling selects values rather than summing, so exact equality holds
        x = np.random.default_rng(4).normal(size=(3, 9, 7, 5))
        y1, i1 = compiled.maxpool2_forward(x)
        y2, i2 = reference.maxpool2_forward(x)
        assert np.array_equal(y1, y2)
        assert np.array_equal(np.asarray(i1), np.asarray(i2))
        dy = np.random.default_rng(5).normal(size=y1.shape)
        assert np.array_equal(
            compiled.maxpool2_backward(dy, i1, 9, 7),
            reference.maxpool2_backward(dy, i2, 9, 7),
        )


class TestSelection:
    def _backend_in_subprocess(self, value):
        env = dict(os.environ)
        if value is None:
            env.pop("DISTILLAUG_KERNELS", None)
        else:
            env["DISTILLAUG_KERNELS"] = value
        out = subprocess.run(
            [sys.executable, "-c", "import distillaug._kernels as k; print(k.BACKEND)"],
            capture_output=True, text=True, env=env, check=True,
        )
        return out.stdout.strip()

    def test_force_python(self):
        assert self._backend_in_subprocess("python") == "python"

    @pytest.mark.skipif(compiled is None, reason="extension not built")
    def test_force_compiled(self):
        assert self._backend_in_subprocess("compiled") == "compiled"

    @pytest.mark.skipif(compiled is None, reason="extension not built")
    def test_default_prefers_compiled(self):
        assert self._backend_in_subprocess(None) == "compiled"

    def test_exported_functions_match_backend(self):
        impl = compiled if kernels.BACKEND == "compiled" else reference
        assert kernels.conv2d_forward is impl.conv2d_forward
        assert kernels.maxpool2_backward is impl.maxpool2_backward
