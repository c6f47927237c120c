"""Model tests: initialization, forward/backward correctness against finite
differences, batch-mean reduction, and the params byte format."""

import numpy as np
import pytest

from distillaug.smallnet import (
    PARAM_FIELDS,
    ForwardTrace,
    ModelParams,
    ParamsFormatError,
    backward,
    forward,
    init_params,
    load_params,
    save_params,
)


def rel_err(analytic, numeric):
    return np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-12)


def fd_param_grad(params, name, x, g, eps=1e-5):
    """Central finite differences of mean_n <g_n, logits_n> w.r.t. one tensor."""
    arr = getattr(params, name)
    out = np.zeros_like(arr)
    n = x.shape[0]
    for idx in np.ndindex(arr.shape):
        pert = {k: v.copy() for k, v in params.arrays().items()}
        pert[name][idx] += eps
        lp = (forward(params.with_arrays(pert), x)[0] * g).sum() / n
        pert[name][idx] -= 2 * eps
        lm = (forward(params.with_arrays(pert), x)[0] * g).sum() / n
        out[idx] = (lp - lm) / (2 * eps)
    return out


class TestInit:
    def test_same_seed_bit_identical(self):
        a = init_params(42, (8, 8, 1), 4)
        b = init_params(42, (8, 8, 1), 4)
        for name in PARAM_FIELDS:
            assert np.array_equal(getattr(a, name), getattr(b, name)), name

    def test_shapes(self):
        p = init_params(0, (28, 28, 3), 10)
        assert p.conv1_w.shape == (3, 3, 3, 16)
        assert p.conv2_w.shape == (3, 3, 16, 32)
        assert p.fc1_w.shape == (7 * 7 * 32, 128)
        assert p.fc2_w.shape == (128, 10)
        assert p.fc2_b.shape == (10,)

    def test_biases_zero_weights_he_scaled(self):
        p = init_params(1, (28, 28, 1), 10)
        assert np.all(p.conv1_b == 0) and np.all(p.fc1_b == 0)
        # conv2 fan-in 3*3*16 = 144: std should be near sqrt(2/144)
        assert np.std(p.conv2_w) == pytest.approx(np.sqrt(2 / 144), rel=0.1)

    def test_rejects_bad_geometry(self):
        with pytest.raises(ValueError):
            init_params(0, (7, 8, 1), 10)
        with pytest.raises(ValueError):
            init_params(0, (8, 8, 2), 10)
        with pytest.raises(ValueError):
            init_params(0, (8, 8, 1), 1)


class TestForward:
    def test_logits_shape_and_determinism(self):
        p = init_params(2, (12, 10, 1), 5)
        x = np.random.default_rng(0).random((6, 12, 10, 1))
        a, _ = forward(p, x)
        b, _ = forward(p, x)
        assert a.shape == (6, 5)
        assert np.array_equal(a, b)

    def test_rejects_shape_mismatch(self):
        p = init_params(3, (8, 8, 1), 4)
        with pytest.raises(ValueError):
            forward(p, np.zeros((2, 8, 9, 1)))
        with pytest.raises(ValueError):
            forward(p, np.zeros((8, 8, 1)))

    def test_minimum_geometry_works(self):
        p = init_params(4, (8, 8, 1), 2)
        logits, _ = forward(p, np.random.default_rng(1).random((3, 8, 8, 1)))
        assert logits.shape == (3, 2)
        assert p.fc1_w.shape[0] == 2 * 2 * 32


class TestBackward:
    @pytest.mark.parametrize("name", PARAM_FIELDS)
    def test_matches_finite_differences(self, name):
        params = init_params(7, (8, 8, 1), 3)
        rng = np.random.default_rng(8)
        x = rng.random((2, 8, 8, 1))
        g = rng.normal(size=(2, 3))
        _, trace = forward(params, x)
        grads = backward(params, trace, g)
        assert rel_err(getattr(grads, name), fd_param_grad(params, name, x, g)) < 1e-5

    def test_batch_mean_reduction(self):
        params = init_params(9, (8, 8, 1), 3)
        rng = np.random.default_rng(10)
        x = rng.random((4, 8, 8, 1))
        g = rng.normal(size=(4, 3))
        _, trace = forward(params, x)
        batch = backward(params, trace, g)
        singles = []
        for i in range(4):
            _, tr = forward(params, x[i : i + 1])
            singles.append(backward(params, tr, g[i : i + 1]))
        for name in PARAM_FIELDS:
            mean = np.mean([getattr(s, name) for s in singles], axis=0)
            assert np.allclose(getattr(batch, name), mean, atol=1e-12), name

    def test_rejects_stale_trace(self):
        a = init_params(11, (8, 8, 1), 3)
        b = init_params(12, (8, 8, 1), 3)
        x = np.random.default_rng(13).random((2, 8, 8, 1))
        _, trace = forward(a, x)
        with pytest.raises(ValueError):
            backward(b, trace, np.zeros((2, 3)))

    def test_rejects_bad_grad_shape(self):
        p = init_params(14, (8, 8, 1), 3)
        x = np.random.default_rng(15).random((2, 8, 8, 1))
        _, trace = forward(p, x)
        with pytest.raises(ValueError):
            backward(p, trace, np.zeros((2, 4)))

    def test_gradients_deterministic(self):
        p = init_params(16, (10, 8, 1), 4)
        x = np.random.default_rng(17).random((5, 10, 8, 1))
        g = np.random.default_rng(18).normal(size=(5, 4))
        _, t1 = forward(p, x)
        _, t2 = forward(p, x)
        g1 = backward(p, t1, g)
        g2 = backward(p, t2, g)
        for name in PARAM_FIELDS:
            assert np.array_equal(getattr(g1, name), getattr(g2, name)), name


class TestParamsFormat:
    def test_round_trip_bit_exact(self):
        p = init_params(19, (28, 28, 3), 10)
        blob = save_params(p)
        q = load_params(blob)
        assert q.input_shape == p.input_shape and q.class_count == p.class_count
        for name in PARAM_FIELDS:
            assert np.array_equal(getattr(p, name), getattr(q, name)), name
        assert save_params(q) == blob

    def test_bad_magic(self):
        blob = bytearray(save_params(init_params(20, (8, 8, 1), 3)))
        blob[:4] = b"NOPE"
        with pytest.raises(ParamsFormatError, match="magic"):
            load_params(bytes(blob))

    def test_truncated(self):
        blob = save_params(init_params(21, (8, 8, 1), 3))
        with pytest.raises(ParamsFormatError, match="truncated"):
            load_params(blob[: len(blob) // 2])

    def test_trailing_bytes(self):
        blob = save_params(init_params(22, (8, 8, 1), 3))
        with pytest.raises(ParamsFormatError, match="trailing"):
            load_params(blob + b"\x00")

    def test_tampered_shape(self):
        import struct

        blob = bytearray(save_params(init_params(23, (8, 8, 1), 3)))
        # first layer's first dim lives right after the 24-byte header + rank
        blob[28:32] = struct.pack("<I", 5)
        with pytest.raises(ParamsFormatError, match="shape"):
            load_params(bytes(blob))

    def test_unsupported_version(self):
        import struct

        blob = bytearray(save_params(init_params(24, (8, 8, 1), 3)))
        blob[4:8] = struct.pack("<I", 9)
        with pytest.raises(ParamsFormatError, match="version"):
            load_params(bytes(blob))
