import logging

import numpy as np
import pytest

from coupalign.tensor import BatchNormState, Tensor, batch_norm, bilinear_upsample, conv2d, layer_norm
from coupalign.utils.errors import ContractError, DimensionError


def naive_conv(x, kernel, bias):
    """零填充、步长 1 的互相关，x [H, W, Cin]"""
    kh, kw, c_in, c_out = kernel.shape
    pad = (kh - 1) // 2
    height, width, _ = x.shape
    padded = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    out = np.zeros((height, width, c_out))
    for i in range(height):
        for j in range(width):
            for o in range(c_out):
                total = bias[o]
                for u in range(kh):
                    for v in range(kw):
                        for c in range(c_in):
                            total += padded[i + u, j + v, c] * kernel[u, v, c, o]
                out[i, j, o] = total
    return out


def naive_bilinear(x, factor):
    height, width = x.shape
    out = np.zeros((height * factor, width * factor))

    def source(dst, size):
        s = min(max((dst + 0.5) / factor - 0.5, 0.0), size - 1.0)
        low = int(np.floor(s))
        return low, min(low + 1, size - 1), s - low

    for y in range(height * factor):
        y0, y1, wy = source(y, height)
        for x_ in range(width * factor):
            x0, x1, wx = source(x_, width)
            top = (1 - wx) * x[y0, x0] + wx * x[y0, x1]
            bottom = (1 - wx) * x[y1, x0] + wx * x[y1, x1]
            out[y, x_] = (1 - wy) * top + wy * bottom
    return out


def test_conv1x1_identity():
    x = np.random.default_rng(0).normal(size=(1, 4, 4, 3))
    kernel = np.eye(3).reshape(1, 1, 3, 3)
    assert np.array_equal(conv2d(Tensor(x), Tensor(kernel)).data, x)


def test_conv3x3_ones_on_constant_image():
    x = np.full((1, 5, 5, 1), 2.0)
    out = conv2d(Tensor(x), Tensor(np.ones((3, 3, 1, 1)))).data[0, :, :, 0]
    np.testing.assert_allclose(out[1:-1, 1:-1], 18.0)
    assert out[0, 0] == pytest.approx(8.0)


@pytest.mark.parametrize("size", [1, 3])
def test_conv_matches_naive_loops(size):
    rng = np.random.default_rng(size)
    x = rng.normal(size=(5, 5, 2))
    kernel = rng.normal(size=(size, size, 2, 3))
    bias = rng.normal(size=3)
    out = conv2d(Tensor(x[None]), Tensor(kernel), Tensor(bias)).data[0]
    np.testing.assert_allclose(out, naive_conv(x, kernel, bias), atol=1e-10)


def test_conv_errors():
    with pytest.raises(DimensionError):
        conv2d(Tensor(np.ones((1, 4, 4, 2))), Tensor(np.ones((3, 3, 3, 1))))
    with pytest.raises(ContractError):
        conv2d(Tensor(np.ones((1, 6, 6, 1))), Tensor(np.ones((5, 5, 1, 1))))


def test_bilinear_constant_map():
    out = bilinear_upsample(Tensor(np.full((1, 3, 3, 2), 1.5)), 4).data
    assert out.shape == (1, 12, 12, 2)
    np.testing.assert_allclose(out, 1.5)


def test_bilinear_single_pixel():
    out = bilinear_upsample(Tensor(np.full((1, 1, 1, 1), 7.0)), 2).data
    np.testing.assert_allclose(out, np.full((1, 2, 2, 1), 7.0))


def test_bilinear_matches_oracle():
    x = np.array([[0.0, 1.0], [2.0, 3.0]])
    out = bilinear_upsample(Tensor(x[None, :, :, None]), 2).data[0, :, :, 0]
    np.testing.assert_allclose(out, naive_bilinear(x, 2), atol=1e-12)
    np.testing.assert_allclose(out[0], [0.0, 0.25, 0.75, 1.0])


def test_bilinear_preserves_interior_ramp():
    ramp = np.tile(np.arange(4.0), (4, 1))
    out = bilinear_upsample(Tensor(ramp[None, :, :, None]), 2).data[0, :, :, 0]
    expected = (np.arange(1, 7) + 0.5) / 2 - 0.5
    np.testing.assert_allclose(out[3, 1:7], expected, atol=1e-12)


def test_bilinear_bad_factor():
    with pytest.raises(ContractError):
        bilinear_upsample(Tensor(np.ones((1, 2, 2, 1))), 0)


def test_layer_norm_example():
    x = Tensor(np.array([[1.0, 2.0, 3.0]]))
    out = layer_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3))).data
    assert out.mean() == pytest.approx(0.0, abs=1e-12)
    assert out.var() == pytest.approx(1.0, abs=1e-9)


def test_layer_norm_constant_row_is_finite():
    out = layer_norm(Tensor(np.full((2, 4), 3.0)), Tensor(np.ones(4)), Tensor(np.full(4, 0.5))).data
    np.testing.assert_allclose(out, 0.5)


def bn_state(channels):
    return BatchNormState(running_mean=Tensor(np.zeros(channels)), running_var=Tensor(np.ones(channels)))


def test_batch_norm_training_statistics():
    rng = np.random.default_rng(1)
    x = rng.normal(3.0, 2.0, size=(4, 3, 3, 2))
    state = bn_state(2)
    out = batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), state, training=True).data
    np.testing.assert_allclose(out.mean(axis=(0, 1, 2)), 0.0, atol=1e-10)
    np.testing.assert_allclose(out.var(axis=(0, 1, 2)), 1.0, atol=1e-4)
    np.testing.assert_allclose(state.running_mean.data, 0.1 * x.mean(axis=(0, 1, 2)))
    np.testing.assert_allclose(state.running_var.data, 0.9 + 0.1 * x.var(axis=(0, 1, 2), ddof=1))


def test_batch_norm_zero_variance_channel():
    x = np.full((2, 2, 2, 1), 4.0)
    out = batch_norm(Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)), bn_state(1), training=True).data
    assert np.array_equal(out, np.zeros_like(x))


def test_batch_norm_eval_uses_running_stats():
    state = BatchNormState(running_mean=Tensor(np.array([1.0])), running_var=Tensor(np.array([4.0])))
    x = np.array([[[[3.0]], [[5.0]]]])
    out = batch_norm(Tensor(x), Tensor(np.array([2.0])), Tensor(np.array([0.5])), state, training=False).data
    np.testing.assert_allclose(out.reshape(-1), [2.5, 4.5])
    assert state.running_mean.data[0] == 1.0


def test_batch_norm_single_sample_warns_once(caplog):
    state = bn_state(1)
    with caplog.at_level(logging.WARNING):
        for _ in range(2):
            batch_norm(Tensor(np.ones((1, 1, 1, 1))), Tensor(np.ones(1)), Tensor(np.zeros(1)), state, training=True)
    assert sum("batch_norm" in record.message for record in caplog.records) == 1
