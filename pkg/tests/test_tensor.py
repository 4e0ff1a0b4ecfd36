import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_conv2d, naive_maxpool
from yololite import tensor as T


def rel_err(a, b):
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


def test_conv_sum_of_ones():
    x = np.ones((1, 1, 3, 3))
    out = T.conv2d(x, T.ConvWeights(np.ones((1, 1, 3, 3))))
    assert out.shape == (1, 1, 1, 1)
    assert out[0, 0, 0, 0] == 9.0


def test_conv_identity_1x1():
    x = np.random.default_rng(0).standard_normal((2, 1, 5, 4)).astype(np.float32)
    out = T.conv2d(x, T.ConvWeights(np.ones((1, 1, 1, 1))))
    np.testing.assert_array_equal(out, x)


def test_conv_grouped_matches_naive():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 4, 9, 9)).astype(np.float32)
    k = rng.standard_normal((8, 2, 3, 3)).astype(np.float32)
    w = T.ConvWeights(k, stride=(2, 2), padding=(1, 1), groups=2)
    out = T.conv2d(x, w)
    assert out.shape == (2, 8, 5, 5)
    assert rel_err(out, naive_conv2d(x, k, stride=(2, 2), padding=(1, 1), groups=2)) < 1e-6


def test_conv_depthwise_with_bias():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 6, 7, 5)).astype(np.float32)
    k = rng.standard_normal((6, 1, 5, 5)).astype(np.float32)
    b = rng.standard_normal(6).astype(np.float32)
    out = T.conv2d(x, T.ConvWeights(k, b, padding=(2, 2), groups=6))
    assert rel_err(out, naive_conv2d(x, k, b, padding=(2, 2), groups=6)) < 1e-6


def test_conv_shape_error_names_dims():
    x = np.zeros((1, 3, 4, 4))
    with pytest.raises(T.ShapeError) as ei:
        T.conv2d(x, T.ConvWeights(np.zeros((2, 4, 1, 1))))
    assert ei.value.dims["input_c"] == 3 and ei.value.dims["kernel_c_in"] == 4


def test_conv_weights_validate_groups():
    with pytest.raises(T.ShapeError):
        T.ConvWeights(np.zeros((3, 1, 1, 1)), groups=2)


def test_conv_is_deterministic():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 8, 8, 8))
    w = T.ConvWeights(rng.standard_normal((8, 8, 3, 3)), padding=(1, 1))
    assert T.conv2d(x, w).tobytes() == T.conv2d(x, w).tobytes()


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 2), c=st.integers(1, 4), h=st.integers(1, 8), w=st.integers(1, 8),
       k=st.integers(1, 3), s=st.integers(1, 2), p=st.integers(0, 1), depthwise=st.booleans(),
       seed=st.integers(0, 2**16))
def test_conv_matches_naive_property(n, c, h, w, k, s, p, depthwise, seed):
    if h + 2 * p < k or w + 2 * p < k:
        return
    rng = np.random.default_rng(seed)
    groups = c if depthwise else 1
    c_out = c if depthwise else rng.integers(1, 5)
    x = rng.standard_normal((n, c, h, w)).astype(np.float32)
    kern = rng.standard_normal((c_out, c // groups, k, k)).astype(np.float32)
    out = T.conv2d(x, T.ConvWeights(kern, stride=(s, s), padding=(p, p), groups=groups))
    ref = naive_conv2d(x, kern, stride=(s, s), padding=(p, p), groups=groups)
    assert out.shape == ref.shape
    assert rel_err(out, ref) < 1e-6


def test_maxpool_constant_and_shape():
    x = np.full((1, 2, 6, 6), 3.5, np.float32)
    out = T.maxpool2d(x, 5, 1, 2)
    assert out.shape == x.shape
    assert np.all(out == 3.5)


def test_maxpool_matches_brute_force():
    x = np.random.default_rng(4).standard_normal((1, 2, 8, 8)).astype(np.float32)
    np.testing.assert_array_equal(T.maxpool2d(x, 5, 1, 2), naive_maxpool(x, 5, 1, 2))
    np.testing.assert_array_equal(T.maxpool2d(x, 3, 2, 1), naive_maxpool(x, 3, 2, 1))


def test_upsample():
    out = T.upsample_nearest2x(np.full((1, 1, 1, 1), 7.0))
    assert out.shape == (1, 1, 2, 2) and np.all(out == 7.0)
    x = np.random.default_rng(5).standard_normal((2, 3, 4, 5)).astype(np.float32)
    y = T.upsample_nearest2x(x)
    for i in range(8):
        for j in range(10):
            np.testing.assert_array_equal(y[:, :, i, j], x[:, :, i // 2, j // 2])


def test_silu_values():
    out = T.silu(np.array([0.0, 1.0, 20.0, -1000.0, 1000.0]).reshape(1, 1, 1, 5))[0, 0, 0]
    assert out[0] == 0.0
    assert abs(out[1] - 0.7310585786) < 1e-7
    assert abs(out[2] - 20.0) / 20.0 < 1e-6
    assert out[3] == 0.0 or abs(out[3]) < 1e-30
    assert out[4] == 1000.0


def test_concat_and_slice():
    a = np.zeros((1, 2, 3, 3), np.float32)
    b = np.ones((1, 3, 3, 3), np.float32)
    np.testing.assert_array_equal(T.concat_channels([a]), a)
    cat = T.concat_channels([a, b])
    assert cat.shape == (1, 5, 3, 3)
    np.testing.assert_array_equal(cat[:, :2], a)
    np.testing.assert_array_equal(cat[:, 2:], b)
    with pytest.raises(T.ShapeError):
        T.concat_channels([a, np.zeros((1, 1, 2, 3))])


def test_slice_ramp_and_add():
    x = np.arange(16 * 2 * 2, dtype=np.float32).reshape(1, 16, 2, 2)
    np.testing.assert_array_equal(T.slice_channels(x, 0, 16), x)
    head = T.slice_channels(x, 0, 4)
    assert head.shape == (1, 4, 2, 2)
    assert head.ravel().tolist() == list(range(16))
    np.testing.assert_array_equal(T.add(x, T.zeros(1, 16, 2, 2)), x)
    with pytest.raises(T.ShapeError):
        T.slice_channels(x, 3, 3)


def test_batchnorm_affine():
    x = np.ones((1, 2, 2, 2), np.float32)
    y = T.batchnorm_affine(x, [2.0, 0.5], [1.0, -1.0])
    assert np.all(y[0, 0] == 3.0) and np.all(y[0, 1] == -0.5)


def test_tensor_io_round_trip(tmp_path):
    x = np.random.default_rng(6).standard_normal((2, 3, 4, 5)).astype(np.float32)
    x[0, 0, 0, 0] = np.nan
    p = tmp_path / "t.ftnsr"
    T.write_tensor(p, x)
    raw = p.read_bytes()
    assert raw[:6] == b"FTNSR1"
    assert struct.unpack("<5I", raw[6:26]) == (4, 2, 3, 4, 5)
    y = T.read_tensor(p)
    assert y.tobytes() == x.tobytes()


def test_tensor_io_empty(tmp_path):
    p = tmp_path / "e.ftnsr"
    T.write_tensor(p, np.zeros((1, 0, 3, 3), np.float32))
    assert T.read_tensor(p).shape == (1, 0, 3, 3)


@pytest.mark.parametrize("buf,msg", [
    (b"NOTATENSOR", "bad magic"),
    (b"FTNSR1\x04\x00", "truncated"),
    (b"FTNSR1" + struct.pack("<I", 3) + b"\x00" * 16, "ndim"),
    (b"FTNSR1" + struct.pack("<5I", 4, 1, 1, 2, 2) + b"\x00" * 8, "truncated"),
    (b"FTNSR1" + struct.pack("<5I", 4, 1, 1, 1, 2**32 - 1), "overflow"),
    (b"FTNSR1" + struct.pack("<5I", 4, 1, 1, 1, 1) + b"\x00" * 8, "trailing"),
])
def test_tensor_io_errors(buf, msg):
    with pytest.raises(T.TensorFormatError, match=msg):
        T.decode_tensor(buf)
