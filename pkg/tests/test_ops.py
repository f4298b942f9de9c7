import numpy as np
import pytest

from sgseg import ops, tensorfile

from oracles import (box_filter_naive, conv2d_naive, finite_diff, rel_err,
                     resize_bilinear_naive)


def test_conv2d_identity_kernel():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1, 3, 3)).astype(np.float32)
    k = np.ones((1, 1, 1, 1), np.float32)
    out = ops.conv2d(x, k, np.zeros(1, np.float32))
    np.testing.assert_array_equal(out, x)


def test_conv2d_zero_kernel_gives_bias():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 5, 5)).astype(np.float32)
    k = np.zeros((3, 2, 3, 3), np.float32)
    b = np.array([1.5, -2.0, 0.25], np.float32)
    out = ops.conv2d(x, k, b, pad=1)
    for c in range(3):
        np.testing.assert_allclose(out[c], b[c])


def test_conv2d_matches_naive_oracle():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 5, 5)).astype(np.float32)
    k = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)
    b = rng.normal(size=3).astype(np.float32)
    for stride, pad in [(1, 0), (1, 1), (2, 1)]:
        out = ops.conv2d(x, k, b, stride=stride, pad=pad)
        ref = conv2d_naive(x, k, b, stride=stride, pad=pad)
        assert out.shape == ref.shape
        np.testing.assert_allclose(out, ref, atol=1e-5)


def test_conv2d_batched_equals_per_image():
    rng = np.random.default_rng(3)
    xs = rng.normal(size=(4, 3, 8, 8)).astype(np.float32)
    k = rng.normal(size=(5, 3, 3, 3)).astype(np.float32)
    b = rng.normal(size=5).astype(np.float32)
    batched = ops.conv2d(xs, k, b, stride=2, pad=1)
    for i in range(4):
        np.testing.assert_allclose(batched[i], ops.conv2d(xs[i], k, b, stride=2, pad=1),
                                   atol=1e-6)


def test_conv2d_linearity():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 6, 6)).astype(np.float32)
    y = rng.normal(size=(2, 6, 6)).astype(np.float32)
    k = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)
    zb = np.zeros(3, np.float32)
    lhs = ops.conv2d(2.5 * x - 1.25 * y, k, zb, pad=1)
    rhs = 2.5 * ops.conv2d(x, k, zb, pad=1) - 1.25 * ops.conv2d(y, k, zb, pad=1)
    np.testing.assert_allclose(lhs, rhs, atol=1e-4)


def test_conv2d_shape_errors():
    x = np.zeros((2, 5, 5), np.float32)
    with pytest.raises(ValueError):
        ops.conv2d(x, np.zeros((3, 4, 3, 3), np.float32), np.zeros(3, np.float32))
    with pytest.raises(ValueError):
        ops.conv2d(x, np.zeros((3, 2, 2, 2), np.float32), np.zeros(3, np.float32))
    with pytest.raises(ValueError):
        ops.conv2d(x, np.zeros((3, 2, 7, 7), np.float32), np.zeros(3, np.float32))


def test_conv2d_backward_zero_upstream():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 6, 6)).astype(np.float32)
    k = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)
    gy = np.zeros((3, 6, 6), np.float32)
    gx, gk, gb = ops.conv2d_backward(gy, x, k, pad=1)
    assert not gx.any() and not gk.any() and not gb.any()


def test_conv2d_backward_identity_kernel():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(1, 5, 5)).astype(np.float32)
    k = np.ones((1, 1, 1, 1), np.float32)
    gy = rng.normal(size=(1, 5, 5)).astype(np.float32)
    gx, _, _ = ops.conv2d_backward(gy, x, k)
    np.testing.assert_array_equal(gx, gy)


@pytest.mark.parametrize("stride,pad", [(1, 1), (2, 1)])
def test_conv2d_backward_finite_differences(stride, pad):
    rng = np.random.default_rng(7)
    x = rng.normal(size=(2, 6, 6)).astype(np.float32)
    k = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)
    b = rng.normal(size=3).astype(np.float32)
    out = ops.conv2d(x, k, b, stride=stride, pad=pad)
    gy = rng.normal(size=out.shape).astype(np.float32)
    gx, gk, gb = ops.conv2d_backward(gy, x, k, stride=stride, pad=pad)

    def loss_x(xv):
        return float((conv2d_naive(xv, k, b, stride, pad) * gy).sum())

    def loss_k(kv):
        return float((conv2d_naive(x, kv, b, stride, pad) * gy).sum())

    def loss_b(bv):
        return float((conv2d_naive(x, k, bv, stride, pad) * gy).sum())

    assert rel_err(gx, finite_diff(loss_x, x)) < 1e-3
    assert rel_err(gk, finite_diff(loss_k, k)) < 1e-3
    assert rel_err(gb, finite_diff(loss_b, b)) < 1e-3


def test_relu_and_backward():
    x = np.array([[-1.0, 0.0], [2.0, -3.0]], np.float32)
    np.testing.assert_array_equal(ops.relu(x), [[0, 0], [2, 0]])
    gy = np.ones_like(x)
    np.testing.assert_array_equal(ops.relu_backward(gy, x), [[0, 0], [1, 0]])


def test_sigmoid_values():
    assert ops.sigmoid(np.float32(0.0)) == pytest.approx(0.5)
    assert ops.sigmoid(np.float32(1.0)) == pytest.approx(0.7310586, abs=1e-6)
    assert ops.sigmoid(np.float32(500.0)) == pytest.approx(1.0)
    assert ops.sigmoid(np.float32(-500.0)) == pytest.approx(0.0)


def test_softmax_uniform_and_stability():
    x = np.zeros((21, 2, 2), np.float32)
    np.testing.assert_allclose(ops.softmax_channels(x), 1.0 / 21, atol=1e-7)
    x = np.zeros((4, 1, 1), np.float32)
    x[2] = 1000.0
    s = ops.softmax_channels(x)
    assert np.isfinite(s).all()
    assert s[2, 0, 0] == pytest.approx(1.0)


def test_softmax_matches_float64():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(6, 5, 4)).astype(np.float32) * 3
    s = ops.softmax_channels(x)
    x64 = x.astype(np.float64)
    e = np.exp(x64 - x64.max(axis=0, keepdims=True))
    np.testing.assert_allclose(s, e / e.sum(axis=0, keepdims=True), atol=1e-5)
    np.testing.assert_allclose(s.sum(axis=0), 1.0, atol=1e-6)
    assert (s >= 0).all()


def test_global_avg_pool():
    x = np.full((3, 4, 4), 2.5, np.float32)
    np.testing.assert_allclose(ops.global_avg_pool(x), 2.5)
    x = np.zeros((1, 2, 2), np.float32)
    x[0, 0] = 1.0
    np.testing.assert_allclose(ops.global_avg_pool(x), 0.5)
    rng = np.random.default_rng(9)
    r = rng.normal(size=(4, 7, 5)).astype(np.float32)
    np.testing.assert_allclose(ops.global_avg_pool(r),
                               r.astype(np.float64).mean(axis=(1, 2)), atol=1e-6)


def test_resize_identity_is_exact_copy():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(3, 6, 7)).astype(np.float32)
    out = ops.resize_bilinear(x, 6, 7)
    np.testing.assert_array_equal(out, x)
    assert out is not x


def test_resize_constant():
    x = np.full((2, 3, 3), 0.75, np.float32)
    np.testing.assert_allclose(ops.resize_bilinear(x, 9, 5), 0.75, atol=1e-7)


def test_resize_2x2_to_4x4_frozen():
    x = np.array([[0.0, 1.0], [2.0, 3.0]], np.float32)
    expected = np.array([[0.0, 0.25, 0.75, 1.0],
                         [0.5, 0.75, 1.25, 1.5],
                         [1.5, 1.75, 2.25, 2.5],
                         [2.0, 2.25, 2.75, 3.0]])
    np.testing.assert_allclose(ops.resize_bilinear(x, 4, 4), expected, atol=1e-6)
    np.testing.assert_allclose(resize_bilinear_naive(x, 4, 4), expected)


def test_resize_matches_naive_oracle_and_bounds():
    rng = np.random.default_rng(11)
    for oh, ow in [(5, 9), (16, 16), (3, 2), (20, 7)]:
        x = rng.normal(size=(8, 6)).astype(np.float32)
        out = ops.resize_bilinear(x, oh, ow)
        np.testing.assert_allclose(out, resize_bilinear_naive(x, oh, ow), atol=1e-5)
        assert out.min() >= x.min() - 1e-6
        assert out.max() <= x.max() + 1e-6


def test_box_filter_constant_and_zero_radius():
    x = np.full((5, 5), 3.25, np.float32)
    for r in [0, 1, 2, 7]:
        np.testing.assert_allclose(ops.box_filter(x, r), 3.25, atol=1e-6)
    rng = np.random.default_rng(12)
    y = rng.normal(size=(4, 6)).astype(np.float32)
    np.testing.assert_array_equal(ops.box_filter(y, 0), y)


def test_box_filter_matches_naive_oracle():
    rng = np.random.default_rng(13)
    x = rng.normal(size=(8, 8)).astype(np.float32)
    for r in [1, 2, 3]:
        np.testing.assert_allclose(ops.box_filter(x, r), box_filter_naive(x, r), atol=1e-5)


def test_box_filter_full_window_is_global_mean():
    rng = np.random.default_rng(14)
    x = rng.normal(size=(6, 9)).astype(np.float32)
    out = ops.box_filter(x, 9)
    np.testing.assert_allclose(out, x.astype(np.float64).mean(), atol=1e-5)


def test_box_counts():
    c = ops.box_counts(4, 4, 1)
    assert c[0, 0] == 4 and c[0, 1] == 6 and c[1, 1] == 9 and c[2, 2] == 9


def test_tensorfile_roundtrip(tmp_path):
    rng = np.random.default_rng(15)
    x = rng.normal(size=(3, 4, 5)).astype(np.float32)
    p = tmp_path / "t.sgt"
    tensorfile.write_tensor(p, x)
    back = tensorfile.read_tensor(p)
    np.testing.assert_array_equal(back, x)
    assert back.dtype == np.float32


def test_tensorfile_header_layout(tmp_path):
    p = tmp_path / "v.sgt"
    tensorfile.write_tensor(p, np.arange(6, dtype=np.float32).reshape(2, 3))
    raw = p.read_bytes()
    assert raw[:4] == b"SGT1"
    assert raw[4:8] == (2).to_bytes(4, "little")
    assert raw[8:12] == (2).to_bytes(4, "little")
    assert raw[12:16] == (3).to_bytes(4, "little")
    assert len(raw) == 16 + 6 * 4


def test_tensorfile_rejects_corruption(tmp_path):
    p = tmp_path / "bad.sgt"
    tensorfile.write_tensor(p, np.zeros((2, 2), np.float32))
    raw = p.read_bytes()
    (tmp_path / "magic.sgt").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError, match="magic"):
        tensorfile.read_tensor(tmp_path / "magic.sgt")
    (tmp_path / "trunc.sgt").write_bytes(raw[:-4])
    with pytest.raises(ValueError, match="payload"):
        tensorfile.read_tensor(tmp_path / "trunc.sgt")
