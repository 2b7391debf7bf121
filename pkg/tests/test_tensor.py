import io

import numpy as np
import pytest

from rthare.tensor import (
    ConfigError,
    DimensionError,
    GradientTape,
    NumericsError,
    Parameter,
    TapeError,
    Tensor,
    add,
    backward,
    concat_channels,
    conv2d_raw,
    correlate_maps,
    global_avg_pool,
    group_norm_raw,
    load_tensor,
    mse,
    multiply,
    read_tensor,
    relu,
    save_tensor,
    tensor_sum,
    write_tensor,
)
from rthare.layers import ConvLayer, GroupNorm, ResidualBlock, conv2d, residual_forward

from oracles import conv2d_loops, finite_difference, group_norm_two_pass


def p64(arr):
    return Parameter(np.asarray(arr, dtype=np.float64))


class TestTensorBasics:
    def test_shape_and_data(self):
        t = Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert t.shape == (2, 2)
        assert t.dtype == "f32"
        assert t.size == 4

    def test_rejects_non_finite(self):
        with pytest.raises(NumericsError):
            Tensor([1.0, np.nan])
        with pytest.raises(NumericsError):
            Tensor([np.inf, 0.0])

    def test_constructor_copies_caller_array(self):
        src = np.ones(3, dtype=np.float32)
        t = Tensor(src)
        src[0] = 7.0
        assert t.data[0] == 1.0
        assert src.flags.writeable

    def test_tensor_data_read_only(self):
        t = Tensor([1.0, 2.0])
        with pytest.raises(ValueError):
            t.data[0] = 5.0

    def test_parameter_assign(self):
        p = Parameter(np.zeros(3, dtype=np.float32), name="w")
        p.assign(np.array([1.0, 2.0, 3.0], dtype=np.float32))
        assert p.data.tolist() == [1.0, 2.0, 3.0]
        with pytest.raises(DimensionError):
            p.assign(np.zeros(4, dtype=np.float32))
        with pytest.raises(NumericsError):
            p.assign(np.array([np.nan, 0.0, 0.0]))


class TestConv2d:
    def test_hand_example(self):
        # direct convolution sum: 1*1 + 2*0 + 3*0 + 4*1 = 5
        x = Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]], dtype=np.float32))
        w = Parameter(np.array([[[[1.0, 0.0], [0.0, 1.0]]]], dtype=np.float32))
        out = conv2d_raw(x, w, None, stride=1, padding=0)
        assert out.shape == (1, 1, 1)
        assert out.data[0, 0, 0] == pytest.approx(5.0)

    def test_one_by_one_identity(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(1, 5, 7)).astype(np.float32))
        w = Parameter(np.ones((1, 1, 1, 1), dtype=np.float32))
        b = Parameter(np.zeros(1, dtype=np.float32))
        out = conv2d_raw(x, w, b)
        np.testing.assert_array_equal(out.data, x.data)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 3), (3, 0)])
    def test_against_loop_oracle(self, stride, padding):
        rng = np.random.default_rng(42 + stride * 10 + padding)
        x = rng.normal(size=(3, 8, 8))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        expected = conv2d_loops(x, w, b, stride=stride, padding=padding)
        got = conv2d_raw(p64(x), p64(w), p64(b), stride=stride, padding=padding)
        np.testing.assert_allclose(got.data, expected, rtol=1e-12, atol=1e-12)

    def test_batched_matches_single_bit_exact(self):
        rng = np.random.default_rng(3)
        frames = rng.normal(size=(4, 3, 6, 6)).astype(np.float32)
        w = Parameter(rng.normal(size=(5, 3, 3, 3)).astype(np.float32))
        b = Parameter(rng.normal(size=5).astype(np.float32))
        batched = conv2d_raw(Tensor(frames), w, b, stride=1, padding=1)
        for i in range(4):
            single = conv2d_raw(Tensor(frames[i]), w, b, stride=1, padding=1)
            assert np.array_equal(batched.data[i], single.data)

    def test_shape_mismatch_reports_both_shapes(self):
        x = Tensor(np.zeros((2, 4, 4), dtype=np.float32))
        w = Parameter(np.zeros((1, 3, 3, 3), dtype=np.float32))
        with pytest.raises(DimensionError) as exc:
            conv2d_raw(x, w, None)
        assert "(1, 3, 3, 3)" in str(exc.value)

    def test_no_output_space_errors(self):
        x = Tensor(np.zeros((1, 2, 2), dtype=np.float32))
        w = Parameter(np.zeros((1, 1, 5, 5), dtype=np.float32))
        with pytest.raises(DimensionError):
            conv2d_raw(x, w, None)

    def test_linearity_bias_free(self):
        rng = np.random.default_rng(11)
        for seed in range(5):
            r = np.random.default_rng(seed)
            x = Tensor(r.normal(size=(2, 6, 6)).astype(np.float32))
            y = Tensor(r.normal(size=(2, 6, 6)).astype(np.float32))
            w = Parameter(r.normal(size=(3, 2, 3, 3)).astype(np.float32))
            a, b = 1.7, -0.4
            lhs = conv2d_raw(Tensor(a * x.data + b * y.data), w, None, padding=1)
            rhs = a * conv2d_raw(x, w, None, padding=1).data + b * conv2d_raw(y, w, None, padding=1).data
            np.testing.assert_allclose(lhs.data, rhs, rtol=1e-5, atol=1e-6)

    def test_determinism(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.normal(size=(3, 10, 10)).astype(np.float32))
        w = Parameter(rng.normal(size=(4, 3, 3, 3)).astype(np.float32))
        out1 = conv2d_raw(x, w, None, stride=2, padding=1)
        out2 = conv2d_raw(x, w, None, stride=2, padding=1)
        assert np.array_equal(out1.data, out2.data)


class TestGroupNorm:
    def test_constant_input_maps_to_zero(self):
        x = Tensor(np.full((4, 3, 3), 2.5, dtype=np.float32))
        gamma = Parameter(np.ones(4, dtype=np.float32))
        beta = Parameter(np.zeros(4, dtype=np.float32))
        out = group_norm_raw(x, gamma, beta, groups=2)
        np.testing.assert_allclose(out.data, 0.0, atol=1e-6)

    def test_normalized_statistics(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(loc=3.0, scale=2.0, size=(8, 6, 6)).astype(np.float64))
        gamma = p64(np.ones(8))
        beta = p64(np.zeros(8))
        out = group_norm_raw(x, gamma, beta, groups=4).data
        for g in range(4):
            chunk = out[g * 2:(g + 1) * 2]
            assert abs(chunk.mean()) < 1e-5
            assert abs(chunk.var() - 1.0) < 1e-4

    def test_against_two_pass_oracle(self):
        rng = np.random.default_rng(17)
        x = rng.normal(size=(8, 2, 2))
        gamma = rng.normal(size=8)
        beta = rng.normal(size=8)
        expected = group_norm_two_pass(x, gamma, beta, groups=2)
        got = group_norm_raw(p64(x), p64(gamma), p64(beta), groups=2)
        np.testing.assert_allclose(got.data, expected, rtol=1e-10, atol=1e-10)

    def test_indivisible_groups_rejected(self):
        x = Tensor(np.zeros((6, 2, 2), dtype=np.float32))
        gamma = Parameter(np.ones(6, dtype=np.float32))
        beta = Parameter(np.zeros(6, dtype=np.float32))
        with pytest.raises(ConfigError):
            group_norm_raw(x, gamma, beta, groups=4)


class TestResidualBlock:
    def test_zero_path_identity_shortcut(self):
        rng = np.random.default_rng(2)
        block = ResidualBlock.create(4, 4, rng, stride=1)
        for conv in (block.conv_a, block.conv_b):
            conv.weight.assign(np.zeros_like(conv.weight.data))
        x = Tensor(np.abs(rng.normal(size=(4, 5, 5))).astype(np.float32))
        out = residual_forward(x, block)
        # relu(0 + x) == x for non-negative input
        np.testing.assert_allclose(out.data, x.data, rtol=1e-6, atol=1e-6)

    def test_stride_two_shape(self):
        rng = np.random.default_rng(3)
        block = ResidualBlock.create(16, 16, rng, stride=2)
        x = Tensor(rng.normal(size=(16, 8, 8)).astype(np.float32))
        out = residual_forward(x, block)
        assert out.shape == (16, 4, 4)

    def test_matches_composed_oracle(self):
        rng = np.random.default_rng(7)
        block = ResidualBlock.create(2, 4, rng, stride=2, dtype="f64")
        x = rng.normal(size=(2, 6, 6))
        h = conv2d_loops(x, block.conv_a.weight.data, block.conv_a.bias.data, stride=2, padding=1)
        h = group_norm_two_pass(h, block.norm_a.gamma.data, block.norm_a.beta.data, block.norm_a.groups)
        h = np.maximum(h, 0.0)
        h = conv2d_loops(h, block.conv_b.weight.data, block.conv_b.bias.data, stride=1, padding=1)
        h = group_norm_two_pass(h, block.norm_b.gamma.data, block.norm_b.beta.data, block.norm_b.groups)
        s = conv2d_loops(x, block.projection.weight.data, block.projection.bias.data, stride=2, padding=0)
        s = group_norm_two_pass(s, block.norm_p.gamma.data, block.norm_p.beta.data, block.norm_p.groups)
        expected = np.maximum(h + s, 0.0)
        got = residual_forward(Tensor(x, dtype="f64"), block)
        np.testing.assert_allclose(got.data, expected, rtol=1e-9, atol=1e-9)


class TestGlobalAvgPool:
    def test_constant_plane(self):
        out = global_avg_pool(Tensor(np.full((3, 4, 4), 3.0, dtype=np.float32)))
        np.testing.assert_allclose(out.data, 3.0)

    def test_mean_example(self):
        out = global_avg_pool(Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]])))
        assert out.data[0] == pytest.approx(2.5)

    def test_degenerate_pooling(self):
        rng = np.random.default_rng(1)
        vals = rng.normal(size=(2048, 1, 1)).astype(np.float32)
        out = global_avg_pool(Tensor(vals))
        np.testing.assert_array_equal(out.data, vals[:, 0, 0])


class TestBackward:
    def test_linear_loss_grad_is_input(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(4, 4)).astype(np.float64))
        w = p64(rng.normal(size=(4, 4)))
        with GradientTape() as tape:
            loss = tensor_sum(multiply(w, x))
        grads = backward(tape, loss)
        np.testing.assert_array_equal(grads[w], x.data)

    def test_conv_mse_matches_finite_differences(self):
        rng = np.random.default_rng(21)
        x = Tensor(rng.normal(size=(1, 2, 2)), dtype="f32")
        w = Parameter(rng.normal(size=(1, 1, 2, 2)).astype(np.float32))
        target = Tensor(rng.normal(size=(1, 1, 1)), dtype="f32")

        with GradientTape() as tape:
            loss = mse(conv2d_raw(x, w, None), target)
        grads = backward(tape, loss)

        # the oracle differentiates the same function recomputed in f64
        wref = p64(w.data)
        tref = Tensor(target.data, dtype="f64")
        x64 = Tensor(x.data, dtype="f64")

        def loss_at():
            return mse(conv2d_raw(x64, wref, None), tref).item()

        fd = finite_difference(loss_at, wref.data, range(4), step=1e-4)
        for idx, g_fd in fd.items():
            g_an = grads[w].reshape(-1)[idx]
            assert abs(g_an - g_fd) / max(abs(g_fd), 1e-8) < 1e-3

    def test_unused_parameter_has_no_grad(self):
        x = Tensor(np.ones(3, dtype=np.float32))
        w = Parameter(np.ones(3, dtype=np.float32))
        unused = Parameter(np.ones(3, dtype=np.float32))
        with GradientTape() as tape:
            loss = tensor_sum(multiply(w, x))
        grads = backward(tape, loss)
        assert unused not in grads
        assert w in grads

    def test_non_scalar_loss_rejected(self):
        w = Parameter(np.ones(3, dtype=np.float32))
        x = Tensor(np.ones(3, dtype=np.float32))
        with GradientTape() as tape:
            out = multiply(w, x)
        with pytest.raises(TapeError):
            backward(tape, out)

    def test_second_backward_rejected(self):
        w = Parameter(np.ones(3, dtype=np.float32))
        with GradientTape() as tape:
            loss = tensor_sum(multiply(w, Tensor(np.ones(3, dtype=np.float32))))
        backward(tape, loss)
        with pytest.raises(TapeError):
            backward(tape, loss)

    def test_grad_shapes_match_parameters(self):
        rng = np.random.default_rng(13)
        block = ResidualBlock.create(2, 4, rng, stride=2)
        x = Tensor(rng.normal(size=(2, 6, 6)).astype(np.float32))
        with GradientTape() as tape:
            loss = tensor_sum(residual_forward(x, block))
        grads = backward(tape, loss)
        for param in block.parameters():
            assert param in grads
            assert grads[param].shape == param.shape


def _fd_check(build_loss, params, seeds, rtol, step=1e-3, coords_per_param=3):
    """Per-op gradient check: analytic backward vs central differences."""
    worst = 0.0
    for seed in seeds:
        tensors, loss_fn = build_loss(seed)
        with GradientTape() as tape:
            loss = loss_fn()
        grads = backward(tape, loss)
        for p in params(tensors):
            flat_idx = np.random.default_rng(seed).choice(
                p.size, size=min(coords_per_param, p.size), replace=False)
            fd = finite_difference(lambda: loss_fn().item(), p.data, flat_idx, step=step)
            for idx, g_fd in fd.items():
                g_an = float(grads[p].reshape(-1)[idx])
                denom = max(abs(g_fd), abs(g_an), 1e-10)
                worst = max(worst, abs(g_an - g_fd) / denom)
    assert worst < rtol, f"max relative gradient error {worst}"


class TestGradientsVsFiniteDifferences:
    """Analytic gradients vs central differences (f64, step 1e-3, 20 seeds)."""

    def test_conv2d_grads(self):
        def build(seed):
            rng = np.random.default_rng(seed)
            x = Parameter(rng.normal(size=(2, 5, 5)), name="x")
            w = Parameter(rng.normal(size=(3, 2, 3, 3)), name="w")
            b = Parameter(rng.normal(size=3), name="b")
            t = Tensor(rng.normal(size=(3, 4, 4)), dtype="f64")
            return (x, w, b), lambda: mse(conv2d_raw(x, w, b, stride=2, padding=2), t)

        _fd_check(build, lambda ts: ts, range(20), rtol=1e-6)

    def test_group_norm_grads(self):
        def build(seed):
            rng = np.random.default_rng(seed)
            x = Parameter(rng.normal(size=(4, 4, 4)), name="x")
            gamma = Parameter(rng.normal(size=4), name="g")
            beta = Parameter(rng.normal(size=4), name="b")
            t = Tensor(rng.normal(size=(4, 4, 4)), dtype="f64")
            return (x, gamma, beta), lambda: mse(group_norm_raw(x, gamma, beta, 2), t)

        _fd_check(build, lambda ts: ts, range(20), rtol=1e-6)

    def test_relu_grads_away_from_kink(self):
        def build(seed):
            rng = np.random.default_rng(seed)
            vals = rng.normal(size=(3, 4, 4))
            vals = np.where(np.abs(vals) < 0.2, vals + np.sign(vals) * 0.2, vals)
            x = Parameter(vals, name="x")
            t = Tensor(rng.normal(size=(3, 4, 4)), dtype="f64")
            return (x,), lambda: mse(relu(x), t)

        _fd_check(build, lambda ts: ts, range(20), rtol=1e-6)

    def test_pool_and_correlate_grads(self):
        def build(seed):
            rng = np.random.default_rng(seed)
            fa = Parameter(rng.normal(size=(3, 2, 2)), name="fa")
            fb = Parameter(rng.normal(size=(3, 2, 2)), name="fb")
            t = Tensor(rng.normal(size=(4,)), dtype="f64")
            return (fa, fb), lambda: mse(global_avg_pool(correlate_maps(fa, fb, 0.5)), t)

        _fd_check(build, lambda ts: ts, range(20), rtol=1e-6)

    def test_f32_tolerance(self):
        def build(seed):
            rng = np.random.default_rng(seed)
            x = Parameter(rng.normal(size=(2, 4, 4)).astype(np.float32), name="x")
            w = Parameter(rng.normal(size=(2, 2, 3, 3)).astype(np.float32), name="w")
            t = Tensor(rng.normal(size=(2, 4, 4)).astype(np.float32))
            return (w,), lambda: mse(conv2d_raw(x, w, None, padding=1), t)

        # f32 forward: looser tolerance per the dtype contract
        _fd_check(build, lambda ts: ts, range(5), rtol=1e-3, step=1e-2)


class TestConcatAndElementwise:
    def test_concat_order_and_grads(self):
        a = Parameter(np.ones((2, 2, 2), dtype=np.float32))
        b = Parameter(np.full((3, 2, 2), 2.0, dtype=np.float32))
        with GradientTape() as tape:
            cat = concat_channels([a, b])
            loss = tensor_sum(cat)
        assert cat.shape == (5, 2, 2)
        np.testing.assert_array_equal(cat.data[:2], 1.0)
        np.testing.assert_array_equal(cat.data[2:], 2.0)
        grads = backward(tape, loss)
        assert grads[a].shape == (2, 2, 2)
        assert grads[b].shape == (3, 2, 2)

    def test_concat_empty_rejected(self):
        with pytest.raises(DimensionError):
            concat_channels([])

    def test_add_shape_mismatch(self):
        with pytest.raises(DimensionError):
            add(Tensor(np.zeros(2, dtype=np.float32)), Tensor(np.zeros(3, dtype=np.float32)))

    def test_mixed_dtype_rejected(self):
        with pytest.raises(ConfigError):
            add(Tensor(np.zeros(2, dtype=np.float32)), Tensor(np.zeros(2, dtype=np.float64)))


class TestTensorFileFormat:
    def test_round_trip_f32(self):
        rng = np.random.default_rng(100)
        t = Tensor(rng.normal(size=(2, 3, 4)).astype(np.float32))
        buf = io.BytesIO()
        write_tensor(buf, t)
        buf.seek(0)
        back = read_tensor(buf)
        assert back.dtype == "f32"
        np.testing.assert_array_equal(back.data, t.data)

    def test_round_trip_f64_file(self, tmp_path):
        rng = np.random.default_rng(101)
        t = Tensor(rng.normal(size=(5,)), dtype="f64")
        path = tmp_path / "t.rtt1"
        save_tensor(path, t)
        back = load_tensor(path)
        assert back.dtype == "f64"
        np.testing.assert_array_equal(back.data, t.data)

    def test_header_layout(self):
        t = Tensor(np.array([1.0, 2.0], dtype=np.float32))
        buf = io.BytesIO()
        write_tensor(buf, t)
        raw = buf.getvalue()
        assert raw[:4] == b"RTT1"
        assert raw[4:8] == b"\x01\x00\x00\x00"   # version 1, little endian
        assert raw[8] == 0                        # f32
        assert raw[9:13] == b"\x01\x00\x00\x00"  # ndim 1
        assert raw[13:17] == b"\x02\x00\x00\x00"  # dim 2

    def test_bad_magic_rejected(self):
        with pytest.raises(ConfigError):
            read_tensor(io.BytesIO(b"XXXX" + b"\x00" * 16))
