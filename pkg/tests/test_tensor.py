import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from soundcl.tensor import (Tensor, conv1d, conv1d_transpose,
                            conv_output_length, conv_transpose_output_length)

from gradcheck import check_gradients, central_difference, rel_error


def naive_conv1d(x, kernels, bias, stride, padding):
    """Independent loop-based cross-correlation oracle."""
    c_in, length = x.shape
    c_out, _, klen = kernels.shape
    if padding == "same":
        total = klen - 1
        left = total // 2
        x = np.pad(x, ((0, 0), (left, total - left)))
        length = x.shape[1]
    l_out = (length - klen) // stride + 1
    out = np.zeros((c_out, l_out))
    for o in range(c_out):
        for pos in range(l_out):
            acc = 0.0
            for c in range(c_in):
                for k in range(klen):
                    acc += x[c, pos * stride + k] * kernels[o, c, k]
            out[o, pos] = acc + bias[o]
    return out


def naive_conv1d_transpose(x, kernels, bias, stride):
    """Independent loop-based scatter oracle."""
    c_in, length = x.shape
    _, c_out, klen = kernels.shape
    l_out = (length - 1) * stride + klen
    out = np.zeros((c_out, l_out))
    for c in range(c_in):
        for pos in range(length):
            for o in range(c_out):
                for k in range(klen):
                    out[o, pos * stride + k] += x[c, pos] * kernels[c, o, k]
    return out + bias[:, None]


class TestConv1d:
    def test_identity_kernel(self):
        x = Tensor([[1.0, 2, 3, 4, 5]])
        k = Tensor(np.array([[[0.0, 1.0, 0.0]]]))
        out = conv1d(x, k, Tensor(np.zeros(1)), 1, "same")
        assert np.array_equal(out.data, [[1, 2, 3, 4, 5]])

    def test_hand_computed_valid_stride2(self):
        x = Tensor([[1.0, 1, 1, 1]])
        k = Tensor(np.array([[[1.0, 1.0]]]))
        out = conv1d(x, k, Tensor(np.zeros(1)), 2, "valid")
        assert np.array_equal(out.data, [[2.0, 2.0]])

    def test_encoder_length_chain(self):
        # 16 frames through the generator encoder geometry collapse to 1
        assert conv_output_length(16, 6, 1) == 11
        assert conv_output_length(11, 4, 2) == 4
        assert conv_output_length(4, 3, 2) == 1
        rng = np.random.default_rng(0)
        x = Tensor(rng.random((128, 16)))
        h = conv1d(x, Tensor(rng.normal(size=(128, 128, 6))),
                   Tensor(np.zeros(128)), 1, "valid")
        assert h.shape == (128, 11)
        h = conv1d(h, Tensor(rng.normal(size=(128, 128, 4))),
                   Tensor(np.zeros(128)), 2, "valid")
        assert h.shape == (128, 4)
        h = conv1d(h, Tensor(rng.normal(size=(128, 128, 3))),
                   Tensor(np.zeros(128)), 2, "valid")
        assert h.shape == (128, 1)

    def test_channel_mismatch_rejected(self):
        x = Tensor(np.zeros((3, 8)))
        k = Tensor(np.zeros((4, 2, 3)))
        with pytest.raises(ValueError, match="channels"):
            conv1d(x, k, Tensor(np.zeros(4)))

    def test_same_padding_extra_zero_on_right(self):
        # even kernel: all padding lands on the right
        x = Tensor([[1.0, 2, 3]])
        k = Tensor(np.array([[[1.0, 1.0]]]))
        out = conv1d(x, k, Tensor(np.zeros(1)), 1, "same")
        assert np.array_equal(out.data, [[3.0, 5.0, 3.0]])

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(3)
        for stride, padding in ((1, "same"), (1, "valid"), (2, "valid")):
            x = rng.normal(size=(3, 9))
            k = rng.normal(size=(5, 3, 3))
            b = rng.normal(size=5)
            got = conv1d(Tensor(x), Tensor(k), Tensor(b), stride, padding)
            want = naive_conv1d(x, k, b, stride, padding)
            assert np.allclose(got.data, want, atol=1e-12)

    def test_batched_matches_per_sample(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(4, 3, 10))
        k = rng.normal(size=(2, 3, 3))
        b = rng.normal(size=2)
        batched = conv1d(Tensor(x), Tensor(k), Tensor(b), 2, "valid").data
        for i in range(4):
            single = conv1d(Tensor(x[i]), Tensor(k), Tensor(b), 2, "valid").data
            assert np.allclose(batched[i], single)


class TestConv1dTranspose:
    def test_kernel_copy(self):
        x = Tensor([[1.0]])
        k = Tensor(np.array([[[1.0, 2.0, 3.0]]]))
        out = conv1d_transpose(x, k, Tensor(np.zeros(1)), 1)
        assert np.array_equal(out.data, [[1.0, 2.0, 3.0]])

    def test_decoder_length_chain(self):
        # latent frame expands back to the 16 input frames
        assert conv_transpose_output_length(1, 4, 2) == 4
        assert conv_transpose_output_length(4, 4, 2) == 10
        assert conv_transpose_output_length(10, 7, 1) == 16

    def test_adjoint_of_conv1d(self):
        # <conv(x), y> == <x, convT(y)>: the same kernel array is reused,
        # reinterpreted by the transposed layout convention (C_in <-> C_out)
        rng = np.random.default_rng(11)
        x = rng.normal(size=(1, 8))
        y = rng.normal(size=(1, 6))
        w = rng.normal(size=(1, 1, 3))
        cx = conv1d(Tensor(x), Tensor(w), Tensor(np.zeros(1)), 1, "valid").data
        cty = conv1d_transpose(Tensor(y), Tensor(w), Tensor(np.zeros(1)), 1).data
        assert abs((cx * y).sum() - (x * cty).sum()) < 1e-10

    def test_adjoint_multichannel_strided(self):
        rng = np.random.default_rng(12)
        w = rng.normal(size=(4, 3, 3))          # C_out=4, C_in=3, K=3
        x = rng.normal(size=(3, 9))
        length_out = conv_output_length(9, 3, 2)
        y = rng.normal(size=(4, length_out))
        cx = conv1d(Tensor(x), Tensor(w), Tensor(np.zeros(4)), 2, "valid").data
        cty = conv1d_transpose(Tensor(y), Tensor(w), Tensor(np.zeros(3)), 2).data
        assert abs((cx * y).sum() - (x * cty).sum()) < 1e-10

    def test_stride_below_one_rejected(self):
        with pytest.raises(ValueError, match="stride"):
            conv1d_transpose(Tensor(np.zeros((1, 4))),
                             Tensor(np.zeros((1, 1, 3))), Tensor(np.zeros(1)), 0)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(5)
        for stride in (1, 2, 3):
            x = rng.normal(size=(3, 4))
            k = rng.normal(size=(3, 2, 4))
            b = rng.normal(size=2)
            got = conv1d_transpose(Tensor(x), Tensor(k), Tensor(b), stride)
            want = naive_conv1d_transpose(x, k, b, stride)
            assert np.allclose(got.data, want, atol=1e-12)

    @given(length=st.integers(1, 6), klen=st.integers(1, 5),
           stride=st.integers(1, 3))
    @settings(max_examples=40, deadline=None)
    def test_length_restoration_roundtrip(self, length, klen, stride):
        # conv1d undoes the length growth of conv1d_transpose at matching (K, stride)
        grown = conv_transpose_output_length(length, klen, stride)
        assert conv_output_length(grown, klen, stride) == length


class TestBackward:
    def test_quadratic_gradient(self):
        w = Tensor([1.0, -2.0, 3.0], requires_grad=True)
        (w * w).sum().backward()
        assert np.array_equal(w.grad, [2.0, -4.0, 6.0])

    def test_constant_loss_zero_grad(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        loss = (w * 0.0).sum() + 5.0
        loss.backward()
        assert np.array_equal(w.grad, [0.0, 0.0])

    def test_non_scalar_rejected(self):
        w = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            (w * w).backward()

    def test_repeated_backward_accumulates(self):
        w = Tensor([3.0], requires_grad=True)
        loss = (w * w).sum()
        loss.backward()
        loss.backward()
        assert np.allclose(w.grad, [12.0])  # 2x the single-pass gradient

    def test_grad_shape_matches_data(self):
        rng = np.random.default_rng(0)
        k = Tensor(rng.normal(size=(2, 3, 3)), requires_grad=True)
        x = Tensor(rng.normal(size=(3, 8)))
        conv1d(x, k, Tensor(np.zeros(2)), 1, "valid").sum().backward()
        assert k.grad.shape == k.data.shape

    @pytest.mark.parametrize("seed", range(5))
    def test_composite_finite_difference(self, seed):
        # conv -> relu -> dense -> log_softmax composite against the FD oracle
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(2, 3, 8)))
        k = Tensor(rng.normal(size=(4, 3, 3)) * 0.5, requires_grad=True, name="k")
        b = Tensor(rng.normal(size=4) * 0.1, requires_grad=True, name="b")
        w = Tensor(rng.normal(size=(4, 5)) * 0.5, requires_grad=True, name="w")
        t = Tensor(rng.normal(size=(2, 5)))
        target = t.softmax().detach()

        def loss():
            h = conv1d(x, k, b, 2, "valid").relu().mean(axis=2)
            logits = h @ w
            return -(target * logits.log_softmax()).sum(axis=-1).mean()

        assert check_gradients(loss, [k, b, w], tol=1e-4) < 1e-4


class TestElementwiseGrads:
    @pytest.mark.parametrize("op", ["exp", "log", "relu", "sigmoid",
                                    "softmax", "log_softmax", "clip"])
    def test_finite_difference_per_op(self, op):
        rng = np.random.default_rng(hash(op) % 2**32)
        base = rng.uniform(0.2, 1.5, size=(3, 4))  # positive, away from kinks
        x = Tensor(base, requires_grad=True, name=op)
        weights = Tensor(rng.normal(size=(3, 4)))

        def loss():
            if op == "clip":
                y = x.clip(0.05, 2.0)
            else:
                y = getattr(x, op)()
            return (y * weights).sum()

        assert check_gradients(loss, [x], tol=1e-4) < 1e-4

    def test_broadcast_add_grad(self):
        rng = np.random.default_rng(2)
        b = Tensor(rng.normal(size=3), requires_grad=True, name="bias")
        x = Tensor(rng.normal(size=(4, 3)))

        def loss():
            return ((x + b) * (x + b)).sum()

        check_gradients(loss, [b])

    def test_mean_and_reshape_grads(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True, name="x")
        w = Tensor(rng.normal(size=6))

        def loss():
            return (x.reshape(6, 4).mean(axis=1) * w).sum()

        check_gradients(loss, [x])


class TestSoftmax:
    @given(st.lists(st.floats(-30, 30), min_size=2, max_size=10))
    @settings(max_examples=60, deadline=None)
    def test_rows_are_distributions(self, logits):
        out = Tensor(np.array([logits])).softmax().data
        assert (out >= 0).all()
        assert abs(out.sum() - 1.0) < 1e-9

    def test_uniform_for_equal_logits(self):
        out = Tensor(np.zeros((2, 10))).softmax().data
        assert np.allclose(out, 0.1)


class TestDeterminism:
    def test_training_sequence_bit_identical(self):
        from soundcl.optim import Adam

        def run():
            rng = np.random.default_rng(123)
            w = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
            opt = Adam([w], lr=1e-2)
            for _ in range(20):
                x = Tensor(rng.normal(size=(4, 3)))
                loss = ((x @ w) * (x @ w)).mean()
                w.zero_grad()
                loss.backward()
                opt.step()
            return w.data.copy()

        first, second = run(), run()
        assert np.array_equal(first, second)  # bit identical


class TestOperandErrors:
    def test_matmul_requires_2d(self):
        with pytest.raises(ValueError, match="2-D"):
            Tensor(np.zeros((2, 3, 4))) @ Tensor(np.zeros((4, 5)))

    def test_matmul_inner_dims(self):
        with pytest.raises(ValueError, match="inner dims"):
            Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((4, 5)))

    def test_division_by_tensor_rejected(self):
        with pytest.raises(TypeError, match="scalars"):
            Tensor([1.0]) / Tensor([2.0])

    def test_conv_stride_zero_rejected(self):
        with pytest.raises(ValueError, match="stride"):
            conv1d(Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 1, 2))),
                   Tensor(np.zeros(1)), stride=0)

    def test_conv_bad_padding_rejected(self):
        with pytest.raises(ValueError, match="padding"):
            conv1d(Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 1, 2))),
                   Tensor(np.zeros(1)), 1, "reflect")

    def test_kernel_longer_than_input_rejected(self):
        with pytest.raises(ValueError, match="exceeds"):
            conv1d(Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 1, 5))),
                   Tensor(np.zeros(1)), 1, "valid")


class TestFiniteness:
    def test_forward_backward_finite(self):
        rng = np.random.default_rng(8)
        x = Tensor(rng.normal(size=(2, 3, 12)))
        k = Tensor(rng.normal(size=(4, 3, 3)), requires_grad=True)
        out = conv1d(x, k, Tensor(np.zeros(4)), 1, "same").sigmoid()
        loss = out.mean()
        loss.backward()
        assert np.isfinite(out.data).all()
        assert np.isfinite(k.grad).all()
