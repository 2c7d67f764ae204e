"""Core kernel tests: every operation is checked against an independent oracle
(naive loops, finite differences, or a hand-evaluated recurrence)."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skillcam import nn
from skillcam.errors import DomainError, EmptyInputError, ShapeError


def conv_oracle(x, kernels, biases):
    """Triple-nested-loop same-padded width-3 cross-correlation."""
    c_out, c_in, width = kernels.shape
    length = x.shape[1]
    out = np.zeros((c_out, length), dtype=np.float64)
    for o in range(c_out):
        for t in range(length):
            acc = float(biases[o])
            for i in range(c_in):
                for tap in range(width):
                    src = t + tap - 1
                    if 0 <= src < length:
                        acc += kernels[o, i, tap] * x[i, src]
            out[o, t] = acc
    return out


def central_diff(f, x, step=1e-3):
    """Central finite differences of scalar f at 1-D/N-D point x (float64)."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + step
        hi = f(x)
        flat[j] = orig - step
        lo = f(x)
        flat[j] = orig
        gflat[j] = (hi - lo) / (2 * step)
    return grad


def rel_err(a, b, floor=1e-6):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


class TestConv1dSame:
    def test_zero_input_yields_biases(self):
        x = np.zeros((2, 5), dtype=np.float32)
        params = nn.ConvParams(
            np.zeros((2, 2, 3), dtype=np.float32),
            np.array([0.7, -0.2], dtype=np.float32),
        )
        out = nn.conv1d_same(x, params)
        assert out.shape == (2, 5)
        assert np.allclose(out[0], 0.7)
        assert np.allclose(out[1], -0.2)

    def test_identity_kernel_preserves_signal(self):
        x = np.array([[1.0, 2.0, 3.0]], dtype=np.float32)
        kernels = np.array([[[0.0, 1.0, 0.0]]], dtype=np.float32)
        params = nn.ConvParams(kernels, np.zeros(1, dtype=np.float32))
        out = nn.conv1d_same(x, params)
        np.testing.assert_allclose(out, x)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(4, 9))
        kernels = rng.normal(size=(3, 4, 3))
        biases = rng.normal(size=3)
        out = nn.conv1d_same(x, nn.ConvParams(kernels, biases))
        expected = conv_oracle(x, kernels, biases)
        assert np.max(np.abs(out - expected)) < 1e-6

    def test_oracle_equivalence_100_instances(self):
        rng = np.random.default_rng(2024)
        for _ in range(100):
            c_in = int(rng.integers(1, 7))
            c_out = int(rng.integers(1, 7))
            length = int(rng.integers(1, 30))
            x = rng.normal(size=(c_in, length))
            kernels = rng.normal(size=(c_out, c_in, 3))
            biases = rng.normal(size=c_out)
            out = nn.conv1d_same(x, nn.ConvParams(kernels, biases))
            assert np.max(np.abs(out - conv_oracle(x, kernels, biases))) < 1e-6

    def test_channel_mismatch_raises(self):
        params = nn.ConvParams(np.zeros((2, 3, 3)), np.zeros(2))
        with pytest.raises(ShapeError):
            nn.conv1d_same(np.zeros((4, 5)), params)

    def test_empty_input_raises(self):
        params = nn.ConvParams(np.zeros((2, 3, 3)), np.zeros(2))
        with pytest.raises(EmptyInputError):
            nn.conv1d_same(np.zeros((3, 0)), params)

    @settings(max_examples=30, deadline=None)
    @given(length=st.integers(min_value=1, max_value=2000))
    def test_length_preserved(self, length):
        x = np.ones((2, length), dtype=np.float32)
        params = nn.ConvParams(
            np.ones((3, 2, 3), dtype=np.float32), np.zeros(3, dtype=np.float32)
        )
        assert nn.conv1d_same(x, params).shape == (3, length)


class TestConv1dBackward:
    def test_zero_upstream_gives_zero_grads(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(3, 6))
        params = nn.ConvParams(rng.normal(size=(2, 3, 3)), rng.normal(size=2))
        dk, db, dx = nn.conv1d_backward(x, params, np.zeros((2, 6)))
        assert not dk.any() and not db.any() and not dx.any()

    def test_bias_grad_is_upstream_sum(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(3, 7))
        params = nn.ConvParams(rng.normal(size=(2, 3, 3)), rng.normal(size=2))
        upstream = rng.normal(size=(2, 7))
        _, db, _ = nn.conv1d_backward(x, params, upstream)
        np.testing.assert_allclose(db, upstream.sum(axis=1))

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(3, 7))
        kernels = rng.normal(size=(2, 3, 3))
        biases = rng.normal(size=2)
        upstream = rng.normal(size=(2, 7))

        def loss_wrt_kernels(k):
            return float(
                np.sum(upstream * nn.conv1d_same(x, nn.ConvParams(k, biases)))
            )

        def loss_wrt_biases(b):
            return float(
                np.sum(upstream * nn.conv1d_same(x, nn.ConvParams(kernels, b)))
            )

        def loss_wrt_input(xi):
            return float(
                np.sum(upstream * nn.conv1d_same(xi, nn.ConvParams(kernels, biases)))
            )

        dk, db, dx = nn.conv1d_backward(x, nn.ConvParams(kernels, biases), upstream)
        assert rel_err(dk, central_diff(loss_wrt_kernels, kernels)) < 1e-4
        assert rel_err(db, central_diff(loss_wrt_biases, biases)) < 1e-4
        assert rel_err(dx, central_diff(loss_wrt_input, x)) < 1e-4

    def test_shape_mismatch_raises(self):
        params = nn.ConvParams(np.zeros((2, 3, 3)), np.zeros(2))
        with pytest.raises(ShapeError):
            nn.conv1d_backward(np.zeros((3, 5)), params, np.zeros((2, 4)))


class TestRelu:
    def test_sign_cases(self):
        np.testing.assert_array_equal(
            nn.relu(np.array([-1.0, 0.0, 2.0])), np.array([0.0, 0.0, 2.0])
        )

    def test_identity_on_positives(self):
        x = np.abs(np.random.default_rng(2).normal(size=(3, 4))) + 0.1
        np.testing.assert_array_equal(nn.relu(x), x)

    def test_gradient_zero_at_zero(self):
        x = np.array([[0.0, -1.0, 1.0]])
        up = np.ones_like(x)
        np.testing.assert_array_equal(
            nn.relu_backward(x, up), np.array([[0.0, 0.0, 1.0]])
        )

    def test_finite_difference_away_from_kink(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 9))
        x[np.abs(x) < 1e-2] = 0.5  # keep the check away from the kink
        upstream = rng.normal(size=x.shape)

        def loss(xi):
            return float(np.sum(upstream * nn.relu(xi)))

        analytic = nn.relu_backward(x, upstream)
        assert rel_err(analytic, central_diff(loss, x)) < 1e-4


class TestGap:
    def test_constant_series(self):
        for length in (1, 5, 33):
            x = np.full((2, length), 4.25, dtype=np.float32)
            np.testing.assert_allclose(nn.gap(x), [4.25, 4.25])

    def test_arithmetic_mean(self):
        assert nn.gap(np.array([[1.0, 2.0, 3.0]]))[0] == pytest.approx(2.0)

    def test_matches_direct_summation(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(32, 517))
        expected = np.array([sum(row) / len(row) for row in x])
        assert np.max(np.abs(nn.gap(x) - expected)) < 1e-6

    def test_backward_distributes_uniformly(self):
        x = np.zeros((2, 4))
        up = np.array([8.0, -4.0])
        expected = np.array([[2.0] * 4, [-1.0] * 4])
        np.testing.assert_allclose(nn.gap_backward(x, up), expected)

    def test_empty_raises(self):
        with pytest.raises(EmptyInputError):
            nn.gap(np.zeros((3, 0)))


class TestDense:
    def test_zero_weights_pass_biases(self):
        params = nn.DenseParams(np.zeros((3, 5)), np.array([0.1, 0.2, 0.3]))
        np.testing.assert_allclose(
            nn.dense_logits(np.ones(5), params), [0.1, 0.2, 0.3]
        )

    def test_basis_vector(self):
        params = nn.DenseParams(np.eye(3), np.zeros(3))
        np.testing.assert_allclose(
            nn.dense_logits(np.array([1.0, 0.0, 0.0]), params), [1.0, 0.0, 0.0]
        )

    def test_matches_dot_product_oracle(self):
        rng = np.random.default_rng(9)
        w = rng.normal(size=(3, 32))
        b = rng.normal(size=3)
        f = rng.normal(size=32)
        expected = [sum(w[c, k] * f[k] for k in range(32)) + b[c] for c in range(3)]
        out = nn.dense_logits(f, nn.DenseParams(w, b))
        assert np.max(np.abs(out - np.array(expected))) < 1e-6

    def test_length_mismatch_raises(self):
        params = nn.DenseParams(np.zeros((3, 5)), np.zeros(3))
        with pytest.raises(ShapeError):
            nn.dense_logits(np.ones(4), params)

    def test_backward_finite_differences(self):
        rng = np.random.default_rng(10)
        w = rng.normal(size=(3, 6))
        b = rng.normal(size=3)
        f = rng.normal(size=6)
        up = rng.normal(size=3)

        dw, db, df = nn.dense_backward(f, nn.DenseParams(w, b), up)
        assert (
            rel_err(
                dw,
                central_diff(
                    lambda wi: float(
                        np.sum(up * nn.dense_logits(f, nn.DenseParams(wi, b)))
                    ),
                    w,
                ),
            )
            < 1e-4
        )
        np.testing.assert_allclose(db, up)
        assert (
            rel_err(
                df,
                central_diff(
                    lambda fi: float(
                        np.sum(up * nn.dense_logits(fi, nn.DenseParams(w, b)))
                    ),
                    f,
                ),
            )
            < 1e-4
        )


class TestSoftmaxCrossEntropy:
    def test_uniform_case(self):
        for label in range(3):
            loss, probs, _ = nn.softmax_cross_entropy(np.zeros(3), label)
            np.testing.assert_allclose(probs, [1 / 3] * 3)
            assert loss == pytest.approx(np.log(3.0), abs=1e-6)

    def test_dominant_logit_is_stable(self):
        loss, probs, _ = nn.softmax_cross_entropy(np.array([1000.0, 0.0, 0.0]), 0)
        assert np.isfinite(probs).all()
        assert loss == pytest.approx(0.0, abs=1e-6)

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(12)
        logits = rng.normal(size=3) * 2
        label = 1
        _, _, grads = nn.softmax_cross_entropy(logits, label)
        numeric = central_diff(
            lambda z: nn.softmax_cross_entropy(z, label)[0], logits
        )
        assert rel_err(grads, numeric) < 1e-4

    def test_invalid_label_raises(self):
        with pytest.raises(DomainError):
            nn.softmax_cross_entropy(np.zeros(3), 3)

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(
            st.floats(min_value=-1e4, max_value=1e4, allow_nan=False),
            min_size=3,
            max_size=3,
        )
    )
    def test_probs_normalised_up_to_1e4(self, raw):
        logits = np.array(raw)
        _, probs, _ = nn.softmax_cross_entropy(logits, 0)
        assert np.isfinite(probs).all()
        assert probs.sum() == pytest.approx(1.0, abs=1e-6)
        assert np.all(probs >= 0) and np.all(probs <= 1)
        # strict interior only where binary64 can represent it
        if logits.max() - logits.min() <= 30:
            assert np.all(probs > 0) and np.all(probs < 1)


class TestGlorotUniform:
    def test_dense_32_to_3_bound(self):
        rng = np.random.default_rng(0)
        a = np.sqrt(6.0 / 35.0)
        assert a == pytest.approx(0.4140, abs=5e-4)
        samples = nn.glorot_uniform((3, 32), 32, 3, rng)
        assert np.all(np.abs(samples) <= a)

    def test_same_seed_bit_identical(self):
        draw = lambda: nn.glorot_uniform(
            (4, 2, 3), 6, 12, np.random.default_rng(123)
        )
        np.testing.assert_array_equal(draw(), draw())

    def test_uniform_moments(self):
        rng = np.random.default_rng(99)
        fan_in, fan_out = 30, 40
        a = np.sqrt(6.0 / (fan_in + fan_out))
        samples = nn.glorot_uniform((100_000,), fan_in, fan_out, rng, dtype=np.float64)
        assert abs(samples.mean()) < 0.01
        expected_var = a * a / 3.0
        assert abs(samples.var() - expected_var) < 0.1 * expected_var

    def test_zero_fan_raises(self):
        with pytest.raises(DomainError):
            nn.glorot_uniform((2, 2), 0, 3, np.random.default_rng(0))


def adam_scalar_oracle(p0, grads, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
    """Independent scalar transcription of the bias-corrected recurrence."""
    p, m, v = p0, 0.0, 0.0
    history = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        p = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        history.append(p)
    return history


class TestAdam:
    def test_first_step_magnitude(self):
        params = {"p": np.array([0.0])}
        state = nn.AdamState()
        nn.adam_step(params, {"p": np.array([1.0])}, state)
        assert params["p"][0] == pytest.approx(-0.001, rel=1e-6)
        assert state.step_count == 1

    def test_zero_gradient_is_noop(self):
        params = {"p": np.array([1.5, -2.0])}
        before = params["p"].copy()
        nn.adam_step(params, {"p": np.zeros(2)}, nn.AdamState())
        np.testing.assert_array_equal(params["p"], before)

    def test_ten_constant_steps_match_scalar_oracle(self):
        params = {"p": np.array([0.0])}
        state = nn.AdamState()
        trajectory = []
        for _ in range(10):
            nn.adam_step(params, {"p": np.array([1.0])}, state)
            trajectory.append(float(params["p"][0]))
        expected = adam_scalar_oracle(0.0, [1.0] * 10)
        np.testing.assert_allclose(trajectory, expected, atol=1e-9)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ShapeError):
            nn.adam_step(
                {"p": np.zeros(3)}, {"p": np.zeros(4)}, nn.AdamState()
            )
