"""Numeric core against hand-rolled oracles and finite differences."""
import numpy as np
import pytest

from blendcnn.numerics import (
    AdamConfig,
    NonFiniteError,
    Parameter,
    adam_step,
    affine,
    affine_backward,
    conv1d,
    conv1d_backward,
    cross_entropy,
    cross_entropy_backward,
    global_max_pool,
    grad_check,
    mae_loss,
    mae_loss_backward,
    masked_max_pool,
    max_pool_backward,
    relu,
    relu_backward,
    require_finite,
    softmax,
)


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum.reduce([np.abs(a), np.abs(b),
                                                      np.full_like(a, 1e-8)]))


def fd_grad(f, x, h=1e-6):
    """Central differences on a flat view of x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = f()
        flat[i] = keep - h
        down = f()
        flat[i] = keep
        gf[i] = (up - down) / (2 * h)
    return g


class TestAffine:
    def test_hand_example(self):
        x = np.array([[1.0, 2.0]])
        w = np.array([[1.0, 0.0, -1.0], [0.0, 2.0, 1.0]])
        b = np.array([0.5, 0.0, 0.0])
        np.testing.assert_allclose(affine(x, w, b), [[1.5, 4.0, 1.0]])

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        for trial in range(25):
            n, d_in, d_out = rng.integers(1, 9), rng.integers(1, 7), rng.integers(1, 40)
            x = rng.normal(size=(n, d_in))
            w = rng.normal(size=(d_in, d_out))
            b = rng.normal(size=d_out)
            want = np.empty((n, d_out))
            for i in range(n):
                for o in range(d_out):
                    acc = b[o]
                    for j in range(d_in):
                        acc += x[i, j] * w[j, o]
                    want[i, o] = acc
            assert rel_err(affine(x, w, b), want) < 1e-12

    def test_identical_rows_stay_identical(self):
        # narrow output heads must not depend on where a row sits in the batch
        rng = np.random.default_rng(1)
        x = rng.normal(size=(1, 100))
        w = rng.normal(size=(100, 4))
        b = rng.normal(size=4)
        single = affine(x, w, b)[0]
        for n in (2, 5, 7, 17, 33):
            out = affine(np.repeat(x, n, axis=0), w, b)
            for row in out:
                assert np.array_equal(row, single)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError, match="affine"):
            affine(np.zeros((2, 3)), np.zeros((4, 5)), np.zeros(5))

    def test_backward_matches_fd(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(3, 4))
        w = rng.normal(size=(4, 5))
        b = rng.normal(size=5)
        dout = rng.normal(size=(3, 5))
        dx, dw, db = affine_backward(x, w, dout)
        loss = lambda: float(np.sum(affine(x, w, b) * dout))
        assert rel_err(dx, fd_grad(loss, x)) < 1e-5
        assert rel_err(dw, fd_grad(loss, w)) < 1e-5
        assert rel_err(db, fd_grad(loss, b)) < 1e-5


class TestConv1d:
    def test_edge_padding_example(self):
        x = np.array([[1.0], [2.0], [3.0], [4.0]])
        k = np.array([1.0, 0.0, -1.0]).reshape(3, 1, 1)
        out = conv1d(x, k, np.zeros(1))
        np.testing.assert_allclose(out, [[-2.0], [-2.0], [-2.0], [3.0]])

    def test_width1_identity(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(6, 4))
        k = np.eye(4).reshape(1, 4, 4)
        np.testing.assert_array_equal(conv1d(x, k, np.zeros(4)), x)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(4)
        for trial in range(20):
            length = int(rng.integers(2, 9))
            c_in = int(rng.integers(1, 4))
            c_out = int(rng.integers(1, 4))
            width = int(rng.choice([1, 3, 5]))
            x = rng.normal(size=(length, c_in))
            k = rng.normal(size=(width, c_in, c_out))
            b = rng.normal(size=c_out)
            half = (width - 1) // 2
            want = np.empty((length, c_out))
            for t in range(length):
                for o in range(c_out):
                    acc = b[o]
                    for kk in range(width):
                        src = t + kk - half
                        if 0 <= src < length:
                            for c in range(c_in):
                                acc += x[src, c] * k[kk, c, o]
                    want[t, o] = acc
            assert rel_err(conv1d(x, k, b), want) < 1e-12

    def test_even_width_rejected(self):
        with pytest.raises(ValueError):
            conv1d(np.zeros((4, 1)), np.zeros((2, 1, 1)), np.zeros(1))

    def test_batched_matches_single(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(3, 8, 2))
        k = rng.normal(size=(5, 2, 3))
        b = rng.normal(size=3)
        batched = conv1d(x, k, b)
        for i in range(3):
            np.testing.assert_allclose(batched[i], conv1d(x[i], k, b), rtol=1e-12)

    def test_backward_matches_fd(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(2, 6, 3))
        k = rng.normal(size=(3, 3, 2))
        b = rng.normal(size=2)
        dout = rng.normal(size=(2, 6, 2))
        dx, dk, db = conv1d_backward(x, k, dout)
        loss = lambda: float(np.sum(conv1d(x, k, b) * dout))
        assert rel_err(dx, fd_grad(loss, x)) < 1e-5
        assert rel_err(dk, fd_grad(loss, k)) < 1e-5
        assert rel_err(db, fd_grad(loss, b)) < 1e-5


class TestReluAndPool:
    def test_relu_basics(self):
        x = np.array([-1.0, 0.0, 2.0])
        np.testing.assert_array_equal(relu(x), [0.0, 0.0, 2.0])
        dout = np.array([5.0, 5.0, 5.0])
        np.testing.assert_array_equal(relu_backward(x, dout), [0.0, 0.0, 5.0])

    def test_global_max_pool_masks_tail(self):
        x = np.array([[1.0, 5.0], [3.0, 2.0], [9.0, 9.0]])
        np.testing.assert_array_equal(global_max_pool(x, 2), [3.0, 5.0])
        np.testing.assert_array_equal(global_max_pool(x, 3), [9.0, 9.0])

    def test_pool_order_invariance_full_length(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(9, 4))
        shuffled = x[rng.permutation(9)]
        np.testing.assert_array_equal(global_max_pool(x, 9), global_max_pool(shuffled, 9))

    def test_zero_valid_len_rejected(self):
        with pytest.raises(ValueError):
            global_max_pool(np.zeros((3, 2)), 0)

    def test_masked_pool_matches_per_example(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(4, 7, 3))
        lens = np.array([1, 3, 7, 5])
        pooled, argmax = masked_max_pool(x, lens)
        for i in range(4):
            np.testing.assert_array_equal(pooled[i], global_max_pool(x[i], lens[i]))
            # argmax points at the winning row
            np.testing.assert_array_equal(x[i, argmax[i], np.arange(3)], pooled[i])

    def test_pool_backward_scatters_to_argmax(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(2, 5, 3))
        lens = np.array([4, 5])
        pooled, argmax = masked_max_pool(x, lens)
        dout = rng.normal(size=(2, 3))
        dx = max_pool_backward(argmax, 5, dout)
        assert dx.shape == x.shape
        fd = fd_grad(lambda: float(np.sum(masked_max_pool(x, lens)[0] * dout)), x)
        assert rel_err(dx, fd) < 1e-5


class TestSoftmaxAndLosses:
    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(10)
        p = softmax(rng.normal(size=(6, 5)))
        np.testing.assert_allclose(p.sum(axis=1), np.ones(6), atol=1e-12)
        assert np.all(p > 0)

    def test_softmax_handles_large_logits(self):
        p = softmax(np.array([[1000.0, 1000.0, -1000.0]]))
        np.testing.assert_allclose(p, [[0.5, 0.5, 0.0]], atol=1e-12)

    def test_softmax_matches_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            z = rng.normal(size=(3, 4)) * rng.uniform(0.1, 30)
            shifted = z - z.max(axis=1, keepdims=True)
            want = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
            assert rel_err(softmax(z), want) < 1e-12

    def test_cross_entropy_uniform_two_way(self):
        assert cross_entropy(np.array([[0.0, 0.0]]), np.array([0])) == pytest.approx(
            np.log(2.0), rel=1e-12
        )

    def test_cross_entropy_matches_oracle(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            z = rng.normal(size=(5, 3))
            y = rng.integers(0, 3, size=5)
            per = []
            for i in range(5):
                m = z[i].max()
                per.append(np.log(np.exp(z[i] - m).sum()) + m - z[i, y[i]])
            assert rel_err(np.array([cross_entropy(z, y)]),
                           np.array([np.mean(per)])) < 1e-12

    def test_cross_entropy_label_range_checked(self):
        with pytest.raises(ValueError):
            cross_entropy(np.zeros((2, 3)), np.array([0, 3]))

    def test_cross_entropy_backward_matches_fd(self):
        rng = np.random.default_rng(13)
        z = rng.normal(size=(4, 3))
        y = rng.integers(0, 3, size=4)
        dz = cross_entropy_backward(z, y)
        fd = fd_grad(lambda: cross_entropy(z, y), z)
        assert rel_err(dz, fd) < 1e-5

    def test_mae_hand_example(self):
        s = np.array([[1.0, 2.0]])
        t = np.array([[0.0, 4.0]])
        assert mae_loss(s, t) == pytest.approx(1.5, rel=1e-12)

    def test_mae_backward_matches_fd(self):
        rng = np.random.default_rng(14)
        s = rng.normal(size=(3, 4))
        t = s + np.where(rng.normal(size=(3, 4)) > 0, 0.5, -0.5)  # stay off the kink
        ds = mae_loss_backward(s, t)
        fd = fd_grad(lambda: mae_loss(s, t), s)
        assert rel_err(ds, fd) < 1e-5

    def test_mae_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            mae_loss(np.zeros((2, 3)), np.zeros((3, 2)))


class TestAdam:
    def test_matches_scalar_recurrence(self):
        rng = np.random.default_rng(15)
        cfg = AdamConfig(lr=1e-3)
        p = Parameter("w", np.array([0.3]))
        # reference: textbook update tracked step by step in plain python
        m = v = 0.0
        x = 0.3
        for t in range(1, 51):
            g = float(rng.normal())
            p.grad[:] = g
            adam_step(p, cfg)
            m = cfg.beta1 * m + (1 - cfg.beta1) * g
            v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
            m_hat = m / (1 - cfg.beta1**t)
            v_hat = v / (1 - cfg.beta2**t)
            x -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
            assert rel_err(p.value, np.array([x])) < 1e-12

    def test_first_step_is_lr_sized(self):
        # bias correction makes the first update ~ -lr regardless of grad scale
        for scale in (1e-4, 1.0, 1e6):
            p = Parameter("w", np.zeros(1))
            p.grad[:] = scale
            adam_step(p, AdamConfig(lr=1e-3))
            assert abs(p.value[0] + 1e-3) < 1e-6

    def test_grad_cleared_after_step(self):
        p = Parameter("w", np.ones(3))
        p.grad[:] = 1.0
        adam_step(p, AdamConfig())
        np.testing.assert_array_equal(p.grad, np.zeros(3))

    def test_nonfinite_grad_rejected_by_name(self):
        p = Parameter("conv1.w", np.ones(2))
        p.grad[:] = [1.0, np.nan]
        with pytest.raises(NonFiniteError, match="conv1.w"):
            adam_step(p, AdamConfig())

    def test_lr_must_be_positive(self):
        with pytest.raises(ValueError):
            AdamConfig(lr=0.0)


class TestGradCheck:
    def test_correct_gradient_passes(self):
        rng = np.random.default_rng(16)
        a = Parameter("a", rng.normal(size=(3, 2)))
        target = rng.normal(size=(3, 2))

        def loss():
            diff = a.value - target
            a.grad[:] = 2 * diff
            return float(np.sum(diff**2))

        report = grad_check(loss, [a])
        assert report.passes(1e-6)
        assert report.max_rel_err < 1e-8

    def test_wrong_gradient_flagged_with_name(self):
        a = Parameter("good", np.array([1.0, 2.0]))
        b = Parameter("broken", np.array([3.0]))

        def loss():
            a.grad[:] = 2 * a.value
            b.grad[:] = 100.0  # should be 2*b
            return float(np.sum(a.value**2) + np.sum(b.value**2))

        report = grad_check(loss, [a, b])
        assert not report.passes(1e-4)
        assert report.worst_param == "broken"
        assert report.per_param["good"] < 1e-6


def test_require_finite():
    require_finite(np.ones(3), "x")
    with pytest.raises(NonFiniteError, match="bad"):
        require_finite(np.array([np.inf]), "bad")
