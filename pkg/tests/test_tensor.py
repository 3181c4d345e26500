import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imagechat import tensor as T
from imagechat.optim import Adam, grad_check
from imagechat.params import ParameterStore
from imagechat.tensor import NonFiniteError, ShapeError, Tensor, apply


class TestApply:
    def test_matmul_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        eye = Tensor(np.eye(2, dtype=np.float32))
        out = apply("matmul", [a, eye])
        assert np.array_equal(out.data, a.data)

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ShapeError):
            apply("matmul", [Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3)))])

    def test_softmax_symmetry(self):
        out = apply("softmax_lastdim", [Tensor([0.0, 0.0, 0.0])])
        assert np.allclose(out.data, [1 / 3, 1 / 3, 1 / 3])

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        out = apply("softmax_lastdim", [Tensor(rng.normal(size=(4, 7)))])
        assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-6)

    def test_dot(self):
        out = apply("dot", [Tensor([1.0, 0.0, 2.0]), Tensor([3.0, 5.0, 4.0])])
        assert out.item() == 11.0

    def test_all_masked_pool_is_an_error(self):
        x = Tensor(np.ones((1, 3, 4)))
        with pytest.raises(ShapeError):
            apply("masked_mean_pool", [x, np.zeros((1, 3))])

    def test_nonfinite_input_rejected(self):
        with pytest.raises(NonFiniteError):
            Tensor([np.inf, 1.0])

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            apply("conv2d", [Tensor([1.0])])


class TestBackward:
    def test_analytic_square(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = T.tsum(T.mul(x, x))
        loss.backward()
        assert np.allclose(x.grad, [2.0, 4.0])

    def test_unreachable_param_gets_zero(self):
        store = ParameterStore(seed=0)
        used = store.add("used", (3,))
        store.add("unused", (3,))
        loss = T.tsum(T.mul(used, used))
        loss.backward()
        grads = store.gradients()
        assert np.allclose(grads["unused"], 0.0)
        assert np.any(grads["used"] != 0.0)

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ShapeError):
            T.mul(x, x).backward()

    def test_two_layer_net_matches_finite_differences(self):
        # relative error <= 1e-4 in 32-bit, 1e-6 in 64-bit
        for dtype, eps, tol in ((np.float32, 1e-3, 1e-4),
                                (np.float64, 1e-5, 1e-6)):
            store = ParameterStore(seed=5, dtype=dtype)
            w1 = store.add("w1", (4, 8))
            b1 = store.add("b1", (8,), init="zeros")
            w2 = store.add("w2", (8, 2))
            x = T.constant(np.random.default_rng(0).normal(size=(3, 4)),
                           dtype=dtype)
            y = T.constant(np.random.default_rng(1).normal(size=(3, 2)),
                           dtype=dtype)

            def model_fn(s):
                h = T.relu(T.add(T.matmul(x, w1), b1))
                d = T.add(T.matmul(h, w2), T.scale(y, -1.0))
                return T.tmean(T.mul(d, d))

            err = grad_check(model_fn, store, eps=eps)
            assert err <= tol, f"{dtype}: {err}"


class TestGradCheck:
    def test_linear_model_exact(self):
        store = ParameterStore(seed=0, dtype=np.float64)
        w = store.add("w", (1,), init="zeros")
        w.data[:] = 3.0

        def model_fn(s):
            return T.tsum(T.scale(w, 2.0))

        assert grad_check(model_fn, store, eps=1e-6) < 1e-6

    def test_constant_function_zero_error(self):
        store = ParameterStore(seed=0, dtype=np.float64)
        store.add("w", (2,))

        def model_fn(s):
            return T.tsum(T.constant([1.0], dtype=np.float64))

        assert grad_check(model_fn, store, eps=1e-6) == 0.0

    def test_nonfinite_intermediate_raises(self):
        x = Tensor([1.0], requires_grad=True)
        with pytest.raises(NonFiniteError):
            T.div(x, T.constant([0.0]))


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        store = ParameterStore(seed=0)
        w = store.add("w", (3,))
        before = w.data.copy()
        Adam(store, lr=0.01).step()  # no grads set -> zeros
        assert np.array_equal(w.data, before)

    def test_quadratic_converges_to_argmin(self):
        # loss = (w - 0.5)^2, argmin at 0.5
        store = ParameterStore(seed=0)
        w = store.add("w", (1,), init="zeros")
        opt = Adam(store, lr=0.01)
        for _ in range(200):
            store.zero_grad()
            d = T.add(w, T.constant([-0.5]))
            loss = T.tsum(T.mul(d, d))
            loss.backward()
            opt.step()
        assert abs(float(w.data[0]) - 0.5) < 1e-2

    def test_determinism_bitwise(self):
        def run():
            store = ParameterStore(seed=7)
            w = store.add("w", (4,))
            opt = Adam(store, lr=0.01)
            for _ in range(10):
                store.zero_grad()
                loss = T.tsum(T.mul(w, w))
                loss.backward()
                opt.step()
            return w.data.copy()

        assert np.array_equal(run(), run())

    def test_lr_must_be_positive(self):
        with pytest.raises(ValueError):
            Adam(ParameterStore(seed=0), lr=0.0)

    def test_step_count_increments(self):
        store = ParameterStore(seed=0)
        store.add("w", (2,))
        opt = Adam(store, lr=0.01)
        opt.step()
        opt.step()
        assert opt.step_count == 2


class TestProperties:
    @settings(max_examples=50, deadline=None)
    @given(st.floats(min_value=-50, max_value=50),
           st.lists(st.floats(min_value=-20, max_value=20),
                    min_size=2, max_size=8))
    def test_softmax_shift_invariance(self, c, xs):
        x = np.array(xs, dtype=np.float64)
        a = T.softmax_lastdim(Tensor(x)).data
        b = T.softmax_lastdim(Tensor(x + c)).data
        assert np.allclose(a, b, atol=1e-6)

    def test_masked_pool_ignores_masked_positions(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 3, 5)).astype(np.float32)
        pad = rng.normal(size=(2, 2, 5)).astype(np.float32)
        full = np.concatenate([x, pad], axis=1)
        m_small = np.ones((2, 3), dtype=np.float32)
        m_full = np.concatenate([m_small, np.zeros((2, 2), dtype=np.float32)],
                                axis=1)
        a = T.masked_mean_pool(Tensor(x), m_small).data
        b = T.masked_mean_pool(Tensor(full), m_full).data
        assert np.allclose(a, b)

    def test_seeded_init_is_identical(self):
        a = ParameterStore(seed=11).add("w", (5, 5)).data
        b = ParameterStore(seed=11).add("w", (5, 5)).data
        assert np.array_equal(a, b)
