"""Oracle tests for the dense kernels and their hand-written gradients.

Every backward pass is checked against central finite differences; the
optimizer step is checked against a hand-computed closed form.
"""

import numpy as np
import pytest

from kgmtl.numerics import (
    NumericError,
    Param,
    ParamStore,
    Rng,
    affine,
    affine_backward,
    bilinear_slices,
    bilinear_slices_backward,
    concat,
    concat_backward,
    dropout,
    dropout_backward,
    gather,
    gather_backward,
    grad_check,
    hadamard,
    hadamard_backward,
    project_norm,
    sigmoid,
    sigmoid_backward,
    tanh,
    tanh_backward,
)


def fd_grad(f, x, h=1e-6):
    """Central-difference gradient of scalar f at x, one coordinate at a time."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        fp = f(x)
        x[idx] = orig - h
        fm = f(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * h)
        it.iternext()
    return g


class TestRng:
    def test_same_seed_and_tag_reproduce(self):
        """Streams with identical coordinates yield identical draws."""
        a = Rng(7).stream("x").random(5)
        b = Rng(7).stream("x").random(5)
        np.testing.assert_array_equal(a, b)

    def test_tags_decorrelate(self):
        a = Rng(7).stream("x").random(5)
        b = Rng(7).stream("y").random(5)
        assert not np.array_equal(a, b)

    def test_epochs_decorrelate(self):
        a = Rng(7).stream("x", epoch=0).random(5)
        b = Rng(7).stream("x", epoch=1).random(5)
        assert not np.array_equal(a, b)

    def test_seeds_decorrelate(self):
        a = Rng(7).stream("x").random(5)
        b = Rng(8).stream("x").random(5)
        assert not np.array_equal(a, b)

    def test_stream_is_order_free(self):
        """Requesting streams in a different order does not change draws."""
        r1 = Rng(3)
        xa = r1.stream("a").random(3)
        xb = r1.stream("b").random(3)
        r2 = Rng(3)
        yb = r2.stream("b").random(3)
        ya = r2.stream("a").random(3)
        np.testing.assert_array_equal(xa, ya)
        np.testing.assert_array_equal(xb, yb)


class TestGather:
    def test_values(self):
        table = np.arange(12.0).reshape(4, 3)
        out = gather(table, np.array([2, 0, 2]))
        np.testing.assert_array_equal(out, table[[2, 0, 2]])

    def test_duplicate_ids_accumulate(self):
        """Rows gathered twice receive the sum of both output gradients."""
        g = np.array([[1.0, 0.0], [2.0, 2.0], [4.0, 1.0]])
        dt = gather_backward(g, (3, 2), np.array([1, 1, 0]))
        expected = np.array([[4.0, 1.0], [3.0, 2.0], [0.0, 0.0]])
        np.testing.assert_array_equal(dt, expected)

    def test_out_of_range_raises(self):
        with pytest.raises(IndexError):
            gather(np.zeros((2, 2)), np.array([2]))

    def test_backward_matches_fd(self):
        gen = np.random.default_rng(42)
        table = gen.normal(size=(5, 3))
        ids = np.array([1, 4, 1, 0])
        w = gen.normal(size=(4, 3))

        def loss(t):
            return float(np.sum(gather(t, ids) * w))

        analytic = gather_backward(w, table.shape, ids)
        np.testing.assert_allclose(analytic, fd_grad(loss, table), rtol=0, atol=1e-6)


class TestAffine:
    def test_arithmetic(self):
        out = affine(np.array([[1.0, 2.0]]), np.array([[1.0], [1.0]]), np.array([1.0]))
        np.testing.assert_array_equal(out, [[4.0]])

    def test_backward_matches_fd(self):
        gen = np.random.default_rng(0)
        x = gen.normal(size=(4, 3))
        W = gen.normal(size=(3, 2))
        b = gen.normal(size=2)
        g = gen.normal(size=(4, 2))

        dx, dW, db = affine_backward(g, x, W)
        np.testing.assert_allclose(dx, fd_grad(lambda v: float(np.sum(affine(v, W, b) * g)), x), atol=1e-6)
        np.testing.assert_allclose(dW, fd_grad(lambda v: float(np.sum(affine(x, v, b) * g)), W), atol=1e-6)
        np.testing.assert_allclose(db, fd_grad(lambda v: float(np.sum(affine(x, W, v) * g)), b), atol=1e-6)


class TestActivations:
    def test_sigmoid_values(self):
        np.testing.assert_allclose(sigmoid(np.array([0.0])), [0.5])
        np.testing.assert_allclose(sigmoid(np.array([-800.0, 800.0])), [0.0, 1.0], atol=1e-300)

    def test_sigmoid_backward_matches_fd(self):
        gen = np.random.default_rng(1)
        x = gen.normal(size=(3, 4))
        g = gen.normal(size=(3, 4))
        analytic = sigmoid_backward(g, sigmoid(x))
        np.testing.assert_allclose(analytic, fd_grad(lambda v: float(np.sum(sigmoid(v) * g)), x), atol=1e-6)

    def test_tanh_backward_matches_fd(self):
        gen = np.random.default_rng(2)
        x = gen.normal(size=(3, 4))
        g = gen.normal(size=(3, 4))
        analytic = tanh_backward(g, tanh(x))
        np.testing.assert_allclose(analytic, fd_grad(lambda v: float(np.sum(tanh(v) * g)), x), atol=1e-6)


class TestConcatHadamard:
    def test_concat_round_trip(self):
        gen = np.random.default_rng(3)
        xs = [gen.normal(size=(2, w)) for w in (3, 1, 4)]
        out = concat(xs)
        assert out.shape == (2, 8)
        parts = concat_backward(out, [3, 1, 4])
        for p, x in zip(parts, xs):
            np.testing.assert_array_equal(p, x)

    def test_hadamard_backward_matches_fd(self):
        gen = np.random.default_rng(4)
        a = gen.normal(size=(3, 5))
        b = gen.normal(size=(3, 5))
        g = gen.normal(size=(3, 5))
        da, db = hadamard_backward(g, a, b)
        np.testing.assert_allclose(da, fd_grad(lambda v: float(np.sum(hadamard(v, b) * g)), a), atol=1e-6)
        np.testing.assert_allclose(db, fd_grad(lambda v: float(np.sum(hadamard(a, v) * g)), b), atol=1e-6)


class TestBilinearSlices:
    def test_identity_slices_give_dot_products(self):
        T = np.stack([np.eye(3)] * 2, axis=2)
        e1 = np.array([[1.0, 2.0, 3.0]])
        e2 = np.array([[4.0, 5.0, 6.0]])
        out = bilinear_slices(e1, T, e2)
        np.testing.assert_allclose(out, [[32.0, 32.0]])

    def test_backward_matches_fd(self):
        gen = np.random.default_rng(5)
        e1 = gen.normal(size=(3, 4))
        e2 = gen.normal(size=(3, 4))
        T = gen.normal(size=(4, 4, 2))
        g = gen.normal(size=(3, 2))

        d1, dT, d2 = bilinear_slices_backward(g, e1, T, e2)
        np.testing.assert_allclose(d1, fd_grad(lambda v: float(np.sum(bilinear_slices(v, T, e2) * g)), e1), atol=1e-6)
        np.testing.assert_allclose(d2, fd_grad(lambda v: float(np.sum(bilinear_slices(e1, T, v) * g)), e2), atol=1e-6)
        np.testing.assert_allclose(dT, fd_grad(lambda v: float(np.sum(bilinear_slices(e1, v, e2) * g)), T), atol=1e-6)


class TestDropout:
    def test_rate_zero_is_identity(self):
        x = np.random.default_rng(6).normal(size=(4, 4))
        out, mask = dropout(x, 0.0, np.random.default_rng(0), training=True)
        np.testing.assert_array_equal(out, x)

    def test_eval_mode_is_identity(self):
        x = np.random.default_rng(7).normal(size=(4, 4))
        out, mask = dropout(x, 0.5, np.random.default_rng(0), training=False)
        np.testing.assert_array_equal(out, x)
        assert mask is None

    def test_survivors_scaled_and_half_kept(self):
        """Kept units are scaled by 1/(1-rate); about half survive."""
        x = np.ones((1, 100_000))
        out, mask = dropout(x, 0.5, np.random.default_rng(8), training=True)
        kept = out != 0
        assert abs(kept.mean() - 0.5) < 0.01
        np.testing.assert_allclose(out[kept], 2.0)

    def test_backward_reuses_mask(self):
        x = np.ones((2, 50))
        g = np.full((2, 50), 3.0)
        out, mask = dropout(x, 0.5, np.random.default_rng(9), training=True)
        dx = dropout_backward(g, mask)
        np.testing.assert_array_equal(dx != 0, out != 0)
        np.testing.assert_allclose(dx[dx != 0], 6.0)


class TestAdam:
    def test_first_step_closed_form(self):
        """With bias correction, the first step moves by about -lr * sign(g)."""
        store = ParamStore()
        store.add("w", np.zeros(3))
        store["w"].grad[:] = np.array([1.0, -2.0, 0.5])
        store.adam_step(lr=1e-3)
        # mhat = g, vhat = g^2, so the update is -lr * g / (|g| + eps)
        g = np.array([1.0, -2.0, 0.5])
        expected = -1e-3 * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(store.value("w"), expected, atol=1e-12)

    def test_two_steps_match_reference_recurrence(self):
        """Two optimizer steps equal a literal transcription of the update rule."""
        store = ParamStore()
        store.add("w", np.array([0.3, -0.1]))
        grads = [np.array([0.5, 1.5]), np.array([-0.25, 2.0])]

        w = np.array([0.3, -0.1])
        m = np.zeros(2)
        v = np.zeros(2)
        lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
        for t, g in enumerate(grads, start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            w = w - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)

        for g in grads:
            store["w"].grad[:] = g
            store.adam_step(lr=lr, beta1=b1, beta2=b2, eps=eps)
        np.testing.assert_allclose(store.value("w"), w, atol=1e-15)

    def test_zero_grad_leaves_param_unchanged(self):
        store = ParamStore()
        store.add("w", np.array([1.0, 2.0]))
        store.adam_step()
        np.testing.assert_array_equal(store.value("w"), [1.0, 2.0])

    def test_step_counter_shared_across_groups(self):
        """Stepping a subset still advances the single global step counter."""
        store = ParamStore()
        store.add("a", np.zeros(1))
        store.add("b", np.zeros(1))
        store["a"].grad[:] = 1.0
        store.adam_step(pids=["a"])
        assert store.step == 1
        store["b"].grad[:] = 1.0
        store.adam_step(pids=["b"])
        assert store.step == 2

    def test_grads_cleared_after_step(self):
        store = ParamStore()
        store.add("w", np.zeros(2))
        store["w"].grad[:] = 1.0
        store.adam_step()
        np.testing.assert_array_equal(store["w"].grad, 0.0)

    def test_nonfinite_grad_raises_with_param_name(self):
        store = ParamStore()
        store.add("emb/entity", np.zeros(2))
        store["emb/entity"].grad[:] = np.array([1.0, np.nan])
        with pytest.raises(NumericError, match="emb/entity"):
            store.adam_step()


class TestProjectNorm:
    def test_vector_rescaled_to_unit(self):
        v = np.array([3.0, 4.0])
        project_norm(v, 1.0)
        np.testing.assert_allclose(v, [0.6, 0.8])

    def test_rows_within_bound_untouched(self):
        x = np.array([[0.1, 0.2], [3.0, 4.0]])
        project_norm(x, 1.0)
        np.testing.assert_allclose(x, [[0.1, 0.2], [0.6, 0.8]])

    def test_idempotent(self):
        gen = np.random.default_rng(10)
        x = gen.normal(size=(6, 4)) * 10
        project_norm(x, 1.0)
        y = x.copy()
        project_norm(x, 1.0)
        np.testing.assert_array_equal(x, y)

    def test_matrix_stack_uses_frobenius_norm(self):
        """A [R, n, n] stack is bounded per slice by its Frobenius norm."""
        x = np.full((2, 3, 3), 5.0)
        project_norm(x, 3.0)
        norms = np.sqrt((x**2).sum(axis=(1, 2)))
        np.testing.assert_allclose(norms, 3.0)


class TestGradCheck:
    def _mlp_store(self):
        gen = np.random.default_rng(11)
        store = ParamStore()
        store.add("W", gen.normal(size=(3, 2)))
        store.add("b", gen.normal(size=2))
        x = gen.normal(size=(5, 3))
        y = gen.normal(size=(5, 2))
        return store, x, y

    def test_correct_gradient_passes(self):
        store, x, y = self._mlp_store()

        def loss():
            h = tanh(affine(x, store.value("W"), store.value("b")))
            diff = h - y
            val = float(np.mean(diff**2))
            g = 2 * diff / diff.size
            gx = tanh_backward(g, h)
            _, dW, db = affine_backward(gx, x, store.value("W"))
            store["W"].grad += dW
            store["b"].grad += db
            return val

        assert grad_check(loss, store) < 1e-6

    def test_corrupted_gradient_fails(self):
        """A deliberately wrong backward pass must produce a large error."""
        store, x, y = self._mlp_store()

        def loss():
            h = tanh(affine(x, store.value("W"), store.value("b")))
            diff = h - y
            val = float(np.mean(diff**2))
            g = 2 * diff / diff.size
            gx = tanh_backward(g, h)
            _, dW, db = affine_backward(gx, x, store.value("W"))
            store["W"].grad += 1.5 * dW  # wrong scale
            store["b"].grad += db
            return val

        assert grad_check(loss, store, pids=["W"]) > 1e-2

    def test_restores_parameter_values(self):
        store, x, y = self._mlp_store()
        before = store.value("W").copy()

        def loss():
            w = store.value("W")
            store["W"].grad += 2 * w
            return float(np.sum(w**2))

        grad_check(loss, store, pids=["W"])
        np.testing.assert_array_equal(store.value("W"), before)
