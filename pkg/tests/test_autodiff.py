import numpy as np
import pytest

from seqevade import autodiff as ad


def central_diff(f, x, i, step=1e-6):
    """Independent oracle: central finite difference on coordinate i."""
    flat = x.ravel()
    orig = flat[i]
    flat[i] = orig + step
    up = f(x)
    flat[i] = orig - step
    down = f(x)
    flat[i] = orig
    return (up - down) / (2.0 * step)


def test_softmax_uniform():
    out = ad.softmax(ad.constant([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, [1 / 3, 1 / 3, 1 / 3], rtol=0, atol=1e-15)


def test_sigmoid_zero():
    assert ad.sigmoid(ad.constant(0.0)).item() == 0.5


def test_matmul_identity():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 5))
    out = ad.matmul(ad.constant(np.eye(3)), ad.constant(a))
    assert np.array_equal(out.data, a)


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ValueError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        ad.matmul(ad.constant(np.zeros((2, 3))), ad.constant(np.zeros((2, 3))))


def test_log_nonpositive_rejected():
    with pytest.raises(ValueError, match="log"):
        ad.log(ad.constant([1.0, 0.0]))


def test_backward_elementwise_square():
    x = ad.parameter([1.0, 2.0, 3.0])
    loss = ad.reduce_sum(ad.mul(x, x))
    ad.backward(loss)
    np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])


def test_backward_constant_loss_leaves_no_grads():
    w = ad.parameter([1.0, 2.0])
    loss = ad.reduce_sum(ad.mul(ad.constant([3.0, 4.0]), ad.constant([1.0, 1.0])))
    ad.backward(loss)
    assert w.grad is None


def test_backward_log_sigmoid_matches_finite_difference():
    w = ad.parameter(0.0)
    loss = ad.log(ad.sigmoid(w))
    ad.backward(loss)

    def f(x):
        return float(np.log(1.0 / (1.0 + np.exp(-x))))

    numeric = central_diff(f, np.zeros(()), 0)
    assert abs(float(w.grad) - numeric) < 1e-8
    assert abs(float(w.grad) - 0.5) < 1e-10


def test_backward_requires_scalar_loss():
    x = ad.parameter([1.0, 2.0])
    with pytest.raises(ValueError, match="scalar"):
        ad.backward(ad.mul(x, x))


def test_softmax_rows_sum_to_one_and_shift_invariance():
    rng = np.random.default_rng(7)
    for _ in range(50):
        x = rng.standard_normal((4, 6)) * rng.uniform(0.1, 30)
        out = ad.softmax(ad.constant(x)).data
        assert np.all(out > 0)
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, rtol=0, atol=1e-12)
        shifted = ad.softmax(ad.constant(x + rng.uniform(-5, 5))).data
        np.testing.assert_allclose(shifted, out, rtol=0, atol=1e-12)


def _loss_builders(rng):
    """One scalar loss per primitive, over random parameter tensors."""
    r = ad.constant(rng.standard_normal((3, 4)))

    def weighted(t):
        return ad.reduce_sum(ad.mul(t, r))

    a = ad.parameter(rng.standard_normal((3, 4)))
    b = ad.parameter(rng.standard_normal((3, 4)))
    bias = ad.parameter(rng.standard_normal(4))
    col = ad.parameter(rng.standard_normal((3, 1)))
    m1 = ad.parameter(rng.standard_normal((3, 5)))
    m2 = ad.parameter(rng.standard_normal((5, 4)))
    pos = ad.parameter(rng.uniform(0.5, 2.0, (3, 4)))
    r8 = ad.constant(rng.standard_normal((3, 8)))
    r5 = ad.constant(rng.standard_normal((3, 5)))
    builders = {
        "add": ({"a": a, "b": b}, lambda: weighted(ad.add(a, b))),
        "add_bias": ({"a": a, "bias": bias}, lambda: weighted(ad.add(a, bias))),
        "sub": ({"a": a, "b": b}, lambda: weighted(ad.sub(a, b))),
        "neg": ({"a": a}, lambda: weighted(ad.neg(a))),
        "mul": ({"a": a, "b": b}, lambda: weighted(ad.mul(a, b))),
        "mul_col": ({"a": a, "col": col}, lambda: weighted(ad.mul(a, col))),
        "matmul": ({"m1": m1, "m2": m2}, lambda: weighted(ad.matmul(m1, m2))),
        "tanh": ({"a": a}, lambda: weighted(ad.tanh(a))),
        "sigmoid": ({"a": a}, lambda: weighted(ad.sigmoid(a))),
        "exp": ({"a": a}, lambda: weighted(ad.exp(a))),
        "log": ({"pos": pos}, lambda: weighted(ad.log(pos))),
        "reciprocal": ({"pos": pos}, lambda: weighted(ad.reciprocal(pos))),
        "softmax": ({"a": a}, lambda: weighted(ad.softmax(a))),
        "sum_axis": ({"a": a}, lambda: ad.reduce_sum(ad.mul(ad.reduce_sum(a, axis=1, keepdims=True), col))),
        "mean": ({"a": a}, lambda: ad.reduce_mean(ad.mul(a, r))),
        "concat": ({"a": a, "b": b}, lambda: ad.reduce_sum(ad.mul(ad.concat([a, b], axis=1), r8))),
        "narrow": ({"a": a}, lambda: weighted(ad.concat([ad.narrow(a, 1, 1, 2), ad.narrow(a, 1, 0, 2)], axis=1))),
        "gather": ({"m1": m1}, lambda: ad.reduce_sum(ad.mul(ad.gather_rows(m1, np.array([2, 0, 2])), r5))),
        "where": ({"a": a, "b": b}, lambda: weighted(ad.where_mask(np.array([[True], [False], [True]]), a, b))),
        "stack_reverse": (
            {"a": a, "b": b},
            lambda: ad.reduce_sum(
                ad.mul(
                    ad.step_slice(ad.reverse_steps(ad.stack_steps([a, b]), np.array([2, 1, 2])), 0),
                    r,
                )
            ),
        ),
        "clip": ({"a": a}, lambda: weighted(ad.clip(a, -0.75, 0.75))),
    }
    return builders


@pytest.mark.parametrize("seed", range(100))
def test_primitive_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    builders = _loss_builders(rng)
    for name, (params, build) in builders.items():
        report = ad.grad_check(build, params, step=1e-5, tol=1e-4)
        assert report.passed, f"{name} (seed {seed}): {report.failures[:3]}"


def test_grad_check_quadratic_form_tight():
    rng = np.random.default_rng(3)
    q = ad.constant(rng.standard_normal((4, 4)))
    x = ad.parameter(rng.standard_normal((1, 4)))

    def build():
        return ad.reduce_sum(ad.mul(ad.matmul(x, q), x))

    report = ad.grad_check(build, {"x": x}, step=1e-5, tol=1e-4)
    assert report.passed
    assert report.max_rel_error < 1e-7


def test_grad_check_flags_wrong_backward_rule():
    x = ad.parameter([1.5, -0.5])

    def bad_square(t):
        # deliberately wrong derivative: claims d(x^2)/dx = 3x
        def vjp(g):
            t.grad = (t.grad if t.grad is not None else 0) + g * 3.0 * t.data

        return ad.Tensor(t.data * t.data, parents=(t,), vjp=vjp)

    def build():
        return ad.reduce_sum(bad_square(x))

    report = ad.grad_check(build, {"x": x}, step=1e-5, tol=1e-4)
    assert not report.passed


def test_forward_and_gradients_deterministic():
    def run():
        rng = np.random.default_rng(42)
        w = ad.parameter(rng.standard_normal((4, 4)))
        x = ad.constant(rng.standard_normal((2, 4)))
        loss = ad.reduce_mean(ad.tanh(ad.matmul(x, w)))
        ad.backward(loss)
        return loss.item(), w.grad.copy()

    l1, g1 = run()
    l2, g2 = run()
    assert l1 == l2
    assert np.array_equal(g1, g2)


def test_two_backward_passes_on_one_graph_are_independent():
    w = ad.parameter([1.0, 2.0])
    u = ad.mul(w, w)
    loss_a = ad.reduce_sum(u)
    loss_b = ad.reduce_sum(ad.mul(u, ad.constant([3.0, 3.0])))
    ad.backward(loss_a)
    grad_a = w.grad.copy()
    ad.backward(loss_b)
    np.testing.assert_array_equal(grad_a, [2.0, 4.0])
    np.testing.assert_array_equal(w.grad, [6.0, 12.0])


def test_matmul_batched_rows_match_single_rows():
    # the bit-exactness guarantee masked batching is built on
    rng = np.random.default_rng(11)
    for _ in range(20):
        B = int(rng.integers(2, 40))
        X = rng.standard_normal((B, int(rng.integers(1, 64))))
        W = rng.standard_normal((X.shape[1], int(rng.integers(1, 64))))
        full = ad.matmul(ad.constant(X), ad.constant(W)).data
        for i in range(B):
            row = ad.matmul(ad.constant(X[i : i + 1]), ad.constant(W)).data
            assert np.array_equal(full[i : i + 1], row)
