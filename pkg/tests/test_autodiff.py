import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jstn import autodiff as ad
from jstn.autodiff import DimensionError, ParameterError


def fd_check(build, shapes, seed=0, tol=1e-6, positive=False):
    """Compare backprop with central differences for a scalar-valued ``build(*nodes)``."""
    rng = np.random.default_rng(seed)
    params = []
    for shape in shapes:
        v = rng.uniform(0.2, 2.0, shape) if positive else rng.standard_normal(shape)
        params.append(ad.parameter(v))
    loss = build(*params)
    ad.backward(loss)
    worst = 0.0
    for p in params:
        num = ad.numeric_grad(lambda: build(*params).item(), p, h=1e-5)
        worst = max(worst, ad.relative_error(p.grad, num))
    assert worst <= tol, worst
    return worst


# -- matmul ------------------------------------------------------------------

def test_matmul_identity():
    M = np.array([[2.0, -1.0], [0.5, 3.0]])
    out = ad.matmul(ad.constant(np.eye(2)), ad.constant(M))
    np.testing.assert_array_equal(out.values, M)


def test_matmul_hand_example():
    out = ad.matmul(ad.constant([[1, 2], [3, 4]]), ad.constant([[1], [1]]))
    np.testing.assert_array_equal(out.values, [[3], [7]])


def test_matmul_gradient_fd():
    fd_check(lambda A, B: ad.sum(ad.matmul(A, B)), [(3, 4), (4, 2)])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 3))))


# -- add / broadcast -----------------------------------------------------------

def test_add_zero_identity():
    A = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(ad.add(ad.constant(A), ad.constant(np.zeros((2, 3)))).values, A)


def test_add_scalars():
    assert ad.add(ad.constant([[1.0]]), ad.constant([[2.0]])).item() == 3.0


def test_bias_broadcast_gradient_is_column_sum():
    x = ad.constant(np.arange(6.0).reshape(3, 2))
    b = ad.parameter(np.zeros((1, 2)))
    W = np.array([[1.0, -2.0], [0.5, 3.0], [2.0, 1.0]])
    loss = ad.sum(ad.mul(ad.add(x, b), ad.constant(W)))
    ad.backward(loss)
    np.testing.assert_allclose(b.grad, W.sum(axis=0, keepdims=True))
    fd_check(lambda b_: ad.sum(ad.mul(ad.add(x, b_), ad.constant(W))), [(1, 2)])


def test_add_incompatible_shapes():
    with pytest.raises(DimensionError):
        ad.add(ad.constant(np.ones((2, 3))), ad.constant(np.ones((3, 2))))


# -- elementwise ops -----------------------------------------------------------

def test_leaky_relu_values():
    assert ad.leaky_relu(ad.constant([[5.0]]), 0.01).item() == 5.0
    assert ad.leaky_relu(ad.constant([[-1.0]]), 0.01).item() == pytest.approx(-0.01, abs=0)


def test_leaky_relu_gradient_at_negative_input():
    x = ad.parameter([[-2.0]])
    ad.backward(ad.sum(ad.leaky_relu(x, 0.01)))
    num = ad.numeric_grad(lambda: ad.leaky_relu(x, 0.01).item(), x)
    assert x.grad[0, 0] == pytest.approx(0.01)
    assert num[0, 0] == pytest.approx(0.01, rel=1e-6)


@pytest.mark.parametrize("slope", [0.0, 1.0, -0.1])
def test_leaky_relu_rejects_bad_slope(slope):
    with pytest.raises(ParameterError):
        ad.leaky_relu(ad.constant([[1.0]]), slope)


def test_softmax_symmetric_logits():
    for T in (0.1, 1.0, 7.0):
        np.testing.assert_allclose(ad.softmax_rows_with_temperature(ad.constant([[0.0, 0.0]]), T).values, [[0.5, 0.5]])


def test_softmax_temperature_worked_value():
    s = ad.softmax_rows_with_temperature(ad.constant([[2.0, 0.0]]), 2.0).values[0]
    e = math.e
    assert s[0] == pytest.approx(e / (e + 1), abs=1e-12)
    assert s[1] == pytest.approx(1 / (e + 1), abs=1e-12)
    assert round(s[0], 4) == 0.7311


def test_softmax_large_temperature_is_uniform():
    logits = np.random.default_rng(1).uniform(-1, 1, (4, 5))
    s = ad.softmax_rows_with_temperature(ad.constant(logits), 1e4).values
    assert (s.max(axis=1) - s.min(axis=1)).max() < 1e-3


@pytest.mark.parametrize("T", [0.0, -1.0])
def test_softmax_rejects_nonpositive_temperature(T):
    with pytest.raises(ParameterError):
        ad.softmax_rows_with_temperature(ad.constant([[1.0, 2.0]]), T)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 20.0))
def test_softmax_rows_sum_to_one(seed, T):
    logits = np.random.default_rng(seed).normal(0, 30, (5, 4))
    s = ad.softmax_rows_with_temperature(ad.constant(logits), T).values
    assert np.all(np.abs(s.sum(axis=1) - 1.0) <= 1e-12)
    assert np.all((s >= 0) & (s <= 1))


def test_sigmoid_zero():
    assert ad.sigmoid(ad.constant([[0.0]])).item() == 0.5


def test_sigmoid_is_stable_for_large_inputs():
    s = ad.sigmoid(ad.constant([[-800.0, 800.0]])).values
    assert np.all(np.isfinite(s)) and s[0, 0] == 0.0 and s[0, 1] == 1.0


def test_sq_l2_rowdiff_unit():
    assert ad.sq_l2_rowdiff(ad.constant([[1.0, 0.0]]), ad.constant([[0.0, 0.0]])).item() == 1.0


def test_log_rejects_nonpositive():
    with pytest.raises(ValueError):
        ad.log(ad.constant([[0.0, 1.0]]))


def test_safe_log_clamps_zero():
    assert ad.safe_log(ad.constant([[0.0]])).item() == pytest.approx(math.log(ad.PROB_EPS))


# finite-difference oracle for every primitive in isolation (1e-6)
PRIMITIVES = {
    "matmul": (lambda a, b: ad.sum(ad.matmul(a, b)), [(2, 3), (3, 4)], False),
    "add": (lambda a, b: ad.sum(ad.mul(ad.add(a, b), ad.add(a, b))), [(3, 2), (1, 2)], False),
    "sub": (lambda a, b: ad.sum(ad.mul(ad.sub(a, b), ad.sub(a, b))), [(3, 2), (3, 1)], False),
    "mul": (lambda a, b: ad.sum(ad.mul(a, b)), [(2, 3), (2, 3)], False),
    "scale": (lambda a: ad.sum(ad.mul(ad.scale(a, -2.5), a)), [(2, 2)], False),
    "leaky_relu": (lambda a: ad.sum(ad.mul(ad.leaky_relu(a, 0.1), a)), [(3, 3)], False),
    "sigmoid": (lambda a: ad.sum(ad.sigmoid(a)), [(2, 3)], False),
    "log": (lambda a: ad.sum(ad.log(a)), [(2, 3)], True),
    "softmax_T": (lambda a: ad.sum(ad.mul(ad.softmax_rows_with_temperature(a, 3.0), ad.constant(np.arange(8.0).reshape(2, 4)))), [(2, 4)], False),
    "mean": (lambda a: ad.mean(ad.mul(a, a)), [(3, 4)], False),
    "sum_rows": (lambda a: ad.sum(ad.mul(ad.sum_rows(a), ad.sum_rows(a))), [(3, 2)], False),
    "mean_rows": (lambda a: ad.sum(ad.mul(ad.mean_rows(a), ad.mean_rows(a))), [(3, 2)], False),
    "row_sums": (lambda a: ad.sum(ad.mul(ad.row_sums(a), ad.row_sums(a))), [(3, 2)], False),
    "take_rows": (lambda a: ad.sum(ad.mul(ad.take_rows(a, [0, 2, 2]), ad.take_rows(a, [1, 1, 0]))), [(3, 2)], False),
    "concat_rows": (lambda a, b: ad.sum(ad.mul(ad.concat_rows([a, b]), ad.concat_rows([b, a]))), [(2, 2), (2, 2)], False),
    "sq_l2_rowdiff": (lambda a, b: ad.sum(ad.sq_l2_rowdiff(a, b)), [(3, 2), (3, 2)], False),
    "sq_l2_rowdiff_row": (lambda a, b: ad.sum(ad.sq_l2_rowdiff(a, b)), [(3, 2), (1, 2)], False),
    "clamp": (lambda a: ad.sum(ad.mul(ad.clamp(a, 0.5, 1.5), a)), [(3, 3)], True),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_primitive_gradients_match_finite_differences(name, seed):
    build, shapes, positive = PRIMITIVES[name]
    fd_check(build, shapes, seed=seed, tol=1e-6, positive=positive)


# -- gradient reversal -------------------------------------------------------

def test_grad_reverse_forward_identity():
    assert ad.grad_reverse(ad.constant([[3.0]])).item() == 3.0


def test_grad_reverse_negates():
    x = ad.parameter(np.ones((2, 3)))
    ad.backward(ad.sum(ad.grad_reverse(x, 1.0)))
    np.testing.assert_array_equal(x.grad, -np.ones((2, 3)))


def test_grad_reverse_zero_lambda_blocks_gradient():
    x = ad.parameter(np.ones((2, 2)))
    ad.backward(ad.sum(ad.grad_reverse(x, 0.0)))
    assert not np.any(x.grad)


def test_grad_reverse_twice_restores_gradient_exactly():
    rng = np.random.default_rng(3)
    W = ad.constant(rng.standard_normal((3, 2)))
    x1 = ad.parameter(rng.standard_normal((4, 3)))
    x2 = ad.parameter(x1.values.copy())
    ad.backward(ad.sum(ad.sigmoid(ad.matmul(x1, W))))
    ad.backward(ad.sum(ad.sigmoid(ad.matmul(ad.grad_reverse(ad.grad_reverse(x2, 1.0), 1.0), W))))
    np.testing.assert_array_equal(x1.grad, x2.grad)


# -- backward contract -----------------------------------------------------

def test_backward_sum_gives_ones():
    x = ad.parameter(np.arange(4.0).reshape(2, 2))
    ad.backward(ad.sum(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 2)))


def test_two_backward_calls_double_gradient():
    x = ad.parameter(np.array([[1.0, -2.0]]))
    loss = ad.sum(ad.mul(x, x))
    ad.backward(loss)
    first = x.grad.copy()
    ad.backward(loss)
    np.testing.assert_array_equal(x.grad, 2 * first)


def test_shared_subexpression_two_paths():
    # y = a*b, loss = y + y*a  ->  dloss/da = b + 2ab, dloss/db = a + a^2
    a = ad.parameter([[3.0]])
    b = ad.parameter([[2.0]])
    y = ad.mul(a, b)
    ad.backward(ad.add(y, ad.mul(y, a)))
    assert a.grad[0, 0] == 2.0 + 2 * 3.0 * 2.0
    assert b.grad[0, 0] == 3.0 + 9.0


def test_backward_visits_each_node_once():
    x = ad.parameter([[1.0]])
    calls = []
    y = ad.scale(x, 2.0)
    inner = y._backward

    def spy(g):
        calls.append(1)
        inner(g)

    y._backward = spy
    z = ad.add(ad.mul(y, y), ad.add(y, y))
    ad.backward(ad.sum(z))
    assert len(calls) == 1
    assert x.grad[0, 0] == pytest.approx(2 * (2 * 2.0) + 4.0)


def test_constants_never_receive_gradient():
    c = ad.constant([[1.0, 2.0]])
    x = ad.parameter([[3.0, 4.0]])
    ad.backward(ad.sum(ad.mul(c, x)))
    assert c.grad is None
    assert x.grad.shape == x.values.shape


def test_backward_rejects_non_scalar():
    with pytest.raises(ValueError):
        ad.backward(ad.parameter(np.ones((2, 2))))


def test_detach_blocks_gradient():
    x = ad.parameter([[2.0]])
    ad.backward(ad.sum(ad.mul(ad.detach(x), x)))
    assert x.grad[0, 0] == 2.0


def test_composite_network_gradient_fd():
    rng = np.random.default_rng(7)
    X = ad.constant(rng.standard_normal((6, 4)))
    y = rng.integers(0, 3, 6)
    onehot = ad.constant(np.eye(3)[y])

    def build(W1, b1, W2):
        h = ad.leaky_relu(ad.add(ad.matmul(X, W1), b1), 0.01)
        p = ad.softmax_rows_with_temperature(ad.matmul(h, W2), 2.0)
        return ad.scale(ad.sum(ad.mul(onehot, ad.safe_log(p))), -1.0 / 6)

    fd_check(build, [(4, 5), (1, 5), (5, 3)], tol=1e-4)


# -- Adam --------------------------------------------------------------------

def test_adam_state_initialisation():
    p = ad.parameter(np.ones((2, 3)))
    state = ad.AdamState([p])
    assert state.t == 0
    assert not np.any(state.m[0]) and not np.any(state.v[0])
    assert (state.lr, state.beta1, state.beta2, state.epsilon) == (1e-3, 0.9, 0.999, 1e-8)


def test_adam_zero_gradient_leaves_params():
    p = ad.parameter(np.array([[1.0, -1.0]]))
    state = ad.AdamState([p])
    ad.adam_step([p], state)
    np.testing.assert_array_equal(p.values, [[1.0, -1.0]])
    assert state.t == 1


def test_adam_first_step_is_lr_times_sign():
    w = ad.parameter([[1.0]])
    state = ad.AdamState([w], lr=0.1)
    ad.backward(ad.sum(ad.mul(w, w)))
    ad.adam_step([w], state)
    # bias-corrected first step has magnitude lr (up to epsilon)
    assert w.values[0, 0] == pytest.approx(0.9, abs=1e-7)
    assert not np.any(w.grad)


def test_adam_converges_on_convex_quadratic():
    A = np.array([[3.0, 0.5], [0.5, 1.0]])
    target = np.array([[1.0], [-2.0]])
    w = ad.parameter(np.zeros((2, 1)))
    state = ad.AdamState([w], lr=0.05)

    def grad_norm():
        return float(np.linalg.norm(A @ (w.values - target)))

    for _ in range(500):
        d = ad.sub(w, ad.constant(target))
        ad.backward(ad.scale(ad.sum(ad.mul(d, ad.matmul(ad.constant(A), d))), 0.5))
        ad.adam_step([w], state)
    assert grad_norm() < 1e-3


def test_relative_error_zero_for_equal():
    a = np.array([1.0, 2.0])
    assert ad.relative_error(a, a) == 0.0
