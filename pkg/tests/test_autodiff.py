"""Tape behavior: recorded forwards are bit-identical to eager ones, the
reverse sweep matches closed forms and finite differences, and the
checkpoint node changes memory behavior but not a single gradient bit."""
import numpy as np
import pytest

from ttt_lm import ops
from ttt_lm.autodiff import Tape, backward, grad_check
from ttt_lm.errors import ShapeError, TapeError
from ttt_lm.tensor import Tensor


def test_recorded_forward_is_bitwise_equal_to_eager():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(4, 6))
    b = rng.normal(size=(6, 3))
    eager = Tensor(a) @ Tensor(b)
    tape = Tape()
    va, vb = tape.const(a), tape.const(b)
    taped = tape.record("matmul", va, vb)
    np.testing.assert_array_equal(taped.value, eager.data)


def test_quadratic_loss_gradient_closed_form():
    # loss = ||W x - y||^2  =>  dW = 2 (W x - y) x^T
    rng = np.random.default_rng(1)
    w = rng.normal(size=(5, 5))
    x = rng.normal(size=(5, 1))
    y = rng.normal(size=(5, 1))
    tape = Tape()
    vw = tape.param(w)
    vx, vy = tape.const(x), tape.const(y)
    r = ops.sub(ops.matmul(vw, vx), vy)
    loss = ops.sum_all(ops.mul(r, r))
    gm = tape.backward(loss)
    want = 2.0 * (w @ x - y) @ x.T
    np.testing.assert_allclose(gm[vw].data, want, rtol=1e-13)


def test_unused_parameter_gets_zero_gradient():
    tape = Tape()
    used = tape.param(np.ones((2, 2)))
    unused = tape.param(np.ones((3, 3)))
    loss = ops.sum_all(ops.mul(used, used))
    gm = tape.backward(loss)
    np.testing.assert_array_equal(gm[unused].data, np.zeros((3, 3)))


def test_backward_twice_rejected():
    tape = Tape()
    v = tape.param(np.ones((2, 2)))
    loss = ops.sum_all(v)
    tape.backward(loss)
    with pytest.raises(TapeError):
        tape.backward(loss)


def test_backward_requires_scalar_loss():
    tape = Tape()
    v = tape.param(np.ones((2, 2)))
    with pytest.raises(ShapeError):
        tape.backward(v)


def test_backward_rejects_foreign_node():
    t1, t2 = Tape(), Tape()
    v = t1.param(np.ones(2).reshape(1, 2))
    loss1 = ops.sum_all(v)
    with pytest.raises(TapeError):
        t2.backward(loss1)


def test_gradmap_rejects_non_parameter_node():
    tape = Tape()
    p = tape.param(np.ones((2, 2)))
    c = tape.const(np.ones((2, 2)))
    gm = tape.backward(ops.sum_all(ops.mul(p, c)))
    assert p in gm and c not in gm
    with pytest.raises(TapeError):
        gm[c]


def test_record_rejects_unknown_kind():
    tape = Tape()
    v = tape.const(np.ones((2, 2)))
    with pytest.raises(TapeError):
        tape.record("not_an_op", v)


def test_grad_check_simple_composite():
    def f(tape, leaves):
        (w,) = leaves
        return ops.sum_all(ops.gelu(ops.matmul(w, ops.transpose(w))))

    rng = np.random.default_rng(2)
    err = grad_check(f, [Tensor(rng.normal(size=(3, 3)))])
    assert err < 1e-7


def test_grad_check_constant_function_is_exact():
    def f(tape, leaves):
        (w,) = leaves
        return ops.sum_all(ops.scale(w, 0.0))

    err = grad_check(f, [Tensor(np.ones((2, 2)))])
    assert err == 0.0


def test_checkpoint_preserves_values_and_gradients_bitwise():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(4, 4))
    b = rng.normal(size=(4, 4))

    def segment(x, y):
        return (ops.gelu(ops.matmul(x, y)),)

    def run(use_ckpt):
        tape = Tape()
        va, vb = tape.param(a), tape.param(b)
        if use_ckpt:
            (out,) = tape.checkpoint(segment, [va, vb])
        else:
            (out,) = segment(va, vb)
        loss = ops.sum_all(ops.mul(out, out))
        gm = tape.backward(loss)
        return out.value if use_ckpt else out.value, gm[va].data, gm[vb].data

    o1, ga1, gb1 = run(False)
    o2, ga2, gb2 = run(True)
    np.testing.assert_array_equal(o1, o2)
    np.testing.assert_array_equal(ga1, ga2)
    np.testing.assert_array_equal(gb1, gb2)


def test_checkpoint_requires_tuple_return():
    tape = Tape()
    v = tape.param(np.ones((2, 2)))
    with pytest.raises(TapeError):
        tape.checkpoint(lambda x: ops.gelu(x), [v])


def test_checkpoint_rejects_foreign_inputs():
    t1, t2 = Tape(), Tape()
    v = t1.param(np.ones((2, 2)))
    with pytest.raises(TapeError):
        t2.checkpoint(lambda x: (ops.gelu(x),), [v])


def test_backward_module_function_equals_method():
    tape = Tape()
    v = tape.param(np.full((2, 2), 2.0))
    loss = ops.sum_all(ops.mul(v, v))
    gm = backward(tape, loss)
    np.testing.assert_allclose(gm[v].data, np.full((2, 2), 4.0), rtol=1e-15)


def test_value_operator_sugar():
    tape = Tape()
    a = tape.const(np.array([[1.0, 2.0], [3.0, 4.0]]))
    b = tape.const(np.array([[1.0, 0.0], [0.0, 1.0]]))
    np.testing.assert_array_equal((a @ b).value, a.value)
    np.testing.assert_array_equal((a + b).value, a.value + b.value)
    np.testing.assert_array_equal((a - b).value, a.value - b.value)
    np.testing.assert_array_equal((2.0 * a).value, 2.0 * a.value)
    np.testing.assert_array_equal((-a).value, -a.value)
    np.testing.assert_array_equal(a.T.value, a.value.T)
