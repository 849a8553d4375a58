"""Reverse-mode gradients against central differences, plus tape semantics."""

import numpy as np
import pytest

from maxvit import ops
from maxvit.errors import DimensionError, NumericError
from maxvit.gradcheck import GRAD_TOL, grad_check, primitive_cases
from maxvit.tape import GradTape
from maxvit.tensor import Tensor, tensor


def test_hand_case_sum_of_squares():
    # f(w) = sum(w^2), df/dw = 2w: both routes must agree to machine-level.
    w = Tensor(np.array([1.0, -2.0, 3.0]))
    with GradTape() as tape:
        y = ops.reduce_sum(ops.mul(w, w))
    (g,) = tape.gradient(y, [w])
    np.testing.assert_allclose(g.data, 2 * w.data, rtol=1e-14)
    assert grad_check(lambda v: ops.reduce_sum(ops.mul(v, v)), [w]) < GRAD_TOL


@pytest.mark.parametrize("case", primitive_cases(seed=0), ids=lambda c: c[0])
def test_primitive_gradients(case):
    name, fn, params = case
    assert grad_check(fn, params) < GRAD_TOL, name


def test_grad_check_catches_wrong_gradient():
    # a corrupted backward rule must produce a large reported error
    def bad_op(x):
        out = Tensor(np.asarray((x.data ** 3).sum()))
        from maxvit.tape import record

        record(out, (x,), lambda g: (g * 2.0 * x.data,))  # wrong: should be 3x^2
        return out

    err = grad_check(bad_op, [Tensor(np.array([1.5, -0.5]))])
    assert err > 0.1


def test_unused_parameter_gets_exact_zero_gradient():
    used = Tensor(np.array([2.0]))
    unused = Tensor(np.array([5.0, 6.0]))
    with GradTape() as tape:
        y = ops.reduce_sum(ops.mul(used, used))
    g_used, g_unused = tape.gradient(y, [used, unused])
    assert g_used.data.tolist() == [4.0]
    assert g_unused.shape == (2,)
    assert np.all(g_unused.data == 0.0)


def test_parameter_reuse_accumulates():
    w = Tensor(np.array([3.0]))
    with GradTape() as tape:
        y = ops.reduce_sum(ops.add(ops.mul(w, w), w))  # w^2 + w -> 2w + 1
    (g,) = tape.gradient(y, [w])
    assert g.data.tolist() == [7.0]


def test_gradient_requires_scalar_output():
    w = Tensor(np.array([1.0, 2.0]))
    with GradTape() as tape:
        y = ops.mul(w, w)
    with pytest.raises(DimensionError):
        tape.gradient(y, [w])


def test_no_tape_records_outside_context():
    w = Tensor(np.array([1.0, 2.0]))
    tape = GradTape()
    with tape:
        pass
    ops.mul(w, w)  # outside the context: nothing recorded
    assert len(tape) == 0


def test_nested_tapes_record_independently():
    w = Tensor(np.array([2.0]))
    with GradTape() as outer:
        ops.mul(w, w)
        with GradTape() as inner:
            ops.mul(w, w)
    assert len(inner) == 1
    assert len(outer) == 2  # outer also sees the inner op


def test_grad_check_rejects_nonfinite_function():
    def exploder(x):
        out = Tensor(np.asarray(np.inf))
        from maxvit.tape import record

        record(out, (x,), lambda g: (np.zeros_like(x.data),))
        return out

    with pytest.raises(NumericError):
        grad_check(exploder, [Tensor(np.array([1.0]))])


def test_grad_check_eps_bounds():
    with pytest.raises(NumericError):
        grad_check(lambda x: ops.reduce_sum(x), [tensor([1.0])], eps=1e-2)


def test_gradients_preserve_dtype():
    w32 = tensor([1.0, 2.0])
    with GradTape() as tape:
        y = ops.reduce_sum(ops.mul(w32, w32))
    (g,) = tape.gradient(y, [w32])
    assert g.dtype == np.float32


def test_grids_and_blocks_end_to_end_gradient():
    from maxvit.axes import block, grid, unblock, ungrid

    def f(x):
        y = block(x, 2)
        y = unblock(y, 4, 4, 2)
        z = grid(y, 2)
        z = ungrid(z, 4, 4, 2)
        return ops.reduce_mean(ops.mul(z, z))

    x = Tensor(np.random.default_rng(0).standard_normal((1, 4, 4, 2)))
    assert grad_check(f, [x]) < GRAD_TOL
