import numpy as np
import pytest

from dic.engine import ops
from dic.engine.tensor import Parameter, Tape, Tensor, backward, is_recording, resolve_dtype
from dic.errors import GradientError


def test_reused_input_accumulates_gradient():
    x = Parameter(np.array([1.0, -2.0, 3.0]), name="x")
    with Tape() as tape:
        loss = ops.sum(x * x + x)
    backward(loss, tape)
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_unreached_leaf_gets_zero_gradient():
    used = Parameter(np.ones(3), name="used")
    unused = Parameter(np.ones(2), name="unused")
    with Tape() as tape:
        loss = ops.sum(used * 2.0)
    backward(loss, tape, leaves=[used, unused])
    np.testing.assert_array_equal(used.grad, np.full(3, 2.0))
    np.testing.assert_array_equal(unused.grad, np.zeros(2))


def test_backward_clears_tape():
    x = Parameter(np.ones(2), name="x")
    with Tape() as tape:
        loss = ops.sum(x)
    assert len(tape) == 1
    backward(loss, tape)
    assert tape.cleared and len(tape) == 0
    with pytest.raises(GradientError) as err:
        backward(loss, tape)
    assert err.value.code == "tape_cleared"


def test_cleared_tape_cannot_record_again():
    tape = Tape()
    tape.clear()
    with pytest.raises(GradientError):
        with tape:
            pass


def test_non_scalar_loss_rejected():
    x = Parameter(np.ones(3), name="x")
    with Tape() as tape:
        out = x * 2.0
    with pytest.raises(GradientError) as err:
        backward(out, tape)
    assert err.value.code == "non_scalar_loss"


def test_no_tape_means_no_tracking():
    x = Parameter(np.ones(3), name="x")
    out = x * 3.0
    assert not out.requires_grad
    assert not is_recording(x)


def test_constants_do_not_record():
    a, b = Tensor(np.ones(2)), Tensor(np.ones(2))
    with Tape() as tape:
        out = a + b
    assert not out.requires_grad
    assert len(tape) == 0


def test_nested_tapes_restore_outer():
    x = Parameter(np.ones(2), name="x")
    with Tape() as outer:
        with Tape() as inner:
            _ = x * 2.0
        _ = x * 3.0
    assert len(inner) == 1
    assert len(outer) == 1


def test_operator_sugar_matches_ops():
    a = Tensor(np.array([1.0, 2.0]))
    np.testing.assert_array_equal((a - 1.0).data, [0.0, 1.0])
    np.testing.assert_array_equal((1.0 - a).data, [0.0, -1.0])
    np.testing.assert_array_equal((-a).data, [-1.0, -2.0])
    np.testing.assert_array_equal((a / 2).data, [0.5, 1.0])


def test_resolve_dtype():
    assert resolve_dtype("float64") == np.float64
    assert resolve_dtype(None) == np.float32
    assert Parameter(np.ones(2), name="p", dtype="float32").dtype == np.float32
