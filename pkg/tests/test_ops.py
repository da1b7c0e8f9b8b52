import math

import numpy as np
import pytest

from dic.engine import ops
from dic.engine.tensor import Tensor
from dic.errors import ShapeError
from tests.conftest import assert_op_gradients


def naive_conv3x3(x, w, b=None, stride=1):
    n, c, h, wd = x.shape
    cout = w.shape[0]
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ho, wo = h // stride, wd // stride
    out = np.zeros((n, cout, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = padded[:, :, i * stride:i * stride + 3, j * stride:j * stride + 3]
            out[:, :, i, j] = np.einsum("nckl,ockl->no", patch, w)
    if b is not None:
        out += b[None, :, None, None]
    return out


@pytest.mark.parametrize("stride", [1, 2])
def test_conv3x3_matches_loop_oracle(rng, stride):
    x = rng.standard_normal((2, 3, 6, 8))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out = ops.conv3x3_direct(Tensor(x), Tensor(w), Tensor(b), stride=stride)
    np.testing.assert_allclose(out.data, naive_conv3x3(x, w, b, stride), atol=1e-12)


def test_conv3x3_shape_errors(rng):
    x = Tensor(rng.standard_normal((1, 3, 4, 4)))
    with pytest.raises(ShapeError):
        ops.conv3x3_direct(x, Tensor(rng.standard_normal((2, 4, 3, 3))))
    with pytest.raises(ShapeError):
        ops.conv3x3_direct(Tensor(rng.standard_normal((1, 3, 5, 5))), Tensor(rng.standard_normal((2, 3, 3, 3))), stride=2)
    with pytest.raises(ShapeError):
        ops.conv3x3_direct(Tensor(rng.standard_normal((3, 4, 4))), Tensor(rng.standard_normal((2, 3, 3, 3))))


def test_patchify_matches_loop(rng):
    x = rng.standard_normal((1, 2, 4, 6))
    w = rng.standard_normal((3, 2, 2, 2))
    out = ops.patchify_conv(Tensor(x), Tensor(w)).data
    for i in range(2):
        for j in range(3):
            patch = x[0, :, 2 * i:2 * i + 2, 2 * j:2 * j + 2]
            np.testing.assert_allclose(out[0, :, i, j], np.einsum("ckl,ockl->o", patch, w), atol=1e-12)


def test_depth_to_space_layout():
    x = np.arange(8, dtype=np.float64).reshape(1, 8, 1, 1)
    out = ops.depth_to_space(Tensor(x)).data
    assert out.shape == (1, 2, 2, 2)
    np.testing.assert_array_equal(out[0, 0], [[0, 1], [2, 3]])
    np.testing.assert_array_equal(out[0, 1], [[4, 5], [6, 7]])


def test_group_norm_normalizes_each_group(rng):
    x = rng.standard_normal((2, 6, 4, 4)) * 3 + 5
    out = ops.group_norm(x=Tensor(x), groups=3, gamma=Tensor(np.ones(6)), beta=Tensor(np.zeros(6))).data
    grouped = out.reshape(2, 3, -1)
    np.testing.assert_allclose(grouped.mean(axis=2), 0.0, atol=1e-10)
    np.testing.assert_allclose(grouped.var(axis=2), 1.0, atol=1e-4)


def test_group_norm_rejects_indivisible_channels(rng):
    with pytest.raises(ShapeError):
        ops.group_norm(Tensor(rng.standard_normal((1, 6, 2, 2))), 4, Tensor(np.ones(6)), Tensor(np.zeros(6)))


def test_activation_values():
    x = np.array([-2.0, 0.0, 1.5])
    expected_gelu = [v * 0.5 * (1 + math.erf(v / math.sqrt(2))) for v in x]
    np.testing.assert_allclose(ops.gelu(Tensor(x)).data, expected_gelu, rtol=1e-12)
    np.testing.assert_allclose(ops.silu(Tensor(x)).data, x / (1 + np.exp(-x)), rtol=1e-12)


def test_mse_loss_value_and_shape_check():
    loss = ops.mse_loss(Tensor(np.array([1.0, 3.0])), Tensor(np.array([0.0, 0.0])))
    assert loss.item() == pytest.approx(5.0)
    with pytest.raises(ShapeError):
        ops.mse_loss(Tensor(np.zeros(2)), Tensor(np.zeros(3)))


def test_embedding_range_check():
    with pytest.raises(ShapeError):
        ops.embedding(Tensor(np.zeros((3, 2))), np.array([3]))


# ------------------------------------------------------------------ gradients


@pytest.mark.parametrize("stride", [1, 2])
def test_conv3x3_gradients(rng, stride):
    assert_op_gradients(
        lambda x, w, b: ops.conv3x3_direct(x, w, b, stride=stride),
        [rng.standard_normal((2, 2, 4, 4)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)],
    )


def test_patchify_gradients(rng):
    assert_op_gradients(
        ops.patchify_conv, [rng.standard_normal((1, 2, 4, 4)), rng.standard_normal((3, 2, 2, 2)), rng.standard_normal(3)]
    )


def test_group_norm_gradients(rng):
    assert_op_gradients(
        lambda x, g, b: ops.group_norm(x, 2, g, b),
        [rng.standard_normal((2, 4, 3, 3)), rng.standard_normal(4), rng.standard_normal(4)],
    )


@pytest.mark.parametrize("activation", ["gelu", "silu"])
def test_activation_gradients(rng, activation):
    assert_op_gradients(ops.ACTIVATIONS[activation], [rng.standard_normal((2, 5))])


def test_linear_gradients(rng):
    assert_op_gradients(ops.linear, [rng.standard_normal((3, 4)), rng.standard_normal((5, 4)), rng.standard_normal(5)])


def test_embedding_gradient_scatters_repeated_rows(rng):
    idx = np.array([0, 2, 2, 1])
    assert_op_gradients(lambda table: ops.embedding(table, idx), [rng.standard_normal((4, 3))])


def test_broadcast_mul_gradients(rng):
    assert_op_gradients(
        lambda h, s: ops.mul(h, ops.reshape(s, (2, 3, 1, 1))),
        [rng.standard_normal((2, 3, 2, 2)), rng.standard_normal((2, 3))],
    )


def test_layout_op_gradients(rng):
    assert_op_gradients(ops.upsample_nearest2x, [rng.standard_normal((1, 2, 2, 3))])
    assert_op_gradients(ops.depth_to_space, [rng.standard_normal((1, 8, 2, 2))])
    assert_op_gradients(ops.concat_channels, [rng.standard_normal((1, 2, 2, 2)), rng.standard_normal((1, 3, 2, 2))])


def test_mse_and_mean_gradients(rng):
    assert_op_gradients(ops.mse_loss, [rng.standard_normal((2, 3)), rng.standard_normal((2, 3))])
    assert_op_gradients(ops.mean, [rng.standard_normal((2, 3))])


# ------------------------------------------------------------------ profiler


def test_profile_counts_conv_macs(rng):
    x = Tensor(rng.standard_normal((2, 3, 4, 4)))
    w = Tensor(rng.standard_normal((5, 3, 3, 3)))
    with ops.profile() as prof:
        ops.conv3x3_direct(x, w)
        ops.conv3x3_direct(x, w, stride=2)
        ops.add(x, x)
    assert prof.by_op()["conv3x3"] == 2 * 5 * 16 * 3 * 9 + 2 * 5 * 4 * 3 * 9
    assert prof.by_op()["add"] == 0
    assert prof.total_macs == prof.by_op()["conv3x3"]


def test_profile_inactive_outside_block(rng):
    with ops.profile() as prof:
        pass
    ops.gelu(Tensor(rng.standard_normal(4)))
    assert prof.events == []


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_output_does_not_depend_on_batch(rng, stride):
    x = rng.standard_normal((5, 6, 8, 8))
    w = Tensor(rng.standard_normal((7, 6, 3, 3)))
    batched = ops.conv3x3_direct(Tensor(x), w, stride=stride).data
    alone = ops.conv3x3_direct(Tensor(x[2:3]), w, stride=stride).data
    np.testing.assert_array_equal(batched[2:3], alone)


def test_patchify_and_linear_do_not_depend_on_batch(rng):
    x = rng.standard_normal((4, 3, 4, 4))
    w = Tensor(rng.standard_normal((5, 3, 2, 2)))
    np.testing.assert_array_equal(ops.patchify_conv(Tensor(x), w).data[1:2], ops.patchify_conv(Tensor(x[1:2]), w).data)
    rows = rng.standard_normal((6, 9))
    weight, bias = Tensor(rng.standard_normal((4, 9))), Tensor(rng.standard_normal(4))
    np.testing.assert_array_equal(
        ops.linear(Tensor(rows), weight, bias).data[3:4], ops.linear(Tensor(rows[3:4]), weight, bias).data
    )
