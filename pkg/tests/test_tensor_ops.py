"""Op-level semantics of the tensor core, checked against independent oracles.

Derived expectations are computed here with plain ``math``/hand formulas,
never by calling back into the code under test.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from rewardflow import autodiff as ad


@pytest.fixture(autouse=True)
def _wide_precision():
    with ad.precision("wide"):
        yield
    ad.tape().clear()


def test_matmul_identity():
    eye = ad.Tensor(np.eye(2))
    m = ad.Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = ad.matmul(eye, m)
    assert np.array_equal(out.data, [[1.0, 2.0], [3.0, 4.0]])


def test_matmul_zero_annihilation():
    a = ad.Tensor([[1.0, 0.0]])
    b = ad.Tensor([[0.0], [5.0]])
    assert ad.matmul(a, b).data.tolist() == [[0.0]]


def test_matmul_shape_mismatch():
    with pytest.raises(ad.DimensionError):
        ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((2, 3))))


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    a = ad.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = ad.Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    coeff = ad.Tensor(rng.normal(size=(3, 2)))

    def f():
        return ad.mean(ad.mul(ad.matmul(a, b), coeff))

    assert ad.grad_check(f, [a, b]) < 1e-6


def test_softmax_uniform_from_zeros():
    out = ad.softmax_last_axis(ad.Tensor([0.0, 0.0, 0.0, 0.0]))
    assert np.allclose(out.data, 0.25, atol=0)


def test_softmax_single_element():
    assert ad.softmax_last_axis(ad.Tensor([7.0])).data.tolist() == [1.0]


def test_softmax_matches_direct_formula():
    raw = [1.0, 2.0, 3.0]
    expected = [math.exp(v) / sum(math.exp(u) for u in raw) for v in raw]
    out = ad.softmax_last_axis(ad.Tensor(raw))
    assert np.max(np.abs(out.data - np.array(expected))) < 1e-7


def test_softmax_rows_sum_to_one_and_shift_invariant():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(5, 9)) * 4
    out = ad.softmax_last_axis(ad.Tensor(x)).data
    assert np.all(out > 0)
    assert np.max(np.abs(out.sum(axis=-1) - 1.0)) < 1e-6
    shifted = ad.softmax_last_axis(ad.Tensor(x + 13.5)).data
    assert np.max(np.abs(out - shifted)) < 1e-9


def test_softmax_empty_axis_rejected():
    with pytest.raises(ad.DimensionError):
        ad.softmax_last_axis(ad.Tensor(np.zeros((2, 0))))


def test_softmax_gradient():
    rng = np.random.default_rng(11)
    x = ad.Tensor(rng.normal(size=(2, 5)), requires_grad=True)
    coeff = ad.Tensor(rng.normal(size=(2, 5)))

    def f():
        return ad.mean(ad.mul(ad.softmax_last_axis(x), coeff))

    assert ad.grad_check(f, [x]) < 1e-6


def test_layer_norm_constant_slice_is_zero():
    x = ad.Tensor(np.full((3, 4), 2.5))
    gain = ad.Tensor(np.ones(4))
    bias = ad.Tensor(np.zeros(4))
    out = ad.layer_norm(x, gain, bias)
    assert np.max(np.abs(out.data)) == 0.0


def test_layer_norm_zero_gain_gives_bias():
    rng = np.random.default_rng(0)
    x = ad.Tensor(rng.normal(size=(2, 6)))
    bias = rng.normal(size=6)
    out = ad.layer_norm(x, ad.Tensor(np.zeros(6)), ad.Tensor(bias))
    assert np.allclose(out.data, np.broadcast_to(bias, (2, 6)), atol=0)


def test_layer_norm_normalizes_before_affine():
    rng = np.random.default_rng(5)
    x = ad.Tensor(rng.normal(size=(4, 16)) * 3 + 1)
    out = ad.layer_norm(x, ad.Tensor(np.ones(16)), ad.Tensor(np.zeros(16)), eps=1e-10)
    assert np.max(np.abs(out.data.mean(axis=-1))) < 1e-5
    assert np.max(np.abs(out.data.var(axis=-1) - 1.0)) < 1e-5


def test_layer_norm_eps_must_be_positive():
    x = ad.Tensor(np.ones((2, 3)))
    with pytest.raises(ad.ConfigurationError):
        ad.layer_norm(x, ad.Tensor(np.ones(3)), ad.Tensor(np.zeros(3)), eps=0.0)


def test_layer_norm_gradient():
    rng = np.random.default_rng(13)
    x = ad.Tensor(rng.normal(size=(3, 7)), requires_grad=True)
    gain = ad.Tensor(rng.normal(size=7), requires_grad=True)
    bias = ad.Tensor(rng.normal(size=7), requires_grad=True)
    coeff = ad.Tensor(rng.normal(size=(3, 7)))

    def f():
        return ad.mean(ad.mul(ad.layer_norm(x, gain, bias), coeff))

    assert ad.grad_check(f, [x, gain, bias]) < 1e-5


def test_silu_zero_and_asymptote():
    assert ad.silu(ad.Tensor([0.0])).data.tolist() == [0.0]
    out = ad.silu(ad.Tensor([20.0])).item()
    assert abs(out - 20.0) < 1e-3


def test_silu_gradient():
    rng = np.random.default_rng(17)
    x = ad.Tensor(rng.normal(size=12) * 2, requires_grad=True)
    coeff = ad.Tensor(rng.normal(size=12))

    def f():
        return ad.mean(ad.mul(ad.silu(x), coeff))

    assert ad.grad_check(f, [x]) < 1e-6


def test_embedding_identity_row():
    table = ad.Tensor(np.eye(4))
    out = ad.embedding_lookup(table, 0)
    assert out.data.tolist() == [1.0, 0.0, 0.0, 0.0]


def test_embedding_repeated_lookup_accumulates():
    table = ad.Tensor(np.eye(4), requires_grad=True)
    total = ad.add(
        ad.tensor_sum(ad.embedding_lookup(table, 2)),
        ad.tensor_sum(ad.embedding_lookup(table, 2)),
    )
    ad.backward(total)
    expected = np.zeros((4, 4))
    expected[2] = 2.0
    assert np.array_equal(table.grad, expected)


def test_embedding_out_of_range():
    table = ad.Tensor(np.eye(4))
    with pytest.raises(IndexError):
        ad.embedding_lookup(table, 4)
    with pytest.raises(IndexError):
        ad.embedding_lookup(table, -1)


def test_embedding_gradient():
    rng = np.random.default_rng(19)
    table = ad.Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    coeff = ad.Tensor(rng.normal(size=(2, 3)))
    idx = np.array([1, 3])

    def f():
        return ad.mean(ad.mul(ad.embedding_lookup(table, idx), coeff))

    assert ad.grad_check(f, [table]) < 1e-6


def test_mse_zero_when_equal_and_one_when_off_by_one():
    rng = np.random.default_rng(23)
    x = rng.normal(size=(3, 5))
    assert ad.mse_loss(ad.Tensor(x), ad.Tensor(x.copy())).item() == 0.0
    assert ad.mse_loss(ad.Tensor(x + 1.0), ad.Tensor(x)).item() == pytest.approx(1.0, abs=1e-12)


def test_mse_shape_mismatch():
    with pytest.raises(ad.DimensionError):
        ad.mse_loss(ad.Tensor(np.ones(3)), ad.Tensor(np.ones(4)))


def test_mse_gradient_closed_form_and_finite_differences():
    rng = np.random.default_rng(29)
    pred = ad.Tensor(rng.normal(size=(2, 4)), requires_grad=True)
    target = ad.Tensor(rng.normal(size=(2, 4)))
    loss = ad.mse_loss(pred, target)
    ad.backward(loss)
    expected = 2.0 * (pred.data - target.data) / pred.data.size
    assert np.max(np.abs(pred.grad - expected)) < 1e-12

    def f():
        return ad.mse_loss(pred, target)

    assert ad.grad_check(f, [pred]) < 1e-6


def test_bce_at_zero_logit_is_ln2_both_labels():
    ln2 = math.log(2.0)
    assert ad.bce_with_logits(ad.Tensor(0.0), 1).item() == pytest.approx(ln2, abs=1e-12)
    assert ad.bce_with_logits(ad.Tensor(0.0), 0).item() == pytest.approx(ln2, abs=1e-12)


def test_bce_extreme_logit_stable():
    # softplus(-r) with r = -50 -> 50, no overflow anywhere.
    out = ad.bce_with_logits(ad.Tensor(-50.0), 1).item()
    assert math.isfinite(out)
    assert out == pytest.approx(50.0, abs=1e-9)
    out = ad.bce_with_logits(ad.Tensor(500.0), 0).item()
    assert out == pytest.approx(500.0, abs=1e-9)


def test_bce_rejects_non_binary_labels():
    with pytest.raises(ValueError):
        ad.bce_with_logits(ad.Tensor(0.3), 0.5)


def test_bce_gradient():
    rng = np.random.default_rng(31)
    logit = ad.Tensor(rng.normal(size=6), requires_grad=True)
    labels = np.array([1, 0, 1, 1, 0, 0])

    def f():
        return ad.bce_with_logits(logit, labels)

    assert ad.grad_check(f, [logit]) < 1e-6


def test_mean_sq_error_per_sample_matches_manual():
    rng = np.random.default_rng(37)
    pred = rng.normal(size=(3, 2, 2))
    target = rng.normal(size=(3, 2, 2))
    out = ad.mean_sq_error_per_sample(ad.Tensor(pred), ad.Tensor(target))
    manual = ((pred - target) ** 2).reshape(3, -1).mean(axis=1)
    assert np.max(np.abs(out.data - manual)) < 1e-12


def test_mean_sq_error_per_sample_gradient():
    rng = np.random.default_rng(41)
    pred = ad.Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    target = ad.Tensor(rng.normal(size=(2, 3)))
    weights = ad.Tensor(np.array([0.5, 2.0]))

    def f():
        return ad.mean(ad.mul(ad.mean_sq_error_per_sample(pred, target), weights))

    assert ad.grad_check(f, [pred]) < 1e-6


def test_neighbor_diff_penalty_flat_image_is_zero():
    assert ad.neighbor_diff_penalty(ad.Tensor(np.full((4, 4), 3.0))).item() == 0.0


def test_neighbor_diff_penalty_value_and_gradient():
    # 2x2 checkerboard of 0/1: every adjacent pair differs by 1.
    img = ad.Tensor(np.array([[0.0, 1.0], [1.0, 0.0]]), requires_grad=True)
    out = ad.neighbor_diff_penalty(img)
    assert out.item() == pytest.approx(1.0, abs=1e-12)

    def f():
        return ad.neighbor_diff_penalty(img)

    assert ad.grad_check(f, [img]) < 1e-6


def test_sorted_sum_matches_plain_sum_and_permutation_exact():
    rng = np.random.default_rng(43)
    x = rng.normal(size=(6, 5)) * 100
    base = ad.sorted_sum(ad.Tensor(x), axis=0).data
    assert np.allclose(base, x.sum(axis=0, keepdims=True), rtol=1e-12)
    perm = rng.permutation(6)
    permuted = ad.sorted_sum(ad.Tensor(x[perm]), axis=0).data
    assert np.array_equal(base, permuted)


def test_sorted_sum_gradient():
    rng = np.random.default_rng(47)
    x = ad.Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    coeff = ad.Tensor(rng.normal(size=(1, 3)))

    def f():
        return ad.mean(ad.mul(ad.sorted_sum(x, axis=0), coeff))

    assert ad.grad_check(f, [x]) < 1e-6


def test_broadcast_add_mul_gradients():
    rng = np.random.default_rng(53)
    a = ad.Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    b = ad.Tensor(rng.normal(size=(1, 1, 4)), requires_grad=True)
    c = ad.Tensor(rng.normal(size=(3, 1)), requires_grad=True)

    def f():
        return ad.mean(ad.mul(ad.add(a, b), c))

    assert ad.grad_check(f, [a, b, c]) < 1e-6


def test_div_and_exp_gradients():
    rng = np.random.default_rng(59)
    a = ad.Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    b = ad.Tensor(rng.normal(size=(3, 2)) + 3.0, requires_grad=True)

    def f():
        return ad.mean(ad.div(ad.exp(a), b))

    assert ad.grad_check(f, [a, b]) < 1e-6


def test_reshape_transpose_roundtrip_gradient():
    rng = np.random.default_rng(61)
    a = ad.Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    coeff = ad.Tensor(rng.normal(size=(4, 6)))

    def f():
        moved = ad.transpose(a, (2, 0, 1))
        flat = ad.reshape(moved, (4, 6))
        return ad.mean(ad.mul(flat, coeff))

    assert ad.grad_check(f, [a]) < 1e-6


def test_nan_inf_raises_not_silent():
    big = ad.Tensor(np.full(4, 1e308))
    with pytest.raises(ad.NumericalError):
        ad.mul(big, big)
    with pytest.raises(ad.NumericalError):
        ad.exp(ad.Tensor([1000.0]))
    with pytest.raises(ad.NumericalError):
        ad.div(ad.Tensor([1.0]), ad.Tensor([0.0]))


def test_scale_and_operator_sugar():
    a = ad.Tensor([1.0, 2.0])
    out = ad.scale(a, -2.0)
    assert out.data.tolist() == [-2.0, -4.0]
    combo = (a + a) * 0.5 - a
    assert np.allclose(combo.data, 0.0, atol=0)
