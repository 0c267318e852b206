#!/usr/bin/env python3
"""
Gradient checks for every differentiable operator and for the end-to-end loss
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from core import diffcore as dc
from core.config import ModelConfig
from core.diffcore import AdamW, Linear, MLP, Parameter, Tensor
from core.errors import ShapeError
from core.symm_completion import SymmCompletion
from core.training import total_loss

EPS = 1e-5
TOLERANCE = 1e-4


def _weighted(out: Tensor, seed: int = 99) -> Tensor:
    """Reduce any output to a scalar with fixed random weights"""
    weights = np.random.default_rng(seed).normal(size=out.shape)
    return dc.sum(dc.mul(out, Tensor(weights)))


def _numeric_gradient(fn, inputs, x):
    grad = np.zeros(x.shape)
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + EPS
        with dc.no_grad():
            up = fn(*inputs).item()
        flat[i] = original - EPS
        with dc.no_grad():
            down = fn(*inputs).item()
        flat[i] = original
        grad.reshape(-1)[i] = (up - down) / (2 * EPS)
    return grad


def check_gradients(fn, *arrays):
    """Compare backward() with central differences for every input"""
    inputs = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    dc.backward(fn(*inputs), inputs)
    for x in inputs:
        numeric = _numeric_gradient(fn, inputs, x)
        scale = max(np.linalg.norm(numeric), np.linalg.norm(x.grad), 1e-12)
        error = np.linalg.norm(x.grad - numeric) / scale
        assert error < TOLERANCE, f"relative gradient error {error:.2e}"


def _rng(seed=0):
    return np.random.default_rng(seed)


def test_elementwise_gradients():
    a, b = _rng(0).normal(size=(4, 3)), _rng(1).normal(size=(4, 3))
    check_gradients(lambda x, y: _weighted(dc.add(x, y)), a, b)
    check_gradients(lambda x, y: _weighted(dc.sub(x, y)), a, b)
    check_gradients(lambda x, y: _weighted(dc.mul(x, y)), a, b)
    check_gradients(lambda x: _weighted(dc.scale(x, -2.5)), a)
    # keep clear of the kink at zero
    shifted = np.where(np.abs(a) < 0.1, 0.5, a)
    check_gradients(lambda x: _weighted(dc.relu(x)), shifted)
    check_gradients(lambda x: _weighted(dc.sqrt(x)), np.abs(a) + 0.5)


def test_reduction_gradients():
    a = _rng(2).normal(size=(3, 4, 5))
    check_gradients(lambda x: _weighted(dc.sum(x, axis=1)), a)
    check_gradients(lambda x: dc.mean(dc.mul(x, x)), a)
    check_gradients(lambda x: _weighted(dc.max_pool(x, axis=0)), a)
    check_gradients(lambda x: _weighted(dc.max_pool(x, axis=1, keepdims=False)), a)
    check_gradients(lambda x: _weighted(dc.softmax(x, axis=1)), a)
    check_gradients(lambda x: _weighted(dc.softmax(x, axis=-1)), a)


def test_shape_op_gradients():
    a = _rng(3).normal(size=(6, 4))
    b = _rng(4).normal(size=(6, 2))
    index = np.array([[0, 5, 5], [2, 2, 1], [3, 0, 4]])
    check_gradients(lambda x: _weighted(dc.reshape(x, (3, 8))), a)
    check_gradients(lambda x, y: _weighted(dc.concat([x, y], axis=-1)), a, b)
    check_gradients(lambda x, y: _weighted(dc.concat([x, x], axis=0)), a, b)
    check_gradients(lambda x: _weighted(dc.gather_rows(x, index)), a)
    check_gradients(lambda x: _weighted(dc.expand_rows(x, 3)), a)
    check_gradients(lambda x: _weighted(dc.broadcast_row(x, 5)), a[:1])
    check_gradients(lambda x: _weighted(dc.repeat_rows(x, 3)), a)


def test_repeat_rows_layout():
    out = dc.repeat_rows(Tensor(np.array([[1.0], [2.0]])), 3)
    assert out.data.ravel().tolist() == [1.0, 1.0, 1.0, 2.0, 2.0, 2.0]


def test_linear_algebra_gradients():
    rng = _rng(5)
    x = rng.normal(size=(5, 2, 3))
    w = rng.normal(size=(3, 4))
    b = rng.normal(size=4)
    check_gradients(lambda x_, w_, b_: _weighted(dc.linear(x_, w_, b_)), x, w, b)
    p = rng.normal(size=(6, 3))
    a = rng.normal(size=(6, 3, 3))
    check_gradients(lambda p_, a_: _weighted(dc.bmv(p_, a_)), p, a)


def test_attention_gradients():
    rng = _rng(6)
    q, k, v = rng.normal(size=(5, 8)), rng.normal(size=(7, 8)), rng.normal(size=(7, 8))
    check_gradients(lambda q_, k_, v_: _weighted(dc.attention(q_, k_, v_, heads=2)), q, k, v)


def test_softmax_rows_sum_to_one():
    x = _rng(20).normal(scale=50.0, size=(6, 9))
    for axis in (0, -1):
        out = dc.softmax(x, axis=axis).data
        assert np.all(np.abs(out.sum(axis=axis) - 1.0) <= 1e-12)


def test_attention_ignores_key_value_order():
    rng = _rng(21)
    q, k, v = rng.normal(size=(5, 8)), rng.normal(size=(7, 8)), rng.normal(size=(7, 8))
    perm = rng.permutation(7)
    out = dc.attention(q, k, v, heads=2).data
    assert np.allclose(dc.attention(q, k[perm], v[perm], heads=2).data, out, atol=1e-12)


def test_attention_over_a_single_key_returns_its_value():
    rng = _rng(22)
    q, k, v = rng.normal(size=(5, 4)), rng.normal(size=(1, 4)), rng.normal(size=(1, 4))
    out = dc.attention(q, k, v, heads=2).data
    assert np.allclose(out, np.broadcast_to(v, (5, 4)), atol=1e-12)


def test_attention_chunks_match_tracked_output():
    rng = _rng(7)
    q, k, v = rng.normal(size=(10, 4)), rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    tracked = dc.attention(Tensor(q, requires_grad=True), Tensor(k), Tensor(v), heads=2)
    previous = dc.ATTENTION_QUERY_CHUNK
    dc.ATTENTION_QUERY_CHUNK = 3
    try:
        with dc.no_grad():
            chunked = dc.attention(Tensor(q, requires_grad=True), Tensor(k), Tensor(v), heads=2)
    finally:
        dc.ATTENTION_QUERY_CHUNK = previous
    assert not chunked.requires_grad
    assert np.allclose(tracked.data, chunked.data, atol=1e-12)


def test_geometry_op_gradients():
    rng = _rng(8)
    pred = rng.uniform(-0.5, 0.5, size=(12, 3))
    target = rng.uniform(-0.5, 0.5, size=(9, 3))
    check_gradients(lambda p: dc.chamfer_l1(p, target), pred)
    check_gradients(lambda p, n: _weighted(dc.reflect_points(p, n)), pred, rng.normal(size=(1, 3)))


def test_chamfer_l1_matches_geometry_kernel():
    from core.geometry import chamfer_l1
    rng = _rng(9)
    p, q = rng.normal(size=(30, 3)), rng.normal(size=(20, 3))
    assert dc.chamfer_l1(p, q).item() == pytest.approx(chamfer_l1(p, q), rel=1e-12)
    assert dc.chamfer_l1(q, q).item() == 0.0


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with dc.no_grad():
        y = dc.mul(x, x)
    assert not y.requires_grad and y._parents == ()
    assert dc.is_grad_enabled()


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        dc.backward(dc.scale(x, 2.0))


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        dc.add(np.ones((2, 3)), np.ones((3, 2)))
    with pytest.raises(ShapeError):
        dc.linear(np.ones((2, 3)), np.ones((4, 2)))


def test_module_naming_and_state_dict():
    mlp = MLP(_rng(10), [3, 4, 2])
    mlp.assign_names('head.')
    names = [name for name, _ in mlp.named_parameters()]
    assert names == ['layer0.weight', 'layer0.bias', 'layer1.weight', 'layer1.bias']
    assert mlp.layer1.weight.name == 'head.layer1.weight'
    assert mlp.num_parameters() == 3 * 4 + 4 + 4 * 2 + 2

    other = MLP(_rng(11), [3, 4, 2])
    other.load_state_dict(mlp.state_dict())
    x = _rng(12).normal(size=(5, 3))
    assert np.array_equal(other(x).data, mlp(x).data)
    with pytest.raises(ShapeError):
        other.load_state_dict({'layer0.weight': np.zeros((3, 4))})


def test_adamw_zero_learning_rate_keeps_parameters():
    lin = Linear(_rng(13), 3, 2)
    before = [p.data.copy() for p in lin.parameters()]
    opt = AdamW(lin.parameters(), lr=0.0, weight_decay=0.0)
    for _ in range(5):
        loss = dc.mean(dc.mul(lin(np.ones((4, 3))), lin(np.ones((4, 3)))))
        dc.backward(loss, lin.parameters())
        opt.step()
    assert all(np.array_equal(b, p.data) for b, p in zip(before, lin.parameters()))


def test_adamw_first_step_is_sign_of_gradient():
    p = Parameter(np.array([1.0, -1.0, 0.5]))
    opt = AdamW([p], lr=0.1, weight_decay=0.0)
    dc.adamw_step(opt, [np.array([2.0, -3.0, 0.0])])
    assert p.data == pytest.approx([0.9, -0.9, 0.5], abs=1e-6)


def test_adamw_decoupled_weight_decay():
    p = Parameter(np.array([2.0]))
    opt = AdamW([p], lr=0.1, weight_decay=0.5)
    opt.step([np.zeros(1)])
    assert p.data == pytest.approx([2.0 * (1 - 0.1 * 0.5)])


def test_adamw_minimizes_a_convex_quadratic():
    target = np.array([1.0, -1.0, 0.5, 2.0])
    weights = Tensor(np.array([1.0, 2.0, 0.5, 3.0]))
    p = Parameter(target + np.array([3.0, -2.0, 1.5, 0.5]))

    def loss_fn():
        diff = dc.sub(p, Tensor(target))
        return dc.sum(dc.mul(weights, dc.mul(diff, diff)))

    start = loss_fn().item()
    opt = AdamW([p], lr=0.1, weight_decay=0.0)
    for _ in range(200):
        dc.backward(loss_fn(), [p])
        opt.step()
    assert loss_fn().item() < 1e-3 * start


def _tiny_config(**changes) -> ModelConfig:
    base = dict(n_k=4, c=8, enc_channels=8, fuse_channels=8, heads=2, knn_k=4, ratios=(2, 2),
                partial_size=16, resolution=32)
    base.update(changes)
    return ModelConfig(**base)


def test_end_to_end_loss_gradient():
    cfg = _tiny_config()
    model = SymmCompletion(cfg)
    rng = _rng(14)
    # Heads start at zero weights; randomize them so every path carries gradient
    for layer in (model.lstnet.affine_head.last, model.lstnet.translation_head.last,
                  model.sgformer.stage1.point_shuffle.last, model.sgformer.stage2.point_shuffle.last):
        layer.weight.data = rng.normal(scale=0.1, size=layer.weight.shape)
    partial = rng.uniform(-0.5, 0.5, size=(16, 3))
    gt = rng.uniform(-0.5, 0.5, size=(32, 3))

    def loss_value():
        result = model.complete(partial)
        return total_loss(result.p_init, result.fines, gt)

    params = model.parameters()
    dc.backward(loss_value(), params)
    analytic, numeric = [], []
    for p in params:
        flat = p.data.reshape(-1)
        for i in rng.choice(flat.size, size=min(2, flat.size), replace=False):
            original = flat[i]
            flat[i] = original + EPS
            with dc.no_grad():
                up = loss_value().item()
            flat[i] = original - EPS
            with dc.no_grad():
                down = loss_value().item()
            flat[i] = original
            analytic.append(p.grad.reshape(-1)[i])
            numeric.append((up - down) / (2 * EPS))
    analytic, numeric = np.array(analytic), np.array(numeric)
    assert np.linalg.norm(numeric) > 0
    error = np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)
    assert error < TOLERANCE, f"relative gradient error {error:.2e}"


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, '-q']))
