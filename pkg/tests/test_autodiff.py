import numpy as np
import pytest

import locgen.autodiff as ad


def fd_check(build, params, eps=1e-6, tol=1e-6):
    """Central finite differences against every coordinate of every parameter."""
    out = build()
    out.backward()
    for p in params:
        assert p.grad is not None
        analytic = p.grad.copy()
        numeric = np.zeros_like(analytic)
        it = np.nditer(analytic, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p.data[i]
            p.data[i] = old + eps
            hi = build().item()
            p.data[i] = old - eps
            lo = build().item()
            p.data[i] = old
            numeric[i] = (hi - lo) / (2 * eps)
        denom = np.maximum(1e-8, np.maximum(np.abs(analytic), np.abs(numeric)))
        assert (np.abs(analytic - numeric) / denom).max() < tol
        p.zero_grad()


def test_arithmetic_and_broadcast():
    rng = np.random.default_rng(0)
    a = ad.parameter(rng.normal(size=(3, 4)))
    b = ad.parameter(rng.normal(size=(4,)))
    c = ad.parameter(rng.normal(size=(3, 1)))
    fd_check(lambda: ((a * b - c / (b**2 + 2.0) + 3.0) * (a + 1.5)).sum(), [a, b, c])


def test_matmul_batched():
    rng = np.random.default_rng(1)
    a = ad.parameter(rng.normal(size=(2, 3, 4)))
    w = ad.parameter(rng.normal(size=(4, 5)))
    fd_check(lambda: ((a @ w) ** 2).sum(), [a, w])
    q = ad.parameter(rng.normal(size=(2, 2, 3, 4)))
    k = ad.parameter(rng.normal(size=(2, 2, 3, 4)))
    fd_check(lambda: (q @ k.swapaxes(-1, -2)).tanh().sum(), [q, k])


def test_elementwise_chain():
    rng = np.random.default_rng(2)
    x = ad.parameter(rng.uniform(0.5, 2.0, size=(6,)))
    fd_check(lambda: (x.log() + x.sqrt() * x.exp().sigmoid() + ad.gelu(x)).tanh().sum(), [x])


def test_abs_clip_minmax():
    rng = np.random.default_rng(3)
    x = ad.parameter(rng.normal(size=(8,)) * 2.0)
    y = ad.parameter(rng.normal(size=(8,)) * 2.0)
    fd_check(
        lambda: (ad.maximum(x, y) * 2.0 + ad.minimum(x * 0.5, y) + x.abs() + x.clip(-1.0, 1.0)).sum(),
        [x, y],
    )


def test_reductions_axes():
    rng = np.random.default_rng(4)
    x = ad.parameter(rng.normal(size=(3, 4, 5)))
    fd_check(lambda: (x.sum(axis=1) ** 2).mean() + x.mean(axis=(0, 2)).sum(), [x])


def test_shape_ops():
    rng = np.random.default_rng(5)
    x = ad.parameter(rng.normal(size=(2, 6)))
    fd_check(
        lambda: (
            x.reshape(3, 4).transpose(1, 0)[1:3, :] @ ad.constant(np.ones((3, 2)))
        ).sum(),
        [x],
    )


def test_concat_stack_where():
    rng = np.random.default_rng(6)
    a = ad.parameter(rng.normal(size=(3, 2)))
    b = ad.parameter(rng.normal(size=(3, 3)))
    mask = np.array([[True, False], [False, True], [True, True]])
    fd_check(
        lambda: (
            ad.concat([a, b], axis=1).sum()
            + ad.stack([a, a * 2.0], axis=0).sum()
            + ad.where(mask, a, a * 3.0).sum()
        ),
        [a, b],
    )


def test_take_and_gather():
    rng = np.random.default_rng(7)
    table = ad.parameter(rng.normal(size=(5, 3)))
    ids = np.array([[0, 2], [4, 2]])
    logits = ad.parameter(rng.normal(size=(4, 6)))
    target = np.array([1, 0, 5, 2])
    fd_check(
        lambda: ad.take(table, ids).sum() + ad.gather_last(ad.log_softmax(logits), target).sum(),
        [table, logits],
    )


def test_softmax_sums_to_one():
    x = ad.constant(np.random.default_rng(8).normal(size=(4, 7)) * 5)
    s = ad.softmax(x, axis=-1)
    np.testing.assert_allclose(s.data.sum(-1), np.ones(4), atol=1e-12)


def test_no_grad_blocks_graph():
    x = ad.parameter(np.ones(3))
    with ad.no_grad():
        y = (x * 2.0).sum()
    assert not y.requires_grad
    y2 = (x * 2.0).sum()
    assert y2.requires_grad


def test_backward_requires_scalar():
    x = ad.parameter(np.ones(3))
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_grad_accumulates_across_uses():
    x = ad.parameter(np.array([2.0]))
    y = x * x + x * 3.0
    y.backward(np.array([1.0]))
    assert x.grad[0] == pytest.approx(2 * 2.0 + 3.0)
