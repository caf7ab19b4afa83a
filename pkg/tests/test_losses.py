import math

import numpy as np
import pytest

from repcount.losses import LossReport, mean_report, sse_loss, total_loss, treco_loss


def central_diff(fn, x, h=1e-4):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (fn(xp) - fn(xm)) / (2 * h)
    return g


def test_treco_perfect_match():
    S = np.random.default_rng(0).uniform(size=(5, 5))
    loss, grad = treco_loss(S, S)
    assert loss == 0.0 and not grad.any()


def test_treco_empty_mask():
    S = np.random.default_rng(1).uniform(size=(4, 4))
    loss, grad = treco_loss(S, np.zeros((4, 4)))
    assert loss == 0.0 and not grad.any()


def test_treco_masks_off_diagonal():
    loss, _ = treco_loss(np.array([[1, 0.5], [0.5, 1]]), np.eye(2))
    assert loss == 0.0


def test_treco_shape_mismatch():
    with pytest.raises(ValueError):
        treco_loss(np.zeros((2, 2)), np.zeros((3, 3)))


def test_sse_examples():
    assert sse_loss([0.2, 0.4], [0.2, 0.4])[0] == 0.0
    loss, grad = sse_loss([1.0, 0.0], [0.0, 0.0])
    assert loss == 1.0
    np.testing.assert_array_equal(grad, [-2.0, 0.0])


def test_sse_matches_summation_oracle():
    rng = np.random.default_rng(2)
    a, b = rng.uniform(size=16), rng.uniform(size=16)
    expected = math.fsum((ai - bi) ** 2 for ai, bi in zip(a, b))
    assert sse_loss(a, b)[0] == pytest.approx(expected, rel=1e-14)


def test_sse_length_mismatch():
    with pytest.raises(ValueError):
        sse_loss([1, 2], [1])


def test_total_loss():
    assert total_loss(0, 0).total == 0
    rep = total_loss(1.0, 2.0, 1e-5)
    assert rep.total == pytest.approx(1.00002, rel=1e-15)
    assert rep.total == rep.sse + rep.lam * rep.treco
    assert total_loss(3.0, 7.0, 0.0).total == 3.0
    with pytest.raises(ValueError):
        total_loss(-1.0, 0.0)
    with pytest.raises(ValueError):
        total_loss(1.0, 1.0, -0.1)


def test_default_lambda():
    assert total_loss(0.0, 1.0).lam == 1.0e-5


@pytest.mark.parametrize("seed", range(50))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    T = int(rng.integers(1, 9))
    S = rng.uniform(size=(T, T))
    S_ref = np.where(rng.uniform(size=(T, T)) < 0.5, 0.0, rng.uniform(size=(T, T)))
    a, b = rng.uniform(size=T), rng.uniform(size=T)

    _, g = treco_loss(S, S_ref)
    num = central_diff(lambda s: treco_loss(s, S_ref)[0], S)
    mask = np.abs(g) + np.abs(num) > 1e-8
    assert np.all(np.abs(g - num)[mask] / np.maximum(np.abs(g), np.abs(num))[mask] < 1e-4)

    _, g = sse_loss(a, b)
    num = central_diff(lambda p: sse_loss(a, p)[0], b)
    mask = np.abs(g) + np.abs(num) > 1e-8
    assert np.all(np.abs(g - num)[mask] / np.maximum(np.abs(g), np.abs(num))[mask] < 1e-4)


def test_treco_ignores_masked_entries():
    rng = np.random.default_rng(3)
    S = rng.uniform(size=(6, 6))
    S_ref = np.where(rng.uniform(size=(6, 6)) < 0.5, 0.0, 1.0)
    loss, grad = treco_loss(S, S_ref)
    S2 = S.copy()
    S2[S_ref == 0] = rng.uniform(size=int((S_ref == 0).sum()))
    loss2, grad2 = treco_loss(S2, S_ref)
    assert loss == loss2
    np.testing.assert_array_equal(grad, grad2)


def test_losses_zero_only_on_support_match():
    S_ref = np.array([[1.0, 0.0], [0.0, 0.5]])
    assert treco_loss(np.array([[1.0, 0.9], [0.1, 0.5]]), S_ref)[0] == 0.0
    assert treco_loss(np.array([[0.9, 0.0], [0.0, 0.5]]), S_ref)[0] > 0.0
    assert sse_loss([0.0, 1.0], [0.0, 0.9])[0] > 0.0


def test_mean_report():
    r = mean_report([LossReport(1, 2, 1.2, 0.1), LossReport(3, 4, 3.4, 0.1)])
    assert (r.sse, r.treco, r.total) == (2, 3, pytest.approx(2.3))
