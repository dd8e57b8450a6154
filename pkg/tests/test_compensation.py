import numpy as np
import pytest

from subbit.compensation import build_hessian, compensate_block
from subbit.errors import ValidationError


def test_two_by_two_closed_form():
    ctx = build_hessian(np.array([[1.0, 0.0]]), lambda_rel=0.01)
    np.testing.assert_array_equal(ctx.H, np.diag([2.0, 0.0]))
    assert ctx.lambda_used == pytest.approx(0.01)
    # (H + lam I)^-1 is diagonal, so its upper factor is diag(1/sqrt(.))
    np.testing.assert_allclose(ctx.diag, [1 / np.sqrt(2.01), 1 / np.sqrt(0.01)], rtol=1e-12)
    assert ctx.retries == 0


def test_hessian_scales_quadratically():
    X = np.random.default_rng(0).standard_normal((10, 5))
    np.testing.assert_allclose(build_hessian(3 * X).H, 9 * build_hessian(X).H, rtol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_factor_reproduces_damped_inverse(seed):
    X = np.random.default_rng(seed).standard_normal((24, 16))
    ctx = build_hessian(X)
    inv = np.linalg.inv(ctx.H + ctx.lambda_used * np.eye(16))
    np.testing.assert_allclose(ctx.hc.T @ ctx.hc, inv, rtol=1e-5, atol=1e-12 * np.abs(inv).max())
    assert np.allclose(ctx.hc, np.triu(ctx.hc))


def test_zero_calibration_still_factors():
    ctx = build_hessian(np.zeros((3, 4)))
    assert np.all(ctx.diag > 0)


def test_rejects_bad_arguments():
    with pytest.raises(ValidationError):
        build_hessian(np.ones((2, 2)), lambda_rel=0.0)
    with pytest.raises(ValidationError):
        build_hessian(np.ones((0, 2)))


def _setup(seed, cols=12):
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((6, cols))
    ctx = build_hessian(rng.standard_normal((20, cols)))
    return W, ctx


def test_zero_error_leaves_tail():
    W, ctx = _setup(0)
    before = W.copy()
    compensate_block(W, W[:, 0:4].copy(), ctx, 0, 4)
    np.testing.assert_array_equal(W, before)


def test_last_block_is_noop():
    W, ctx = _setup(1)
    before = W.copy()
    compensate_block(W, np.zeros((6, 4)), ctx, 8, 12)
    np.testing.assert_array_equal(W, before)


def test_only_tail_changes():
    W, ctx = _setup(2)
    before = W.copy()
    compensate_block(W, np.sign(W[:, 4:8]), ctx, 4, 8)
    np.testing.assert_array_equal(W[:, :8], before[:, :8])
    assert not np.array_equal(W[:, 8:], before[:, 8:])


def test_update_formula():
    W, ctx = _setup(3)
    B = np.sign(W[:, :4])
    expected = W[:, 4:] - ((W[:, :4] - B) / np.diag(ctx.hc)[:4]) @ ctx.hc[:4, 4:]
    compensate_block(W, B, ctx, 0, 4)
    np.testing.assert_allclose(W[:, 4:], expected, rtol=1e-14)


def test_update_shrinks_with_damping():
    rng = np.random.default_rng(4)
    W0 = rng.standard_normal((6, 12))
    X = rng.standard_normal((8, 12)) @ rng.standard_normal((12, 12))
    norms = []
    for lam in (1e-3, 1e-2, 1e-1, 1.0, 10.0, 1e3):
        W = W0.copy()
        compensate_block(W, np.sign(W[:, :4]), build_hessian(X, lam), 0, 4)
        norms.append(np.linalg.norm(W - W0))
    assert all(a > b for a, b in zip(norms, norms[1:]))


def test_block_bounds_checked():
    W, ctx = _setup(5)
    with pytest.raises(ValidationError):
        compensate_block(W, W[:, :4], ctx, 10, 14)
