from __future__ import annotations

import math

import numpy as np
import pytest

from subtrack.core_model import FitResult, Frame, ObservationMask, SubspaceBasis
from subtrack.errors import InvalidArgumentError, RankDeficiencyError
from subtrack.inner_solver import solve_fit
from subtrack.params import Hyperparams
from subtrack.subspace_update import (
    StepSizeState,
    apply_update,
    descent_direction,
    reorthonormalize,
    sigmoid,
    surrogate_value,
    update_step_size,
)

from .helpers import full_frame, orthonormal, projector


def _instance(rng, n=5, r=2, lam=0.3):
    U = SubspaceBasis(rng.standard_normal((n, r)))
    mask = ObservationMask.from_bool(rng.random(n) < 0.8)
    b = Frame.from_observed(mask, rng.standard_normal(mask.size))
    fit, _ = solve_fit(U, b, Hyperparams(lam=lam))
    return U, b, fit


def test_zero_coefficients_give_zero_direction(rng):
    U = SubspaceBasis(orthonormal(rng, 5, 2))
    b = full_frame(rng.standard_normal(5))
    D = descent_direction(U, FitResult(np.zeros(2), np.zeros(5), np.zeros(5)), b)
    assert D.shape == (5, 2) and not np.any(D)


def test_perfect_fit_gives_zero_direction(rng):
    U = SubspaceBasis(orthonormal(rng, 5, 2))
    a = np.array([1.0, -1.0])
    D = descent_direction(U, FitResult(a, np.zeros(5), np.zeros(5)), full_frame(U.matrix @ a))
    np.testing.assert_allclose(D, 0.0, atol=1e-15)


def test_scalar_direction_equals_matrix_form(rng):
    for _ in range(20):
        U, b, fit = _instance(rng)
        a = fit.coeffs
        res = b.values - (U.matrix @ a + fit.outliers + fit.completion)
        matrix_form = np.outer(res, a) @ np.linalg.inv(np.eye(a.size) + np.outer(a, a))
        np.testing.assert_allclose(descent_direction(U, fit, b), matrix_form, atol=1e-12)


def test_apply_update_examples(rng):
    U = SubspaceBasis(orthonormal(rng, 6, 2))
    np.testing.assert_array_equal(apply_update(U, np.zeros((6, 2)), 0.5).matrix, U.matrix)
    D = rng.standard_normal((6, 2))
    moved = apply_update(U, D, 1e12)
    assert np.linalg.norm(moved.matrix - U.matrix) <= 1e-9 * np.linalg.norm(D)
    with pytest.raises(InvalidArgumentError):
        apply_update(U, D, 0.0)


def test_update_minimizes_surrogate(rng):
    U, b, fit = _instance(rng, n=8, r=3)
    mu = 0.4
    best = apply_update(U, descent_direction(U, fit, b), mu).matrix
    q_best = surrogate_value(best, U, fit, b, mu, 0.3)
    for _ in range(100):
        other = best + 1e-3 * rng.standard_normal(best.shape)
        assert q_best <= surrogate_value(other, U, fit, b, mu, 0.3)


def test_surrogate_gradient_vanishes_at_update(rng):
    U, b, fit = _instance(rng, n=6, r=2)
    mu = 0.25
    best = apply_update(U, descent_direction(U, fit, b), mu).matrix
    h = 1e-5
    grad = np.zeros_like(best)
    for idx in np.ndindex(best.shape):
        step = np.zeros_like(best)
        step[idx] = h
        grad[idx] = (surrogate_value(best + step, U, fit, b, mu, 0.3)
                     - surrogate_value(best - step, U, fit, b, mu, 0.3)) / (2 * h)
    assert np.max(np.abs(grad)) <= 1e-6


def test_sigmoid_forms():
    assert sigmoid(0.0) == pytest.approx(0.0, abs=1e-15)
    assert sigmoid(1e6) == pytest.approx(1.0)
    assert sigmoid(-1e6) == pytest.approx(-1.0)
    assert sigmoid(0.0, f=1.0, mode="paper-literal") == pytest.approx(2.0)
    assert sigmoid(-1e6, f=2.0, mode="paper-literal") == pytest.approx(6.0)
    assert math.isfinite(sigmoid(-1e308, f=1.0, slope=10.0))
    xs = np.linspace(-1, 1, 41)
    ys = [sigmoid(x, f=1.5) for x in xs]
    assert all(np.diff(ys) > 0)
    for x in xs:
        assert sigmoid(-x, f=1.5) == pytest.approx(-sigmoid(x, f=1.5), abs=1e-15)
        assert np.sign(sigmoid(x)) == np.sign(x)
    with pytest.raises(InvalidArgumentError):
        sigmoid(0.1, mode="other")


def test_step_size_aligned_directions_shrink_mu(rng):
    p = Hyperparams()
    D = rng.standard_normal((6, 2))
    s1 = update_step_size(StepSizeState.initial(p), D, p)
    s2 = update_step_size(s1, D, p)
    assert s2.last_cosine == pytest.approx(1.0)
    assert s2.eta - s1.eta == pytest.approx(math.tanh(5.0), abs=1e-12)
    assert s2.mu < s1.mu


def test_step_size_opposed_directions_grow_mu(rng):
    p = Hyperparams()
    D = rng.standard_normal((6, 2))
    state = StepSizeState(mu=p.C / 9.0, eta=8.0, prev_direction=D)
    nxt = update_step_size(state, -D, p)
    assert nxt.eta == pytest.approx(8.0 - math.tanh(5.0))
    assert nxt.mu > state.mu
    floor = update_step_size(StepSizeState(mu=0.5, eta=1.0, prev_direction=D), -D, p)
    assert floor.eta == p.C


def test_step_size_orthogonal_and_zero_directions():
    p = Hyperparams()
    D1 = np.zeros((4, 2)); D1[0, 0] = 1.0
    D2 = np.zeros((4, 2)); D2[1, 1] = 1.0
    state = StepSizeState(mu=p.C / 6.0, eta=5.0, prev_direction=D1)
    nxt = update_step_size(state, D2, p)
    assert nxt.eta == pytest.approx(5.0) and nxt.mu == pytest.approx(state.mu)
    zero = update_step_size(state, np.zeros((4, 2)), p)
    assert zero.eta == 5.0 and zero.last_cosine is None


def test_zero_direction_keeps_last_nonzero_direction():
    p = Hyperparams()
    D1 = np.zeros((4, 2)); D1[0, 0] = 1.0
    state = StepSizeState(mu=p.C / 6.0, eta=5.0, prev_direction=D1)
    zero = update_step_size(state, np.zeros((4, 2)), p)
    np.testing.assert_array_equal(zero.prev_direction, D1)
    again = update_step_size(zero, 2.0 * D1, p)
    assert again.last_cosine == pytest.approx(1.0)
    assert again.eta > zero.eta
    first = update_step_size(StepSizeState.initial(p), np.zeros((4, 2)), p)
    assert first.prev_direction is None


def test_step_size_stays_in_bounds(rng):
    p = Hyperparams(C=0.5, eta_max=4.0, f=2.0)
    lo, hi = p.mu_bounds
    state = StepSizeState.initial(p)
    for _ in range(300):
        state = update_step_size(state, rng.standard_normal((5, 2)) * (rng.random() < 0.9), p)
        assert p.C <= state.eta <= p.eta_max
        assert lo <= state.mu <= hi
        assert state.mu == pytest.approx(p.C / (1 + state.eta))


def test_unmodified_sigmoid_only_increases_eta(rng):
    p = Hyperparams(sigmoid_mode="paper-literal", eta_max=50.0)
    D = rng.standard_normal((5, 2))
    state = update_step_size(StepSizeState.initial(p), D, p)
    nxt = update_step_size(state, -D, p)
    assert nxt.eta > state.eta


def test_reorthonormalize_examples(rng):
    Q = orthonormal(rng, 5, 2)
    out = reorthonormalize(SubspaceBasis(Q)).matrix
    np.testing.assert_allclose(out.T @ out, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(out @ out.T, Q @ Q.T, atol=1e-12)
    scaled = reorthonormalize(SubspaceBasis(np.array([[2.0, 0.0], [0.0, 3.0], [0.0, 0.0]]))).matrix
    np.testing.assert_allclose(scaled, [[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]], atol=1e-15)


def test_reorthonormalize_preserves_span(rng):
    for _ in range(10):
        M = rng.standard_normal((12, 4))
        Q = reorthonormalize(SubspaceBasis(M)).matrix
        assert np.linalg.norm(Q.T @ Q - np.eye(4)) <= 1e-12
        assert np.linalg.norm(projector(Q) - projector(M)) <= 1e-10


def test_reorthonormalize_rejects_rank_deficient():
    with pytest.raises(RankDeficiencyError):
        reorthonormalize(SubspaceBasis(np.array([[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]])))
