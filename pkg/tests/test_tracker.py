from __future__ import annotations

import numpy as np
import pytest

from subtrack.core_model import Frame, ObservationMask, SubspaceBasis
from subtrack.errors import DimensionMismatchError, InvalidArgumentError, RankDeficiencyError
from subtrack.inner_solver import solve_fit
from subtrack.params import Hyperparams
from subtrack.subspace_update import StepSizeState
from subtrack.tracker import (
    MaskedMatrix,
    TrackerState,
    batch_complete,
    init_tracker,
    process_frame,
    run_stream,
)

from .helpers import full_frame, orthonormal


def _state(U: np.ndarray, params: Hyperparams) -> TrackerState:
    return TrackerState(basis=SubspaceBasis(U), step=StepSizeState.initial(params),
                        frame_index=0, params=params.resolved(U.shape[0]))


def _random_frames(rng, n, count, obs=0.7):
    frames = []
    for _ in range(count):
        mask = ObservationMask.from_bool(rng.random(n) < obs)
        frames.append(Frame.from_observed(mask, rng.standard_normal(mask.size)))
    return frames


def test_init_tracker_is_orthonormal_and_seeded(params):
    st = init_tracker(20, 3, params, seed=7)
    U = st.basis.matrix
    assert U.shape == (20, 3)
    np.testing.assert_allclose(U.T @ U, np.eye(3), atol=1e-12)
    assert st.frame_index == 0
    assert st.params.lam == pytest.approx(1 / np.sqrt(20))
    np.testing.assert_array_equal(init_tracker(20, 3, params, seed=7).basis.matrix, U)
    assert not np.array_equal(init_tracker(20, 3, params, seed=8).basis.matrix, U)


@pytest.mark.parametrize("n,r", [(5, 0), (5, 5), (5, 6)])
def test_init_tracker_rejects_bad_rank(params, n, r):
    with pytest.raises(InvalidArgumentError):
        init_tracker(n, r, params, seed=0)


def test_consistent_frame_is_fixed_point(rng):
    p = Hyperparams(lam=1e6)
    U = orthonormal(rng, 10, 2)
    b = full_frame(U @ np.array([1.5, -0.5]))
    st, tr = process_frame(_state(U, p), b)
    np.testing.assert_allclose(st.basis.matrix, U, atol=1e-12)
    assert tr.residual_norm <= 1e-12
    assert not np.any(tr.fit.outliers) and not np.any(tr.fit.completion)


def test_zero_frame_leaves_basis_unchanged(rng, params):
    U = orthonormal(rng, 8, 2)
    st0 = _state(U, params)
    b = Frame(np.zeros(8), ObservationMask.from_indices(8, [0, 3, 5]))
    st, tr = process_frame(st0, b)
    np.testing.assert_array_equal(st.basis.matrix, U)
    np.testing.assert_array_equal(tr.fit.coeffs, np.zeros(2))
    assert st.frame_index == 1
    assert st.step.eta == st0.step.eta
    assert tr.mu_used == st0.step.mu


def test_frame_length_must_match(rng, params):
    st = init_tracker(6, 2, params, seed=0)
    with pytest.raises(DimensionMismatchError):
        process_frame(st, full_frame(np.ones(5)))


def test_empty_stream_returns_input_state(params):
    st = init_tracker(6, 2, params, seed=0)
    out, traces = run_stream(st, [])
    assert out is st and traces == []


def test_single_frame_stream_matches_process_frame(rng, params):
    st = init_tracker(12, 3, params, seed=1)
    b = _random_frames(rng, 12, 1)[0]
    via_stream, traces = run_stream(st, [b])
    direct, tr = process_frame(st, b)
    np.testing.assert_array_equal(via_stream.basis.matrix, direct.basis.matrix)
    assert via_stream.step.mu == direct.step.mu
    assert len(traces) == 1 and traces[0].mu_used == tr.mu_used


def test_stream_result_depends_on_order(rng, params):
    st = init_tracker(12, 3, params, seed=1)
    frames = _random_frames(rng, 12, 2)
    forward, _ = run_stream(st, frames)
    backward, _ = run_stream(st, frames[::-1])
    assert not np.allclose(forward.basis.matrix, backward.basis.matrix)


def test_tracking_is_bitwise_deterministic(rng, params):
    frames = _random_frames(rng, 15, 40)
    a, ta = run_stream(init_tracker(15, 3, params, seed=4), frames)
    b, tb = run_stream(init_tracker(15, 3, params, seed=4), frames)
    np.testing.assert_array_equal(a.basis.matrix, b.basis.matrix)
    assert [t.mu_used for t in ta] == [t.mu_used for t in tb]
    assert a.step.eta == b.step.eta


def test_trace_records_mu_before_update(rng, params):
    frames = _random_frames(rng, 10, 5)
    st = init_tracker(10, 2, params, seed=2)
    mus = []
    run_stream(st, frames, on_trace=lambda s, t: mus.append((t.mu_used, s.step.mu)))
    for (_, after), (used_next, _) in zip(mus, mus[1:]):
        assert used_next == after
    lo, hi = st.params.mu_bounds
    assert all(lo <= after <= hi for _, after in mus)


def test_large_lambda_with_full_observation_keeps_s_and_e_zero(rng):
    frames = [full_frame(rng.standard_normal(12)) for _ in range(30)]
    p = Hyperparams(lam=10.0 * max(np.linalg.norm(b.values) for b in frames))
    U = orthonormal(rng, 12, 3)
    end, traces = run_stream(_state(U, p), frames)
    assert len(traces) == 30
    for tr in traces:
        assert not np.any(tr.fit.outliers)
        assert not np.any(tr.fit.completion)
        assert tr.s_nnz == 0
    assert not np.allclose(end.basis.matrix, U)


def test_rank_failure_raises_or_skips(rng):
    U = np.ones((6, 2))
    b = full_frame(rng.standard_normal(6))
    with pytest.raises(RankDeficiencyError):
        process_frame(_state(U, Hyperparams()), b)
    st, tr = process_frame(_state(U, Hyperparams(skip_on_rank_fail=True)), b)
    assert tr.skipped and tr.rank_degraded
    assert st.frame_index == 1
    np.testing.assert_array_equal(st.basis.matrix, U)


def test_reorthonormalize_schedule(rng):
    p = Hyperparams(reorthonormalize_every=2)
    frames = _random_frames(rng, 10, 4, obs=1.0)
    st = init_tracker(10, 2, p, seed=3)
    st1, _ = run_stream(st, frames[:1])
    st2, _ = run_stream(st, frames[:2])
    assert np.linalg.norm(st1.basis.matrix.T @ st1.basis.matrix - np.eye(2)) > 1e-6
    np.testing.assert_allclose(st2.basis.matrix.T @ st2.basis.matrix, np.eye(2), atol=1e-12)


def test_batch_with_no_columns_returns_initial_basis(params):
    B = MaskedMatrix(np.zeros((6, 0)), np.zeros((6, 0), dtype=bool))
    res = batch_complete(B, 2, params, epochs=1, seed=5)
    np.testing.assert_array_equal(res.basis.matrix, init_tracker(6, 2, params, seed=5).basis.matrix)
    assert res.coeffs.shape == (2, 0) and res.outliers.shape == (6, 0)


def test_batch_rejects_zero_epochs(params):
    B = MaskedMatrix(np.ones((6, 3)), np.ones((6, 3), dtype=bool))
    with pytest.raises(InvalidArgumentError):
        batch_complete(B, 2, params, epochs=0, seed=0)


def test_single_epoch_batch_matches_stream(rng, params):
    frames = _random_frames(rng, 10, 6)
    B = MaskedMatrix.from_frames(10, frames)
    res = batch_complete(B, 2, params, epochs=1, seed=9)
    streamed, _ = run_stream(init_tracker(10, 2, params, seed=9), frames)
    np.testing.assert_array_equal(res.basis.matrix, streamed.basis.matrix)
    for j, b in enumerate(frames):
        fit, _ = solve_fit(streamed.basis, b, streamed.params)
        np.testing.assert_allclose(res.coeffs[:, j], fit.coeffs, atol=1e-12)
        np.testing.assert_allclose(res.outliers[:, j], fit.outliers, atol=1e-12)
    assert len(res.traces) == 6
    assert res.reconstruction().shape == (10, 6)


def test_masked_matrix_zeroes_unobserved_entries():
    B = MaskedMatrix(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[True, False], [True, True]]))
    np.testing.assert_array_equal(B.values, [[1.0, 0.0], [3.0, 4.0]])
    cols = B.columns()
    assert cols[1].mask.indices.tolist() == [1]
