import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spillsense.domain import DomainError, GridSpec, ScalarField
from spillsense.oil import EmptySpillError
from spillsense.rom import (IdSelection, KalmanState, default_noise, fit_dmd, interpolative_decomposition,
                            kalman_step, pdmd_weighting, qr_pivot_selection, read_modal_model, rrqr_bound,
                            scale_modes, truncation_bound, write_modal_model)


def lti_snapshots(rng, n=40, r=5, steps=30):
    lam = np.array([0.95, 0.9, -0.6, 0.5, 0.3])[:r]
    W = np.linalg.qr(rng.standard_normal((n, r)))[0] @ rng.standard_normal((r, r))
    A = W @ np.diag(lam) @ np.linalg.pinv(W)
    X = np.empty((n, steps))
    X[:, 0] = W @ rng.standard_normal(r)
    for k in range(1, steps):
        X[:, k] = A @ X[:, k - 1]
    return X, lam


def test_dmd_recovers_lti_eigenvalues(rng):
    X, lam = lti_snapshots(rng)
    m = fit_dmd(X, 5)
    assert np.allclose(np.sort(m.eigenvalues().real), np.sort(lam), atol=1e-8)
    assert np.allclose(m.eigenvalues().imag, 0, atol=1e-8)
    assert np.allclose(m.U.T @ m.U, np.eye(5), atol=1e-10)
    assert np.all(np.diff(m.S) <= 0)


def test_dmd_constant_snapshot():
    X = np.tile(np.array([[1.0], [2.0], [3.0]]), (1, 4))
    m = fit_dmd(X, 1)
    assert np.allclose(m.A_tilde, [[1.0]])


def test_dmd_rank_deficiency_warns():
    X = np.tile(np.array([[1.0], [2.0], [3.0]]), (1, 5))
    with pytest.warns(RuntimeWarning):
        m = fit_dmd(X, 2)
    assert m.rank == 1


def test_dmd_preconditions():
    with pytest.raises(DomainError):
        fit_dmd(np.ones((5, 3)), 3)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 6))
def test_dmd_training_residual_within_truncation_bound(seed, n_z):
    X = np.random.default_rng(seed).standard_normal((20, 12))
    m = fit_dmd(X, n_z)
    X0, X1 = X[:, :-1], X[:, 1:]
    res = np.linalg.norm(X1 - m.U @ m.A_tilde @ m.U.T @ X0) / np.linalg.norm(X1)
    assert res <= truncation_bound(X, n_z) + 1e-12


def test_stabilized_forecast_bounded(rng):
    n = 10
    A = np.diag(np.r_[1.05, np.linspace(0.2, 0.8, n - 1)])
    X = np.empty((n, 15))
    X[:, 0] = rng.standard_normal(n)
    for k in range(1, 15):
        X[:, k] = A @ X[:, k - 1]
    m = fit_dmd(X, 3, stabilize=True)
    assert np.max(np.abs(m.eigenvalues())) <= 1 + 1e-12


def test_reconstruct_is_linear(rng):
    m = fit_dmd(rng.standard_normal((30, 10)), 4)
    z1, z2 = rng.standard_normal(4), rng.standard_normal(4)
    assert np.allclose(m.reconstruct(2 * z1 - 3 * z2), 2 * m.reconstruct(z1) - 3 * m.reconstruct(z2),
                       rtol=0, atol=1e-12)


def test_scale_modes():
    U = np.eye(3)[:, :2]
    assert np.array_equal(scale_modes(U, [3.0, 4.0], 0.0), U)
    assert np.allclose(scale_modes(U, [3.0, 4.0], 1.0)[[0, 1], [0, 1]], [0.6, 0.8])
    assert np.allclose(scale_modes(U, [3.0, 4.0])[[0, 1], [0, 1]], np.sqrt([0.6, 0.8]))
    with pytest.raises(DomainError):
        scale_modes(U, [0.0, 0.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_id_residual_respects_rrqr_bound(seed):
    A = np.random.default_rng(seed).standard_normal((200, 5))
    sel = interpolative_decomposition(A, 3)
    assert sel.residual(A) <= rrqr_bound(A, 3) * (1 + 1e-12)
    assert len(set(sel.J.tolist())) == 3


def test_id_exact_at_full_rank(rng):
    A = rng.standard_normal((200, 5))
    assert interpolative_decomposition(A, 5).residual(A) < 1e-10
    b = np.outer(rng.standard_normal(50), rng.standard_normal(4))
    assert interpolative_decomposition(b, 1).residual(b) < 1e-10


def test_id_more_rows_than_rank(rng):
    A = rng.standard_normal((30, 3))
    sel = interpolative_decomposition(A, 6)
    assert sel.n_p == 6 and len(set(sel.J.tolist())) == 6 and sel.residual(A) < 1e-10
    with pytest.raises(DomainError):
        interpolative_decomposition(A, 31)


def test_kid_zero_is_unweighted_selection(rng):
    U = np.linalg.qr(rng.standard_normal((60, 4)))[0]
    S = np.array([5.0, 3.0, 1.0, 0.5])
    a = interpolative_decomposition(scale_modes(U, S, 0.0), 3, k_id=0.0)
    b = interpolative_decomposition(U, 3)
    assert np.array_equal(a.J, b.J)
    assert IdSelection(a.J, a.K).k_id == 0.5


def test_qr_pivot_selection():
    U = np.eye(6)[:, :3]
    assert sorted(qr_pivot_selection(U, 3)) == [0, 1, 2]
    perm = np.random.default_rng(1).permutation(8)
    V = np.eye(8)[perm][:, :3]
    assert set(qr_pivot_selection(V, 3)) == set(np.nonzero(V.any(axis=1))[0])
    with pytest.raises(DomainError):
        qr_pivot_selection(U, 2)


def test_pdmd_weighting():
    g = GridSpec(10, 3, 1.0, 1.0)
    pres = np.zeros(g.shape)
    pres[0, 0] = 1.0
    # flat rows i*3: cells (2, 0) and (4, 0) at distances 2 and 4
    sel = IdSelection(np.array([6, 12]), np.zeros((30, 2)))
    w = pdmd_weighting(sel, ScalarField(pres, g), g).values
    assert w[2, 0] == 1.0 and w[4, 0] == 0.5
    assert np.count_nonzero(w) == 2
    inside = pdmd_weighting(IdSelection(np.array([0]), np.zeros((30, 1))), ScalarField(pres, g), g).values
    assert inside[0, 0] == 1.0
    with pytest.raises(EmptySpillError):
        pdmd_weighting(sel, ScalarField.zeros(g), g)


def test_kalman_prediction_only(rng):
    s = KalmanState(rng.standard_normal(3), np.eye(3), 0.1 * np.eye(3), 0.01)
    A = rng.standard_normal((3, 3))
    out = kalman_step(s, A)
    assert np.allclose(out.z, A @ s.z) and np.allclose(out.P, A @ A.T + 0.1 * np.eye(3))


def test_kalman_exact_measurement_is_least_squares(rng):
    U = np.linalg.qr(rng.standard_normal((12, 4)))[0]
    H = U[[0, 3, 7, 10]]
    y = rng.standard_normal(4)
    s = KalmanState(np.zeros(4), np.eye(4), np.zeros((4, 4)), 1e-14)
    out = kalman_step(s, np.eye(4), y, H)
    assert np.allclose(out.z, np.linalg.lstsq(H, y, rcond=None)[0], rtol=0, atol=1e-8)


def test_kalman_repeated_measurement_contracts(rng):
    s = KalmanState(np.zeros(3), np.eye(3), np.zeros((3, 3)), 0.5)
    H = rng.standard_normal((2, 3))
    tr = [np.trace(s.P)]
    for _ in range(20):
        s = kalman_step(s, np.eye(3), H @ np.ones(3), H)
        tr.append(np.trace(s.P))
    assert np.all(np.diff(tr) <= 1e-12)


def test_kalman_singular_innovation_warns():
    s = KalmanState(np.zeros(2), np.zeros((2, 2)), np.zeros((2, 2)), 0.0)
    with pytest.warns(RuntimeWarning):
        kalman_step(s, np.eye(2), [1.0], [[1.0, 0.0]])


def test_default_noise():
    Q, R = default_noise([3.0, 1.0], 2, 0.1)
    assert np.allclose(Q, 1e-4 * 16 / 2 * np.eye(2)) and R == 0.1


def test_modal_model_roundtrip(tmp_path, rng):
    m = fit_dmd(rng.standard_normal((15, 8)), 3)
    p = tmp_path / "m.txt"
    write_modal_model(p, m, [4, 1, 9])
    A, S, J = read_modal_model(p)
    assert np.array_equal(A, m.A_tilde) and np.array_equal(S, m.S) and list(J) == [4, 1, 9]
