"""Reduced-order model: DMD, sensor-row selection and a modal Kalman filter."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .domain import DomainError, GridSpec, ScalarField
from .oil import EmptySpillError


@dataclass(frozen=True, eq=False)
class DmdModel:
    U: np.ndarray        # (n, n_z) left singular vectors
    S: np.ndarray        # (n_z,) singular values, non-increasing
    Vh: np.ndarray       # (n_z, m) right singular vectors
    A_tilde: np.ndarray  # (n_z, n_z)

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.A_tilde)

    def project(self, x) -> np.ndarray:
        return self.U.T @ np.asarray(x, float)

    def reconstruct(self, z) -> np.ndarray:
        return self.U @ np.asarray(z, float)

    def predict(self, z, steps: int = 1) -> np.ndarray:
        z = np.asarray(z, float)
        for _ in range(steps):
            z = self.A_tilde @ z
        return z


def fit_dmd(X: np.ndarray, n_z: int, stabilize: bool = False) -> DmdModel:
    """Exact-projected DMD of the snapshot sequence ``X`` (one column per time).

    ``stabilize`` pulls eigenvalues outside the unit circle back onto it, so
    long forecasts cannot blow up.
    """
    X = np.asarray(X, float)
    if X.ndim != 2 or X.shape[1] < 2:
        raise DomainError("need at least two snapshots")
    X0, X1 = X[:, :-1], X[:, 1:]
    if X.shape[1] < n_z + 1 or n_z > min(X0.shape) or n_z < 1:
        raise DomainError(f"rank {n_z} needs at least {n_z + 1} snapshots and n_z <= {min(X0.shape)}")
    U, S, Vh = np.linalg.svd(X0, full_matrices=False)
    keep = n_z
    if S[0] == 0:
        raise DomainError("snapshot matrix is zero")
    ok = int(np.count_nonzero(S[:n_z] >= 1e-12 * S[0]))
    if ok < n_z:
        warnings.warn(f"snapshot matrix rank deficient; DMD rank reduced {n_z} -> {ok}", RuntimeWarning)
        keep = ok
    U, S, Vh = U[:, :keep], S[:keep], Vh[:keep]
    A = U.T @ X1 @ Vh.T / S
    if stabilize:
        A = _stabilize(A)
    return DmdModel(U, S, Vh, A)


def _stabilize(A: np.ndarray) -> np.ndarray:
    lam, W = np.linalg.eig(A)
    mag = np.abs(lam)
    if np.all(mag <= 1.0):
        return A
    lam = np.where(mag > 1.0, lam / mag, lam)
    return np.real(W @ np.diag(lam) @ np.linalg.inv(W))


def truncation_bound(X: np.ndarray, n_z: int) -> float:
    """Relative one-step residual bound ``||X'-U A U^T X|| / ||X'||`` for a rank-n_z fit.

    With ``A = U^T X' V S^-1`` the residual of the projected map is at most the
    discarded part of ``X'`` outside span(U) plus the part of ``X'`` driven by
    the discarded directions of ``X``, both in Frobenius norm.
    """
    X = np.asarray(X, float)
    X0, X1 = X[:, :-1], X[:, 1:]
    U, S, Vh = np.linalg.svd(X0, full_matrices=False)
    Ur, Vr = U[:, :n_z], Vh[:n_z].T
    out_of_span = np.linalg.norm(X1 - Ur @ (Ur.T @ X1))
    tail_driven = np.linalg.norm(X1 @ (np.eye(X0.shape[1]) - Vr @ Vr.T))
    return (out_of_span + tail_driven) / np.linalg.norm(X1)


# -- sensing-row selection --------------------------------------------------

def scale_modes(U, S, k_id: float = 0.5) -> np.ndarray:
    U = np.asarray(U, float)
    S = np.asarray(S, float)
    if not S[0] > 0:
        raise DomainError("leading singular value must be positive")
    if k_id == 0:
        return U.copy()
    return U * (S / np.linalg.norm(S)) ** k_id


@dataclass(frozen=True, eq=False)
class IdSelection:
    J: np.ndarray   # selected row indices, length N_p
    K: np.ndarray   # (rows, N_p) interpolation matrix
    k_id: float = 0.5

    @property
    def n_p(self) -> int:
        return len(self.J)

    def residual(self, U_S) -> float:
        """Spectral-norm reconstruction residual ``||U_S - K U_S(J,:)||_2``."""
        U_S = np.asarray(U_S, float)
        return float(np.linalg.norm(U_S - self.K @ U_S[self.J], 2))


def strong_rrqr(A: np.ndarray, k: int, f: float = 2.0, max_swaps: int = 10_000):
    """Column selection by strong rank-revealing QR.

    Starts from column-pivoted QR and swaps a selected column ``i`` with an
    unselected column ``j`` while ``(A_k^-1 B_k)_ij^2 + (gamma_j / omega_i)^2 > f^2``
    (gamma: column norms of the trailing block, omega: reciprocal row norms of
    ``A_k^-1``). Each swap grows ``|det A_k|`` by more than ``f``.

    Returns ``(perm, R)`` where ``perm[:k]`` are the selected columns.
    """
    A = np.asarray(A, float)
    m, n = A.shape
    if not 1 <= k <= min(m, n):
        raise DomainError(f"cannot select {k} columns from a {m}x{n} matrix")
    if f < 1:
        raise DomainError("f must be >= 1")
    _, R, perm = sla.qr(A, mode="economic", pivoting=True)
    for _ in range(max_swaps):
        Ak, Bk = R[:k, :k], R[:k, k:]
        if n == k:
            break
        if abs(Ak[-1, -1]) <= 1e-14 * abs(Ak[0, 0]):
            break  # numerically rank deficient: nothing left to reveal
        Ainv = sla.solve_triangular(Ak, np.eye(k))
        AB = Ainv @ Bk
        gamma = np.linalg.norm(R[k:, k:], axis=0) if m > k else np.zeros(n - k)
        omega = 1.0 / np.linalg.norm(Ainv, axis=1)
        crit = AB**2 + (gamma[None, :] / omega[:, None]) ** 2
        i, j = np.unravel_index(int(np.argmax(crit)), crit.shape)
        if crit[i, j] <= f * f:
            break
        perm[[i, k + j]] = perm[[k + j, i]]
        _, R = sla.qr(A[:, perm], mode="economic")
    else:
        warnings.warn("strong RRQR hit the swap limit", RuntimeWarning)
    return perm, R


def interpolative_decomposition(U_S, n_p: int, f: float = 2.0, k_id: float = 0.5) -> IdSelection:
    """Rows ``J`` and ``K`` with ``U_S ~ K @ U_S[J]``.

    Rows beyond the numerical rank of ``U_S`` are taken in pivoted-QR order;
    they add no information but keep ``|J| = n_p``.
    """
    U_S = np.asarray(U_S, float)
    rows, cols = U_S.shape
    if n_p > rows:
        raise DomainError(f"cannot select {n_p} rows from {rows}")
    if n_p < 1:
        raise DomainError("need at least one row")
    At = U_S.T
    k = min(n_p, cols)
    perm, _ = strong_rrqr(At, k, f)
    J = list(perm[:k])
    if n_p > k:
        _, _, qperm = sla.qr(At, mode="economic", pivoting=True)
        for r in qperm:
            if len(J) == n_p:
                break
            if r not in J:
                J.append(int(r))
        for r in range(rows):
            if len(J) == n_p:
                break
            if r not in J:
                J.append(r)
    J = np.asarray(J, dtype=int)
    K = U_S @ np.linalg.pinv(U_S[J])
    return IdSelection(J, K, k_id)


def rrqr_bound(U_S, n_p: int, f: float = 2.0) -> float:
    """``sigma_{n_p+1}(U_S) * sqrt(1 + f^2 n_p (rows - n_p))``."""
    U_S = np.asarray(U_S, float)
    s = np.linalg.svd(U_S, compute_uv=False)
    tail = s[n_p] if n_p < len(s) else 0.0
    return float(tail * np.sqrt(1 + f * f * n_p * (U_S.shape[0] - n_p)))


def qr_pivot_selection(U, count: int) -> np.ndarray:
    """Rows of ``U`` picked by column-pivoted QR of ``U^T``; needs ``count == n_z``."""
    U = np.asarray(U, float)
    if count != U.shape[1]:
        raise DomainError(f"pivoted QR selects exactly n_z={U.shape[1]} rows, asked for {count}")
    _, _, perm = sla.qr(U.T, mode="economic", pivoting=True)
    return perm[:count]


def rows_to_cells(J, grid: GridSpec) -> np.ndarray:
    """Map stacked-state row indices to flat cell indices."""
    return np.asarray(J, dtype=int) % grid.n_cells


def pdmd_weighting(selection: IdSelection, presence: ScalarField, grid: GridSpec) -> ScalarField:
    """Inverse-distance-to-oil weights on the selected cells, max exactly 1."""
    oil = presence.values != 0
    if not oil.any():
        raise EmptySpillError("no oil presence to weight against")
    if selection.n_p == 0:
        raise DomainError("empty selection")
    X, Y = grid.centers()
    ox, oy = X[oil], Y[oil]
    cells = np.unique(rows_to_cells(selection.J, grid))
    cx, cy = X.ravel()[cells], Y.ravel()[cells]
    d = np.sqrt(np.min((cx[:, None] - ox[None]) ** 2 + (cy[:, None] - oy[None]) ** 2, axis=1))
    d = np.maximum(d, min(grid.dx, grid.dy))
    inv = 1.0 / d
    w = np.zeros(grid.n_cells)
    w[cells] = inv / inv.max()
    return ScalarField(w.reshape(grid.shape), grid)


# -- Kalman filter ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class KalmanState:
    z: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray  # per-measurement noise variance (scalar or matrix)

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, float))
        if not np.allclose(P, P.T, atol=1e-12 * max(1.0, float(np.abs(P).max()))):
            raise DomainError("covariance must be symmetric")

    @property
    def n_z(self) -> int:
        return len(self.z)


def default_noise(S, n_z: int, r_meas: float) -> tuple[np.ndarray, float]:
    """``Q = 1e-4 * trace(S)^2 / n_z * I`` and ``R = r_meas``."""
    q = 1e-4 * float(np.sum(S)) ** 2 / n_z
    return q * np.eye(n_z), float(r_meas)


def _meas_cov(R, m):
    R = np.asarray(R, float)
    if R.ndim == 0:
        return float(R) * np.eye(m)
    return R


def kalman_step(state: KalmanState, A_tilde, y=None, H=None) -> KalmanState:
    """Predict with ``A_tilde`` then update with measurements ``y = H z + v``.

    Uses the Joseph form so the covariance stays symmetric PSD. A singular
    innovation covariance falls back to the pseudo-inverse with a warning.
    """
    A = np.asarray(A_tilde, float)
    z = A @ state.z
    P = A @ state.P @ A.T + state.Q
    P = 0.5 * (P + P.T)
    if H is None or np.size(H) == 0:
        return KalmanState(z, P, state.Q, state.R)
    H = np.atleast_2d(np.asarray(H, float))
    y = np.asarray(y, float).ravel()
    Rm = _meas_cov(state.R, H.shape[0])
    Sinn = H @ P @ H.T + Rm
    Sinn = 0.5 * (Sinn + Sinn.T)
    try:
        c = sla.cho_factor(Sinn)
        if np.min(np.abs(np.diag(c[0]))) < 1e-12 * np.sqrt(np.max(np.abs(np.diag(Sinn)))):
            raise np.linalg.LinAlgError("near singular")
        G = sla.cho_solve(c, H @ P).T
    except (np.linalg.LinAlgError, sla.LinAlgError):
        warnings.warn("singular innovation covariance; using pseudo-inverse", RuntimeWarning)
        G = P @ H.T @ np.linalg.pinv(Sinn, hermitian=True)
    z = z + G @ (y - H @ z)
    IKH = np.eye(len(z)) - G @ H
    P = IKH @ P @ IKH.T + G @ Rm @ G.T
    P = 0.5 * (P + P.T)
    return KalmanState(z, P, state.Q, state.R)


def write_modal_model(path, model: DmdModel, J) -> None:
    """Plain-text export of ``A_tilde``, ``S`` and the selected rows."""
    with open(path, "w") as fh:
        fh.write(f"# rank {model.rank}\n")
        fh.write("# A_tilde\n")
        np.savetxt(fh, model.A_tilde, fmt="%.17g")
        fh.write("# S\n")
        np.savetxt(fh, model.S[None, :], fmt="%.17g")
        fh.write("# J\n")
        np.savetxt(fh, np.asarray(J, dtype=int)[None, :], fmt="%d")


def read_modal_model(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    blocks: dict[str, list] = {}
    cur = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("# rank"):
                continue
            if line.startswith("#"):
                cur = line[1:].strip()
                blocks[cur] = []
            elif line:
                blocks[cur].append([float(t) for t in line.split()])
    return (np.array(blocks["A_tilde"]), np.array(blocks["S"][0]),
            np.array(blocks["J"][0], dtype=int))
