"""Small dense linear algebra shared by the samplers, zoom laws and design code.

All matrix norms are spectral (induced 2-) norms. Sizes are expected to be
tiny (n <= 20), so nothing here tries to be clever about scaling.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

# |Im(lambda)| <= REAL_EIG_TOL * (1 + |lambda|) counts as a real eigenvalue.
REAL_EIG_TOL = 1e-9
# Re(lambda) < -HURWITZ_TOL is required for a strictly stable matrix.
HURWITZ_TOL = 1e-9


class LinalgError(ValueError):
    pass


def as_matrix(a, name="matrix"):
    """Return `a` as a finite 2-D float array, promoting 1-D input to a column."""
    m = np.array(a, dtype=float)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    elif m.ndim == 1:
        m = m.reshape(-1, 1)
    elif m.ndim != 2:
        raise LinalgError(f"{name}: expected a 2-D array, got ndim={m.ndim}")
    if m.size == 0:
        raise LinalgError(f"{name}: empty matrix")
    if not np.all(np.isfinite(m)):
        raise LinalgError(f"{name}: non-finite entries")
    return m


def _require_square(a, name):
    if a.shape[0] != a.shape[1]:
        raise LinalgError(f"{name}: expected a square matrix, got shape {a.shape}")


def norm2(a):
    """Spectral norm (largest singular value); Euclidean norm for vectors."""
    a = np.asarray(a, dtype=float)
    if a.ndim <= 1:
        return float(np.linalg.norm(a))
    return float(np.linalg.norm(a, 2))


def mat_exp(A, t=1.0):
    """Matrix exponential ``exp(A t)``.

    Backed by :func:`scipy.linalg.expm` (scaling and squaring with Pade
    approximants).
    """
    A = as_matrix(A, "A")
    _require_square(A, "A")
    return sla.expm(A * float(t))


def exp_integral(A, L, a, b):
    r"""Compute :math:`\int_a^b e^{-As} L \, ds` exactly.

    Uses the upper-right block of the exponential of the augmented matrix
    ``[[-A, L], [0, 0]]``: over ``[0, s]`` that block equals
    :math:`\int_0^s e^{-Au} L \, du`. The shift to ``[a, b]`` is the
    left factor :math:`e^{-Aa}`.

    Parameters
    ----------
    A : array_like, shape (n, n)
    L : array_like, shape (n, p)
    a, b : float
        Integration limits, ``a <= b``.

    Returns
    -------
    ndarray, shape (n, p)
    """
    A = as_matrix(A, "A")
    _require_square(A, "A")
    L = as_matrix(L, "L")
    if L.shape[0] != A.shape[0]:
        raise LinalgError(f"L has {L.shape[0]} rows, A is {A.shape[0]}x{A.shape[0]}")
    if a > b:
        raise LinalgError(f"exp_integral: lower limit {a} exceeds upper limit {b}")
    n, p = L.shape
    if a == b:
        return np.zeros((n, p))
    aug = np.zeros((n + p, n + p))
    aug[:n, :n] = -A
    aug[:n, n:] = L
    blk = sla.expm(aug * (b - a))[:n, n:]
    if a == 0.0:
        return blk
    return sla.expm(-A * a) @ blk


def eigenvalues(A):
    return np.linalg.eigvals(as_matrix(A, "A"))


def is_hurwitz(M, tol=HURWITZ_TOL):
    return bool(np.all(np.real(eigenvalues(M)) < -tol))


def is_spd(Q, rtol=1e-12):
    """Symmetric (to ``rtol``) and Cholesky-factorizable."""
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        return False
    scale = max(1.0, np.abs(Q).max())
    if np.abs(Q - Q.T).max() > rtol * scale:
        return False
    try:
        np.linalg.cholesky(0.5 * (Q + Q.T))
    except np.linalg.LinAlgError:
        return False
    return True


def solve_lyapunov(M, Q):
    """Solve ``M.T @ P + P @ M = -Q`` for symmetric positive definite ``P``.

    The equation is vectorized with Kronecker products and solved densely,
    which is fine for the state dimensions this package targets.

    Raises
    ------
    LinalgError
        If ``M`` is not Hurwitz (the offending eigenvalues are listed) or
        ``Q`` is not symmetric positive definite.
    """
    M = as_matrix(M, "M")
    _require_square(M, "M")
    Q = as_matrix(Q, "Q")
    if Q.shape != M.shape:
        raise LinalgError(f"Q has shape {Q.shape}, expected {M.shape}")
    if not is_spd(Q):
        raise LinalgError("Q must be symmetric positive definite")
    lam = eigenvalues(M)
    bad = lam[np.real(lam) >= -HURWITZ_TOL]
    if bad.size:
        raise LinalgError(
            "M is not Hurwitz; eigenvalues with Re >= "
            f"{-HURWITZ_TOL:g}: {np.array2string(bad, precision=6)}"
        )
    n = M.shape[0]
    eye = np.eye(n)
    # Column-major vec: vec(M^T P) = (I kron M^T) vec(P), vec(P M) = (M^T kron I) vec(P).
    op = np.kron(eye, M.T) + np.kron(M.T, eye)
    vec_p = np.linalg.solve(op, -Q.reshape(-1, order="F"))
    P = vec_p.reshape((n, n), order="F")
    return 0.5 * (P + P.T)


def left_pinv(N, rtol=1e-12):
    """Moore-Penrose left inverse of a tall full-column-rank matrix.

    Raises
    ------
    LinalgError
        If ``N`` is rank deficient. The message carries the smallest
        singular value.
    """
    N = as_matrix(N, "N")
    q, n = N.shape
    if q < n:
        raise LinalgError(f"left_pinv needs rows >= cols, got shape {N.shape}")
    U, s, Vt = np.linalg.svd(N, full_matrices=False)
    if s[-1] <= rtol * s[0] or s[-1] == 0.0:
        raise LinalgError(
            f"matrix is rank deficient: smallest singular value {s[-1]:.3e} "
            f"(largest {s[0]:.3e})"
        )
    return (Vt.T / s) @ U.T


@dataclass(frozen=True)
class SpectralInfo:
    eigenvalues: np.ndarray
    spec_norm: float
    all_real_eig: bool
    omega: float


def spectral_info(A):
    """Eigenvalues, spectral norm, realness flag and the spread ``omega``.

    ``omega`` is the largest difference of imaginary parts over all
    eigenvalue pairs; it is zero exactly when every eigenvalue is real.
    """
    A = as_matrix(A, "A")
    _require_square(A, "A")
    lam = np.linalg.eigvals(A)
    real = np.abs(lam.imag) <= REAL_EIG_TOL * (1.0 + np.abs(lam))
    im = np.where(real, 0.0, lam.imag)
    omega = float(im.max() - im.min())
    return SpectralInfo(
        eigenvalues=lam,
        spec_norm=norm2(A),
        all_real_eig=bool(real.all()),
        omega=omega,
    )


def observability_matrix(A, C, blocks):
    A = as_matrix(A, "A")
    rows = [np.atleast_2d(np.asarray(C, dtype=float))]
    for _ in range(blocks - 1):
        rows.append(rows[-1] @ A)
    return np.vstack(rows)


def observability_index(A, C, tol=None):
    """Smallest ``eta`` with ``rank col(C, CA, ..., CA^(eta-1)) == n``."""
    A = as_matrix(A, "A")
    _require_square(A, "A")
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape[1] != A.shape[0]:
        raise LinalgError(f"C has {C.shape[1]} columns, A is {A.shape[0]}x{A.shape[0]}")
    n = A.shape[0]
    ranks = []
    for eta in range(1, n + 1):
        obs = observability_matrix(A, C, eta)
        r = int(np.linalg.matrix_rank(obs, tol=tol))
        ranks.append(r)
        if r == n:
            return eta
    raise LinalgError(
        f"(A, C) is not observable: observability ranks by depth {ranks}, need {n}"
    )
