import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad_vec

from etcsim.linalg import (LinalgError, exp_integral, is_hurwitz, is_spd, left_pinv, mat_exp,
                           norm2, observability_index, solve_lyapunov, spectral_info)

from conftest import random_stable


def test_mat_exp_zero_is_identity():
    assert np.array_equal(mat_exp(np.zeros((3, 3)), 2.0), np.eye(3))


@pytest.mark.parametrize("seed", range(5))
def test_mat_exp_matches_eigendecomposition(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(4, 4))
    lam, V = np.linalg.eig(A)
    ref = (V * np.exp(0.7 * lam)) @ np.linalg.inv(V)
    assert np.allclose(mat_exp(A, 0.7), ref.real, rtol=1e-10, atol=1e-12)


def test_mat_exp_rotation():
    A = np.array([[0.0, -1.0], [1.0, 0.0]])
    t = 0.3
    ref = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
    assert np.allclose(mat_exp(A, t), ref, atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_exp_integral_matches_quadrature(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(3, 3))
    L = rng.normal(size=(3, 2))
    a, b = 0.2, 1.1
    ref, _ = quad_vec(lambda s: sla.expm(-A * s) @ L, a, b, epsabs=1e-13, epsrel=1e-12)
    assert np.allclose(exp_integral(A, L, a, b), ref, rtol=1e-10, atol=1e-12)


def test_exp_integral_empty_interval_and_ordering():
    A = np.eye(2)
    L = np.ones((2, 1))
    assert np.array_equal(exp_integral(A, L, 0.5, 0.5), np.zeros((2, 1)))
    with pytest.raises(LinalgError):
        exp_integral(A, L, 1.0, 0.5)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_solve_lyapunov_matches_scipy(seed, n):
    rng = np.random.default_rng(seed)
    M = random_stable(rng, n)
    G = rng.normal(size=(n, n))
    Q = G @ G.T + n * np.eye(n)
    P = solve_lyapunov(M, Q)
    ref = sla.solve_continuous_lyapunov(M.T, -Q)
    assert np.allclose(P, ref, rtol=1e-9, atol=1e-10)
    assert np.allclose(P, P.T)
    assert is_spd(P)
    assert norm2(M.T @ P + P @ M + Q) <= 1e-9 * max(1.0, norm2(Q))


def test_worked_example_controller_lyapunov_solution(worked, worked_dc):
    Mc = worked.A + worked.B @ worked.K
    P = solve_lyapunov(Mc, worked.Q_c)
    assert np.allclose(P, [[2.5, 0.5], [0.5, 0.25]], atol=1e-12)
    assert norm2(Mc.T @ P + P @ Mc + worked.Q_c) <= 1e-10


def test_hurwitz_and_spd():
    assert is_hurwitz(np.diag([-1.0, -2.0]))
    assert not is_hurwitz(np.array([[0.0, -1.0], [1.0, 0.0]]))
    assert is_spd(np.array([[2.0, 0.5], [0.5, 1.0]]))
    assert not is_spd(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert not is_spd(np.array([[1.0, 0.1], [0.0, 1.0]]))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_left_pinv_matches_numpy(seed):
    rng = np.random.default_rng(seed)
    N = rng.normal(size=(5, 3))
    assert np.allclose(left_pinv(N), np.linalg.pinv(N), atol=1e-10)
    assert np.allclose(left_pinv(N) @ N, np.eye(3), atol=1e-10)


def test_left_pinv_rank_deficient():
    with pytest.raises(LinalgError, match="rank deficient"):
        left_pinv(np.array([[1.0, 2.0], [2.0, 4.0]]))


def test_spectral_info():
    osc = spectral_info(np.array([[0.0, -1.0], [1.0, 0.0]]))
    assert not osc.all_real_eig and osc.omega == pytest.approx(2.0)
    real = spectral_info(np.array([[1.0, 1.0], [0.0, 0.5]]))
    assert real.all_real_eig and real.omega == 0.0


def test_observability_index():
    A = np.array([[1.0, 1.0], [0.0, 0.5]])
    assert observability_index(A, [[1.0, 0.0]]) == 2
    assert observability_index(A, np.eye(2)) == 1
    with pytest.raises(LinalgError, match="not observable"):
        observability_index(np.diag([1.0, 2.0]), [[1.0, 0.0]])
