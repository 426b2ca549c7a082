import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from etcsim.input_unit import (MU_MIN, MuLaw, input_event_value, k_star, mu_init, mu_update,
                               nu_jump_check, zeta_constants)

K5 = np.array([[-6.0, -4.5]])


def test_event_value_examples():
    # held value equals current state: only the negative thresholds remain
    v = input_event_value(K5, [1.0, 2.0], [1.0, 2.0], 0.5, 0.38, 0.1, 100.0, 1.0)
    assert v == pytest.approx(-0.38 * math.sqrt(5) - 0.1 * 100 * 0.5)
    # zero thresholds: the value is the nominal-input drift
    v = input_event_value(K5, [1.0, 0.0], [0.0, 0.0], 0.0, 0.0, 0.0, 1.0, 1.0)
    assert v == pytest.approx(6.0)
    v = input_event_value(np.eye(2), [3.0, 4.0], [0.0, 0.0], 0.0, 1.0, 0.0, 1.0, 1.0)
    assert v == pytest.approx(0.0, abs=1e-15)


def test_nu_jump_check():
    args = (K5, [1.0, 0.0], [0.0, 0.0])
    # drift 6 - beta_c |z| = 5.62: the zoom threshold 100 nu drops below it between 0.1 and 0.05
    assert nu_jump_check(*args, 0.1, 0.05, 0.38, 1.0, 100.0, 1.0)
    assert not nu_jump_check(*args, 1.0, 0.5, 0.38, 1.0, 100.0, 1.0)      # still below
    assert not nu_jump_check(*args, 0.01, 0.005, 0.38, 1.0, 100.0, 1.0)   # already above


def test_k_star_matches_linear_scan():
    rng = np.random.default_rng(0)
    times = list(np.cumsum(rng.uniform(0.01, 1.0, 200)))
    for t in rng.uniform(times[0], times[-1] + 1, 500):
        ref = max(i for i, s in enumerate(times) if s <= t)
        assert k_star(t, times) == ref
    assert k_star(times[5], times) == 5
    with pytest.raises(ValueError):
        k_star(times[0] - 1e-9, times)
    with pytest.raises(ValueError):
        k_star(0.0, [])


def test_zeta_constants():
    P = np.array([[2.0, 0.25], [0.25, 0.5]])
    Q = np.eye(2)
    z1, z2 = zeta_constants(P, Q, np.zeros((2, 1)), 0.75, 0.01, 0.5)
    lp = np.linalg.eigvalsh(P)[-1]
    assert z2 == 0.0
    assert z1 == pytest.approx(0.5 * 0.75 / (0.25 - 0.01 * lp))
    L = np.array([[4.0], [3.0]])
    z1, z2 = zeta_constants(P, Q, L, 0.75, 0.01, 0.5)
    assert z1 - z2 == pytest.approx(0.5 * 0.75 / (0.25 - 0.01 * lp), rel=1e-12)
    with pytest.raises(ValueError, match="xi_c"):
        zeta_constants(P, Q, L, 0.75, 1.0, 0.5)


def _law(zeta1=0.2, zeta2=0.1, chi_c=3.0, xi_c=0.05):
    P = np.array([[2.5, 0.5], [0.5, 0.25]])
    return MuLaw.from_design(600.0, 1.0, P, chi_c, xi_c, zeta1, zeta2, K5, 126.0, 1.0)


def test_mu_update_pure_contraction_when_nu_zero():
    law = _law()
    for gap in (0.1, 1.0, 10.0):
        mu2 = mu_update(1.0, gap, 0.0, law)
        ball = law.Knorm / law.R_u * math.sqrt(law.lam_max / law.lam_min) * law.chi_c * law.delta_u
        assert mu2 == pytest.approx(max(ball, math.exp(-law.xi_c * gap / 2)), rel=1e-12)
    with pytest.raises(ValueError):
        mu_update(0.0, 1.0, 0.0, law)
    with pytest.raises(ValueError):
        mu_update(1.0, 0.0, 0.0, law)


def test_mu_update_scalar_theta_oracle():
    """Scalar plant, closed-form Theta and the resulting zoom."""
    law = MuLaw(R_u=10.0, delta_u=1.0, lam_min=2.0, lam_max=2.0, chi_c=1.5, xi_c=0.2,
                zeta1=0.3, zeta2=0.4, Knorm=2.0, R_y=5.0, delta_y=1.0)
    mu, gap, nu = 1.0, 0.5, 0.1
    ball = 2.0 * (1.5 * mu + (0.3 * 5 + 0.4) * nu) ** 2
    lev = 2.0 * (10.0 / 2.0) ** 2 * mu**2 * math.exp(-0.2 * gap)
    theta = max(ball, lev)
    assert mu_update(mu, gap, nu, law) == pytest.approx(2.0 / 10.0 * math.sqrt(theta / 2.0))
    assert law.rho_y == pytest.approx(2.0 / 10.0 * (0.3 * 5 + 0.4))


@settings(max_examples=200, deadline=None)
@given(mu=st.floats(1e-6, 1e3), gap=st.floats(1e-4, 1e3), nu=st.floats(0, 1e2))
def test_mu_update_dominates_both_terms(mu, gap, nu):
    law = _law()
    mu2 = mu_update(mu, gap, nu, law)
    assert mu2 >= math.exp(-law.xi_c * gap / 2) * mu * (1 - 1e-12)
    assert mu2 <= (max(law.chi_c * law.delta_u * law.Knorm / law.R_u
                       * math.sqrt(law.lam_max / law.lam_min), 1.0) * mu + law.rho_y * nu) * (1 + 1e-12)


def test_mu_init():
    law = _law()
    P = np.array([[2.5, 0.5], [0.5, 0.25]])
    assert mu_init([0.0, 0.0], P, law) == MU_MIN
    z0 = np.array([1.0, -1.0])
    mu = mu_init(z0, P, law)
    # z0 lies exactly on the boundary of the level set of that zoom
    assert law.level(mu) == pytest.approx(float(z0 @ P @ z0), rel=1e-12)
