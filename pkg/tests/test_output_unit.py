import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st
from scipy.integrate import simpson

from etcsim.linalg import norm2
from etcsim.output_unit import (NU_MIN, NuLaw, OrderingError, OutputHistory, SampleRecord,
                                WindowEvaluator, build_N, build_Psi, f_vector, nu_init, nu_update,
                                output_event_value, propagate_error_bound, psi, relaxed_window,
                                warmup_zoom)

A5 = np.array([[1.0, 1.0], [0.0, 0.5]])
C5 = np.array([[1.0, 0.0]])
L5 = np.array([[4.0], [3.0]])
OSC = np.array([[0.0, -1.0], [1.0, 0.0]])


def rec(t, y, q, zoom=1.0):
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return SampleRecord(t, y, np.atleast_1d(np.asarray(q, dtype=float)), zoom,
                        np.zeros(y.size, dtype=np.int64))


def history(records, eta):
    h = OutputHistory(eta)
    for r in records:
        h.push(r)
    return h


def test_psi_empty_interval_and_scalar_case():
    assert np.array_equal(psi(0.0, 0.4, 0.4, A5, C5, L5), np.zeros((1, 1)))
    z = np.zeros((1, 1))
    one = np.ones((1, 1))
    assert psi(0.1, 0.3, 1.0, z, one, one)[0, 0] == pytest.approx(0.7, abs=1e-15)


def test_psi_matches_simpson():
    s1, s2, s3 = 0.0, 0.1, 0.3
    ss = np.linspace(s2, s3, 2001)
    integrand = np.array([(sla.expm(-A5 * s) @ L5)[:, 0] for s in ss])
    ref = C5 @ sla.expm(A5 * s1) @ simpson(integrand, x=ss, axis=0)
    assert psi(s1, s2, s3, A5, C5, L5)[0, 0] == pytest.approx(ref[0], rel=1e-10)


def test_psi_ordering():
    with pytest.raises(OrderingError):
        psi(0.5, 0.2, 0.3, A5, C5, L5)


def test_build_N_definitions():
    N = build_N(np.zeros((2, 2)), np.eye(2), [1.0, 0.5, 0.1], 1.2)
    assert np.array_equal(N, np.vstack([np.eye(2)] * 3))
    N = build_N(A5, C5, [2.0, 1.0], 2.0)
    assert np.allclose(N[0], C5[0])
    t = 3.0
    N = build_N(A5, C5, [t - 0.1, t - 0.25], t)
    ref = np.vstack([C5 @ sla.expm(-A5 * 0.1), C5 @ sla.expm(-A5 * 0.25)])
    assert np.allclose(N, ref, rtol=1e-14)


def test_build_Psi_structure():
    P1 = build_Psi(A5, C5, L5, [1.0], 1.0)
    assert np.array_equal(P1, np.zeros((1, 1)))
    P1 = build_Psi(A5, C5, L5, [1.0], 1.4)
    assert np.allclose(P1, psi(1.0, 1.0, 1.4, A5, C5, L5))
    P = build_Psi(A5, C5, L5, [2.0, 1.5, 0.7], 2.3)
    assert P.shape == (3, 3)
    assert np.all(np.triu(P, 1) == 0)
    assert P[2, 1] == pytest.approx(psi(0.7, 1.5, 2.0, A5, C5, L5)[0, 0])
    assert P[1, 0] == pytest.approx(psi(1.5, 2.0, 2.3, A5, C5, L5)[0, 0])


def test_history_ordering_and_fullness():
    h = OutputHistory(2)
    h.push(rec(0.0, 1.0, 0.0))
    assert not h.full
    with pytest.raises(OrderingError):
        h.push(rec(0.0, 1.0, 0.0))
    with pytest.raises(ValueError):
        f_vector(h, 0.5, A5, C5, L5)
    h.push(rec(1.0, 2.0, 0.0))
    assert h.full and h.times == [1.0, 0.0]


def test_f_vector_dead_zone_and_zero():
    h = history([rec(0.0, 0.3, 0.0), rec(1.0, -0.2, 0.0)], 2)
    assert np.array_equal(f_vector(h, 1.7, A5, C5, L5), h.Y)
    h0 = history([rec(0.0, 0.0, 0.0), rec(1.0, 0.0, 0.0)], 2)
    assert not f_vector(h0, 1.7, A5, C5, L5).any()


def _exact_error(x0, segments, t):
    """``xtilde(t)`` from ``xtilde' = A xtilde - L q`` with piecewise-constant q."""
    x = np.array(x0, dtype=float)
    for (a, b, q) in segments:
        if a >= t:
            break
        b = min(b, t)
        aug = np.zeros((3, 3))
        aug[:2, :2] = A5
        aug[:2, 2] = -(L5 @ np.atleast_1d(q))
        x = (sla.expm(aug * (b - a)) @ np.concatenate([x, [1.0]]))[:2]
    return x


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_lemma1_identity_on_exact_error_dynamics(seed):
    """N(t) xtilde(t) = f(t) for any error trajectory driven by the stored innovations."""
    rng = np.random.default_rng(seed)
    x0 = rng.normal(size=2)
    times = np.cumsum(rng.uniform(0.05, 1.0, 3))
    qs = rng.normal(size=3)
    segs = [(times[i], times[i + 1] if i + 1 < 3 else np.inf, qs[i]) for i in range(3)]
    segs = [(0.0, times[0], 0.0)] + segs
    recs = [rec(ti, (C5 @ _exact_error(x0, segs, ti))[0], qi) for ti, qi in zip(times, qs)]
    h = history(recs[-2:], 2)
    t = times[-1] + rng.uniform(0.0, 1.0)
    xt = _exact_error(x0, segs, t)
    N = build_N(A5, C5, h.times, t)
    f = f_vector(h, t, A5, C5, L5)
    assert norm2(N @ xt - f) <= 1e-10 * (1 + norm2(xt))


def test_event_value_signs():
    h = history([rec(0.0, 0.5, 0.0), rec(1.0, 0.3, 0.0)], 2)
    assert output_event_value(h, 1.5, [0.3], A5, C5, L5, 0.09) < 0
    h0 = history([rec(0.0, 0.0, 0.0), rec(1.0, 0.0, 0.0)], 2)
    assert output_event_value(h0, 1.5, [0.0], A5, C5, L5, 0.09) == 0.0


def test_relaxed_window():
    assert relaxed_window(2, 3, math.pi, 10.0) == pytest.approx(2.0)
    assert relaxed_window(2, 3, 0.0, 10.0) == 30.0
    with pytest.raises(ValueError):
        relaxed_window(2, 2, 1.0, 1.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000))
def test_oscillator_N_full_rank_inside_window(seed):
    """Three samples spread inside the eta*=3 window give an invertible N."""
    rng = np.random.default_rng(seed)
    W = relaxed_window(2, 3, 2.0, 1.0)
    t = 10.0
    oldest = t - rng.uniform(0.05, 1.0) * W
    mid = rng.uniform(oldest + 1e-3, t - 1e-3)
    newest = rng.uniform(mid + 1e-3, t) if mid + 1e-3 < t else t
    times = sorted({newest, mid, oldest}, reverse=True)
    if len(times) < 3:
        return
    N = build_N(OSC, [[1.0, 0.0]], times, t)
    assert np.linalg.svd(N, compute_uv=False)[-1] > 0


def _law(P_o, chi_o, xi_o, rho):
    lam = np.linalg.eigvalsh(P_o)
    R_y = math.sqrt(lam[-1] / lam[0]) * chi_o / rho
    return NuLaw(R_y, 1.0, lam[0], lam[-1], chi_o, xi_o, 1.0)


def test_nu_update_worked_example_factor(worked_dc):
    law = NuLaw.from_design(worked_dc.R_y, 1.0, worked_dc.P_o, worked_dc.chi_o, worked_dc.xi_o, C5)
    f = nu_update(1.0, 1.0, law)
    assert f == pytest.approx(max(0.975, math.exp(-worked_dc.xi_o / 2)), rel=1e-12)
    assert f == pytest.approx(0.9981, abs=1e-4)


def test_nu_update_limits():
    law = _law(np.array([[2.0, 0.3], [0.3, 1.0]]), 30.0, 0.01, 0.9)
    assert nu_update(2.0, 1e6, law) == pytest.approx(0.9 * 2.0, rel=1e-12)
    assert nu_update(2.0, 1e-9, law) == pytest.approx(2.0, rel=1e-8)
    with pytest.raises(ValueError):
        nu_update(1.0, 0.0, law)


def test_propagate_error_bound_open_loop():
    z = np.zeros((2, 2))
    b = propagate_error_bound(1.3, [0.0, 0.5, 1.0], [np.zeros(1)] * 2, z, np.zeros((2, 1)))
    assert b == [1.3, 1.3, 1.3]


def test_nu_init_open_loop_closed_form():
    P = np.array([[2.0, 0.3], [0.3, 1.0]])
    law = _law(P, 30.0, 0.01, 0.9)
    nu = nu_init(1.3, [0.0, 0.5], [np.zeros(1)], np.zeros((2, 2)), np.zeros((2, 1)), law)
    lam = np.linalg.eigvalsh(P)
    assert nu == pytest.approx(1.3 * math.sqrt(lam[-1] / lam[0]) / law.R_y, rel=1e-14)
    # the worst-case error then sits on the ellipsoid boundary
    assert lam[-1] * 1.3**2 == pytest.approx(law.level(nu), rel=1e-12)
    assert nu_init(0.0, [0.0, 0.5], [np.zeros(1)], A5, L5, law) == NU_MIN


def test_warmup_zoom_prevents_saturation(worked_dc):
    times = [0.0, 1.0]
    nu = warmup_zoom(1.5, times, A5, C5, L5, worked_dc.R_y, 1.0)
    # first sample: |C xtilde| <= 1.5 must fit in R_y * nu
    assert 1.5 <= worked_dc.R_y * nu


def test_window_evaluator_matches_direct():
    rng = np.random.default_rng(3)
    h = history([rec(0.0, 0.4, 0.2), rec(0.7, -0.1, 0.5)], 2)
    ev = WindowEvaluator(A5, C5, L5, 0.01, 50)
    prep = ev.prepare(h)
    s_w = 0.13
    N, f = ev.evaluate(prep, s_w, 0, 50)
    for j in rng.integers(0, 50, 5):
        t = 0.7 + s_w + j * 0.01
        assert np.allclose(N[j], build_N(A5, C5, h.times, t), rtol=1e-11, atol=1e-13)
        assert np.allclose(f[j], f_vector(h, t, A5, C5, L5), rtol=1e-11, atol=1e-13)
    N1, f1 = ev.evaluate_at(prep, 0.42)
    assert np.allclose(N1, build_N(A5, C5, h.times, 1.12), rtol=1e-12)
    assert np.allclose(f1, f_vector(h, 1.12, A5, C5, L5), rtol=1e-12)
