"""Acceptance criteria; one PASS/FAIL line per criterion.

The lines are printed as the tests run (visible with ``-s``) and repeated
in the terminal summary. Run this file directly for the same lines
without pytest.
"""

import numpy as np

from etcsim import acceptance

from conftest import ACCEPTANCE_LINES as LINES


def _check(number, **kw):
    r = acceptance.CRITERIA[number](**kw)
    LINES[number] = r.line()
    print(r.line())
    assert r.passed, r.line()


def test_criterion_1_output_design():
    _check(1)


def test_criterion_2_input_design():
    _check(2)


def test_criterion_3_closed_loop():
    _check(3)


def test_criterion_4_lemma1_identity():
    _check(4)


def test_criterion_5_lemma3_bound():
    _check(5)


def test_criterion_6_quantizer():
    _check(6)


def test_criterion_7_zoom_laws():
    _check(7)


def test_criterion_8_oscillator():
    _check(8)


def test_criterion_9_integrator():
    _check(9)


def _first_after(times, values, t0):
    i = int(np.searchsorted(times, t0))
    return float(values[i])


def test_worked_example_long_run_invariants():
    """Zoom variables and Lyapunov levels decay far below their initial scale."""
    sc, dc, res, _ = acceptance.worked_example_run()
    t_eta = res.stats.t_eta
    mu0 = _first_after(res.times, res.mu, t_eta + 1e-12)
    scales = {
        "nu": (res.stats.nu_eta, float(res.nu[-1])),
        "mu": (mu0, float(res.mu[-1])),
        "V_o": (_first_after(res.times, res.V_o, t_eta), float(res.V_o[-1])),
        "V_c": (_first_after(res.times, res.V_c, t_eta + 1e-12), float(res.V_c[-1])),
    }
    report = ", ".join(f"{k}: {b:.3g}/{a:.3g}" for k, (a, b) in scales.items())
    print(f"final/initial {report}; mu_end={res.mu[-1]:.3g}")
    failures = [k for k, (a, b) in scales.items() if not b <= 1e-8 * a]
    if not res.mu[-1] <= 1e-6:
        failures.append(f"mu_end={res.mu[-1]:.3g} > 1e-6")
    assert not failures, f"not decayed: {failures} ({report})"


if __name__ == "__main__":
    import sys
    results = acceptance.run_all(stream=sys.stdout)
    sys.exit(0 if all(r.passed for r in results) else 1)
