"""Design constants, bit budgets and dwell-time lower bounds.

Everything here is a pure function of the plant, the gains and a handful of
tuning scalars. The dwell-time bounds follow the ratio argument of the
sampling proofs: the monitored ratio ``X = |v|/|w|`` obeys a Riccati-type
differential inequality started from zero, so the time for ``X`` to reach the
triggering level is bounded below by a comparison solution.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .linalg import (
    LinalgError,
    as_matrix,
    is_hurwitz,
    is_spd,
    mat_exp,
    norm2,
    observability_index,
    solve_lyapunov,
    spectral_info,
)
from .quantization import (
    QuantizerSpec,
    ratio_bits,
    required_ratio_input,
    required_ratio_output,
)


class DesignError(ValueError):
    """A standing assumption or a constant's admissibility condition failed."""


@dataclass(frozen=True)
class PlantModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        B = as_matrix(self.B, "B")
        # a 1-D C is a single output row, not a column
        C = as_matrix(np.atleast_2d(np.asarray(self.C, dtype=float)), "C")
        n = A.shape[0]
        if A.shape != (n, n):
            raise DesignError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise DesignError(f"B has {B.shape[0]} rows, expected n = {n}")
        if C.shape[1] != n:
            raise DesignError(f"C has {C.shape[1]} columns, expected n = {n}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]


@dataclass(frozen=True)
class DesignConstants:
    K: np.ndarray
    L: np.ndarray
    P_o: np.ndarray
    Q_o: np.ndarray
    P_c: np.ndarray
    Q_c: np.ndarray
    eps_o: float
    eps_c: float
    xi_o: float
    xi_c: float
    alpha: float
    beta_c: float
    beta_o: float
    beta_tilde: float
    chi_o: float
    chi_c: float
    zeta1: float
    zeta2: float
    rho_bar: float
    rho_bar_u: float
    T: float
    eta: int
    relaxed: bool
    omega: float
    window: float
    delta_y: float
    delta_u: float
    ratio_y: float
    ratio_u: float
    R_y: float
    R_u: float
    # Q actually certified by P (differs from the nominal Q when P is supplied)
    Q_o_nominal: np.ndarray = None
    Q_c_nominal: np.ndarray = None

    @property
    def bits_y(self):
        return ratio_bits(self.ratio_y)

    @property
    def bits_u(self):
        return ratio_bits(self.ratio_u)

    def quantizer_y(self, p):
        return QuantizerSpec(p, self.R_y, self.delta_y)

    def quantizer_u(self, m):
        return QuantizerSpec(m, self.R_u, self.delta_u)


def _lyap_certificate(M, Q, P, label):
    """Return ``(P, Q_certified)``; solve for P when not supplied."""
    if P is None:
        try:
            return solve_lyapunov(M, Q), Q
        except LinalgError as exc:
            raise DesignError(f"{label}: {exc}") from None
    P = as_matrix(P, f"P_{label}")
    if not is_spd(P):
        raise DesignError(f"supplied P_{label} is not symmetric positive definite")
    Qeff = -(M.T @ P + P @ M)
    Qeff = 0.5 * (Qeff + Qeff.T)
    if not is_spd(Qeff):
        raise DesignError(
            f"supplied P_{label} does not certify stability: "
            f"-(M'P + PM) has eigenvalues {np.linalg.eigvalsh(Qeff)}"
        )
    return P, Qeff


def eta_star_rule(n, omega, T_s):
    """Smallest integer strictly above ``2(n-1) + T_s*omega/(2 pi)``."""
    if omega < 0 or T_s <= 0:
        raise ValueError("need omega >= 0 and T_s > 0")
    return int(math.floor(2 * (n - 1) + T_s * omega / (2 * math.pi))) + 1


def derive_constants(plant, K, L, Q_o, Q_c, eps_o, eps_c, xi_frac_o, xi_frac_c,
                     beta_tilde, rho_bar, rho_bar_u, T, delta_y=1.0, delta_u=1.0,
                     P_o=None, P_c=None, eta_star=None, R_y=None, R_u=None):
    """Compute every scalar used by the samplers and zoom laws.

    ``xi_frac_o`` and ``xi_frac_c`` are fractions of the admissible upper
    bounds of the decay rates, so the strict inequalities always hold.
    ``P_o`` / ``P_c`` may be supplied (e.g. a printed design); they are then
    checked as Lyapunov certificates and the ``Q`` they actually certify is
    used in place of the nominal one. ``R_y`` / ``R_u`` default to the
    smallest ranges the zoom laws allow; larger values may be given.
    """
    A, B, C = plant.A, plant.B, plant.C
    K = np.atleast_2d(np.asarray(K, dtype=float))
    L = np.asarray(L, dtype=float).reshape(plant.n, -1)
    if K.shape != (plant.m, plant.n):
        raise DesignError(f"K must be {plant.m}x{plant.n}, got {K.shape}")
    if L.shape != (plant.n, plant.p):
        raise DesignError(f"L must be {plant.n}x{plant.p}, got {L.shape}")
    for name, v in (("eps_o", eps_o), ("eps_c", eps_c), ("xi_frac_o", xi_frac_o),
                    ("xi_frac_c", xi_frac_c), ("rho_bar", rho_bar), ("rho_bar_u", rho_bar_u)):
        if not 0 < v < 1:
            raise DesignError(f"{name} must lie in (0, 1), got {v}")
    if not (beta_tilde > 0 and T > 0 and math.isfinite(T)):
        raise DesignError("beta_tilde and T must be positive and finite")

    try:
        eta_obs = observability_index(A, C)
    except LinalgError as exc:
        raise DesignError(f"observability assumption fails: {exc}") from None
    Mc = A + B @ K
    Mo = A - L @ C
    if not is_hurwitz(Mc):
        raise DesignError(f"A + BK is not Hurwitz: eigenvalues {np.linalg.eigvals(Mc)}")
    if not is_hurwitz(Mo):
        raise DesignError(f"A - LC is not Hurwitz: eigenvalues {np.linalg.eigvals(Mo)}")
    Q_o = as_matrix(Q_o, "Q_o")
    Q_c = as_matrix(Q_c, "Q_c")
    P_o, Qo_eff = _lyap_certificate(Mo, Q_o, P_o, "o")
    P_c, Qc_eff = _lyap_certificate(Mc, Q_c, P_c, "c")

    lq_o = float(np.linalg.eigvalsh(Qo_eff)[0])
    lq_c = float(np.linalg.eigvalsh(Qc_eff)[0])
    lp_o = float(np.linalg.eigvalsh(P_o)[-1])
    lp_c = float(np.linalg.eigvalsh(P_c)[-1])
    PoL = norm2(P_o @ L)
    PcB = norm2(P_c @ B)
    PcL = norm2(P_c @ L)

    alpha = eps_o * lq_o / (2 * PoL)
    xi_o = xi_frac_o * (1 - eps_o) * lq_o / lp_o
    chi_o = 2 * PoL / ((1 - eps_o) * lq_o - xi_o * lp_o)
    beta_c = eps_c * lq_c / (2 * PcB)
    beta_o = beta_tilde * beta_c * norm2(C)
    xi_c = xi_frac_c * (1 - eps_c) * lq_c / lp_c
    den_c = (1 - eps_c) * lq_c - xi_c * lp_c
    chi_c = 2 * PcB / den_c
    zeta1 = (beta_tilde * eps_c * lq_c + 2 * PcL) / den_c
    zeta2 = 2 * PcL / den_c

    ratio_y = required_ratio_output(P_o, C, chi_o, rho_bar)
    ratio_u = required_ratio_input(P_c, K, chi_c, rho_bar_u)
    R_y_min, R_u_min = delta_y / ratio_y, delta_u / ratio_u
    if R_y is None:
        R_y = R_y_min
    elif R_y < R_y_min * (1 - 1e-12):
        raise DesignError(f"R_y = {R_y:g} is below the required {R_y_min:.6g} (delta_y / R_y too coarse)")
    if R_u is None:
        R_u = R_u_min
    elif R_u < R_u_min * (1 - 1e-12):
        raise DesignError(f"R_u = {R_u:g} is below the required {R_u_min:.6g} (delta_u / R_u too coarse)")

    info = spectral_info(A)
    if info.all_real_eig:
        relaxed = False
        eta = eta_obs
        window = eta * T
    else:
        relaxed = True
        if eta_star is None:
            eta_star = eta_star_rule(plant.n, info.omega, T)
        if eta_star <= 2 * (plant.n - 1):
            raise DesignError(f"eta_star = {eta_star} must exceed 2(n-1) = {2 * (plant.n - 1)}")
        eta = int(eta_star)
        window = min(2 * math.pi / info.omega * (eta - 2 * (plant.n - 1)), eta * T)

    return DesignConstants(
        K=K, L=L, P_o=P_o, Q_o=Qo_eff, P_c=P_c, Q_c=Qc_eff,
        eps_o=eps_o, eps_c=eps_c, xi_o=xi_o, xi_c=xi_c,
        alpha=alpha, beta_c=beta_c, beta_o=beta_o, beta_tilde=beta_tilde,
        chi_o=chi_o, chi_c=chi_c, zeta1=zeta1, zeta2=zeta2,
        rho_bar=rho_bar, rho_bar_u=rho_bar_u, T=T, eta=eta, relaxed=relaxed,
        omega=info.omega, window=window, delta_y=delta_y, delta_u=delta_u,
        ratio_y=ratio_y, ratio_u=ratio_u, R_y=float(R_y), R_u=float(R_u),
        Q_o_nominal=Q_o, Q_c_nominal=Q_c,
    )


# ---------------------------------------------------------------------------
# Envelope constants for N, its pseudo-inverse and its derivative


@dataclass(frozen=True)
class FactConstants:
    c: float
    sigma: float
    c1: float
    sigma1: float
    c2: float
    sigma2: float
    sigma_bar: float
    cbar: float
    sigma_hat: float
    gap_floor: float
    min_singular: float


def exp_envelope(A, horizon, npts=2001):
    """``(cbar, rate)`` with ``||expm(A t)|| <= cbar * exp(rate t)`` on ``[0, horizon]``.

    ``rate`` is the spectral abscissa clipped at zero. The grid maximum is
    inflated by ``exp(||A|| dt)``, which covers every point between nodes.
    """
    A = as_matrix(A, "A")
    rate = max(0.0, float(np.max(np.real(np.linalg.eigvals(A)))))
    ts = np.linspace(0.0, horizon, npts)
    dt = ts[1] - ts[0] if npts > 1 else 0.0
    step = mat_exp(A, dt)
    E = np.eye(A.shape[0])
    best = 0.0
    for t in ts:
        best = max(best, norm2(E) * math.exp(-rate * t))
        E = E @ step
    return best * math.exp(norm2(A) * dt), rate


def _gap_patterns(eta, gap_floor, gap_max, span_max, rng, count):
    """Deterministic sample of admissible gap vectors ``(t_{k-i} - t_{k-i-1})``."""
    if eta == 1:
        return np.zeros((1, 0))
    grid = np.geomspace(gap_floor, gap_max, 40)
    pats = [np.full(eta - 1, g) for g in grid]
    pats += list(rng.uniform(gap_floor, gap_max, size=(count, eta - 1)))
    # alternate extremes
    pats.append(np.array([gap_floor if i % 2 else gap_max for i in range(eta - 1)]))
    pats.append(np.array([gap_max if i % 2 else gap_floor for i in range(eta - 1)]))
    out = [p for p in pats if p.sum() < span_max]
    if not out:
        raise DesignError(f"no gap pattern with floor {gap_floor:g} fits the window {span_max:g}")
    return np.array(out)


def appendix_fact_constants(A, C, L, eta, T, window, gap_floor, inflate=1.5, seed=0):
    """Envelope constants ``(c, sigma)``, ``(c1, sigma1)``, ``(c2, sigma2)`` and ``sigma_bar``.

    ``window`` bounds ``t - t_{k-eta+1}``. The pseudo-inverse envelope is a
    grid fit over sample patterns whose past gaps are at least
    ``gap_floor``, inflated by ``inflate``; it is only as good as that
    premise, which callers should check against observed gaps.
    """
    A = as_matrix(A, "A")
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n, p = A.shape[0], C.shape[0]
    cbar, sigma_hat = exp_envelope(-A, window)
    c = n * eta * math.sqrt(n * eta * p) * norm2(C) * cbar
    sigma = sigma_hat
    c2 = c * norm2(A)
    sigma2 = sigma
    sigma1 = max(0.0, float(np.max(np.real(np.linalg.eigvals(A)))))

    rng = np.random.default_rng(seed)
    gap_max = T
    pats = _gap_patterns(eta, gap_floor, gap_max, window, rng, 400)
    s_grid = np.linspace(T / 400, T, 400)
    E_grid = np.array([mat_exp(-A, si) for si in s_grid])
    worst = 0.0
    smin_all = np.inf
    for gaps in pats:
        offs = np.concatenate([[0.0], np.cumsum(gaps)])  # t_k - t_{k-i}
        spans = s_grid + offs[-1]
        keep = spans <= window
        if not keep.any():
            continue
        Ntil = np.vstack([C @ mat_exp(-A, d) for d in offs])
        N = np.einsum("ab,jbc->jac", Ntil, E_grid[keep])
        sv = np.linalg.svd(N, compute_uv=False)
        smin = sv[:, -1]
        smin_all = min(smin_all, float(smin.min()))
        if smin.min() <= 1e-12 * sv[:, 0].max():
            raise DesignError(
                f"N loses rank for gap pattern {gaps.tolist()} (sigma_min = {smin.min():.3e})"
            )
        worst = max(worst, float(np.max(np.exp(-sigma1 * spans[keep]) / smin)))
    c1 = inflate * worst
    sigma_bar = max(sigma1 + sigma, sigma1 + sigma2)
    return FactConstants(c=c, sigma=sigma, c1=c1, sigma1=sigma1, c2=c2, sigma2=sigma2,
                         sigma_bar=sigma_bar, cbar=cbar, sigma_hat=sigma_hat,
                         gap_floor=gap_floor, min_singular=smin_all)


# ---------------------------------------------------------------------------
# Riccati comparison bound


_TINY_RATE = 1e-200  # rates below this behave as zero in double precision


@dataclass(frozen=True)
class Lemma3Bound:
    """Bounds for ``X' <= a1 exp(sigma_bar t) (X^2 + a2 X + a3)``, ``X(0) = 0``."""

    a1: float
    a2: float
    a3: float
    sigma_bar: float
    r: int
    a4: float
    t_tilde: float

    @property
    def _k(self):
        # a4 * sigma_bar, kept separate so tiny rates do not overflow a4
        return self.r * self.a2 * self.a1 / 2

    def _theta(self, t):
        """``a4 (exp(sigma_bar t) - 1)``, i.e. ``k t`` in the limit ``sigma_bar -> 0``."""
        t = np.asarray(t, dtype=float)
        if self.sigma_bar < _TINY_RATE:
            return self._k * t
        return self._k * np.expm1(self.sigma_bar * t) / self.sigma_bar

    def _time_for(self, theta):
        if self.sigma_bar < _TINY_RATE:
            return theta / self._k
        return math.log1p(theta * self.sigma_bar / self._k) / self.sigma_bar

    def bound(self, t):
        """Closed-form tan bound ``(r a2/2) tan(a4 (exp(sigma_bar t) - 1))``."""
        return self.r * self.a2 / 2 * np.tan(self._theta(t))

    def comparison(self, t):
        """Exact solution of the comparison ODE with ``a3`` raised to ``(r^2+1) a2^2/4``."""
        return (self.r * self.a2 / 2 * np.tan(self._theta(t) + math.atan(1 / self.r))
                - self.a2 / 2)

    def crossing_time(self, level):
        """Time before which ``bound(t) < level``, capped at ``t_tilde``."""
        theta = min(math.atan(2 * level / (self.r * self.a2)), math.atan(self.r))
        return self._time_for(theta)

    def comparison_crossing_time(self, level):
        """Time at which the exact comparison solution reaches ``level``."""
        theta = (math.atan((2 * level + self.a2) / (self.r * self.a2))
                 - math.atan(1 / self.r))
        return self._time_for(theta)


def lemma3_bound(a1, a2, a3, sigma_bar):
    if not (a1 > 0 and a2 > 0 and a3 > 0 and sigma_bar >= 0):
        raise ValueError("need a1, a2, a3 > 0 and sigma_bar >= 0")
    r = 1
    while (r * r + 1) * a2 * a2 / 4 < a3:
        r += 1
    k = r * a2 * a1 / 2
    a4 = k if sigma_bar == 0 else k / sigma_bar
    lem = Lemma3Bound(a1, a2, a3, sigma_bar, r, a4, 0.0)
    return replace(lem, t_tilde=lem._time_for(math.atan(r)))


# ---------------------------------------------------------------------------
# Dwell times


@dataclass(frozen=True)
class OutputDwell:
    t_D: float
    t_D_comparison: float
    a1: float
    a2: float
    a3: float
    a4: float
    r: int
    facts: FactConstants


@dataclass(frozen=True)
class InputDwell:
    tau_D: float
    tau_D_comparison: float
    beta: float
    b: tuple
    r: int


def dwell_time_output(facts, alpha, A, C, L, span_prev):
    """Uniform lower bound on output inter-sample times.

    ``span_prev`` bounds ``t_k - t_{k-eta+1}``: ``(eta-1) T`` under
    persistence sampling, the window length under the relaxed rule.
    """
    nA, nC, nL = norm2(A), norm2(C), norm2(L)
    fc = facts
    a1 = fc.c1 * nL * math.exp(fc.sigma_bar * span_prev)
    a2 = (1 + fc.c) * nC + (fc.c1 + fc.c2 + fc.c * nA) / nL
    a3 = fc.c * nC * (nC + nA / nL)
    lem = lemma3_bound(a1, a2, a3, fc.sigma_bar)
    return OutputDwell(
        t_D=lem.crossing_time(alpha),
        t_D_comparison=lem.comparison_crossing_time(alpha),
        a1=a1, a2=a2, a3=a3, a4=lem.a4, r=lem.r, facts=fc,
    )


def input_b_constants(A, B, C, K, L, alpha):
    """``b1..b7`` for ``d/dt X <= b5 (X^2 + b6 X + b7)`` on the input ratio.

    With ``v = K (z - z(tau_j))`` and ``w = |z| + |xtilde|``:
    ``|v'|/w <= b1 + b2 X`` and ``|w'|/w <= b3 + b4 X``.
    """
    nK = norm2(K)
    qy = 2 * (alpha + norm2(C))  # |q_nu(ytilde(t_k))| / |xtilde(t)|
    b1 = norm2(K @ A) + 2 * norm2(K @ B) * nK + norm2(K @ L) * qy
    b2 = 2 * norm2(K @ B)
    b3 = norm2(A) + 2 * norm2(B) * nK + 2 * norm2(L) * qy
    b4 = 2 * norm2(B)
    b5 = b4
    b6 = (b2 + b3) / b4
    b7 = b1 / b4
    return b1, b2, b3, b4, b5, b6, b7


def dwell_time_input(A, B, C, K, L, alpha, beta):
    """Uniform lower bound on input inter-update times for triggering level ``beta``."""
    b1, b2, b3, b4, b5, b6, b7 = input_b_constants(A, B, C, K, L, alpha)
    lem = lemma3_bound(b5, b6, b7, 0.0)
    b8 = lem.a4
    return InputDwell(
        tau_D=lem.crossing_time(beta),
        tau_D_comparison=lem.comparison_crossing_time(beta),
        beta=beta,
        b=(b1, b2, b3, b4, b5, b6, b7, b8),
        r=lem.r,
    )


@dataclass(frozen=True)
class DwellReport:
    output: OutputDwell
    input: InputDwell
    notes: list = field(default_factory=list)


def dwell_report(plant, dc, gap_floor):
    """Both dwell bounds for a derived design."""
    facts = appendix_fact_constants(plant.A, plant.C, dc.L, dc.eta, dc.T, dc.window, gap_floor)
    span_prev = dc.window - dc.T if not dc.relaxed else dc.window
    out = dwell_time_output(facts, dc.alpha, plant.A, plant.C, dc.L, span_prev)
    beta = min(dc.beta_c, dc.beta_o)
    inp = dwell_time_input(plant.A, plant.B, plant.C, dc.K, dc.L, dc.alpha, beta)
    notes = []
    if out.t_D < gap_floor:
        notes.append(
            f"output dwell bound {out.t_D:.3e} is below the gap floor {gap_floor:.3e} "
            "assumed by the pseudo-inverse envelope; the bound holds only while past "
            "gaps stay above that floor"
        )
    return DwellReport(out, inp, notes)
