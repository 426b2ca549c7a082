"""Output processing unit: sample history, event function and the output zoom law.

The estimator relation behind the event rule: for ``t > t_k > ... > t_{k-eta+1}``

    N(t) @ xtilde(t) == Ytilde - Psi(t) @ qY

where ``N`` stacks ``C expm(-A (t - t_i))`` over the stored sample times,
``Ytilde`` stacks the sampled output errors and ``qY`` their quantized
values. ``f = Ytilde - Psi(t) @ qY`` is computable from transmitted data
alone, which is what lets the sensor side decide when to sample.

Times are always handled relative to the newest sample, so nothing here
exponentiates ``A`` over absolute simulation time.
"""

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .linalg import exp_integral, mat_exp, norm2

# zoom floor once the error is numerically zero
NU_MIN = 1e-12


class OrderingError(ValueError):
    pass


def psi(s1, s2, s3, A, C, L):
    """``C expm(A s1) int_{s2}^{s3} expm(-A s) L ds`` for ``s1 <= s2 <= s3``."""
    if not s1 <= s2 <= s3:
        raise OrderingError(f"psi needs s1 <= s2 <= s3, got ({s1}, {s2}, {s3})")
    C = np.atleast_2d(np.asarray(C, dtype=float))
    return C @ exp_integral(A, L, s2 - s1, s3 - s1)


def _check_times(times, t):
    times = [float(s) for s in times]
    if any(b >= a for a, b in zip(times, times[1:])):
        raise OrderingError(f"sample times must be strictly decreasing, got {times}")
    if t < times[0]:
        raise OrderingError(f"t = {t} precedes the newest sample {times[0]}")
    return times


def build_N(A, C, times, t):
    """Stack ``C expm(-A (t - t_i))`` for ``times = (t_k, t_{k-1}, ...)``."""
    times = _check_times(times, t)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    return np.vstack([C @ mat_exp(A, -(t - ti)) for ti in times])


def build_Psi(A, C, L, times, t):
    """Block lower-triangular matrix mapping stored quantized samples into ``f``.

    Block ``(i, 0)`` is ``psi(t_{k-i}, t_k, t)`` and block ``(i, j)``,
    ``1 <= j <= i``, is ``psi(t_{k-i}, t_{k-j}, t_{k-j+1})``.
    """
    times = _check_times(times, t)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    p = C.shape[0]
    eta = len(times)
    out = np.zeros((eta * p, eta * p))
    for i in range(eta):
        out[i * p:(i + 1) * p, :p] = psi(times[i], times[0], t, A, C, L)
        for j in range(1, i + 1):
            blk = psi(times[i], times[j], times[j - 1], A, C, L)
            out[i * p:(i + 1) * p, j * p:(j + 1) * p] = blk
    return out


@dataclass(frozen=True)
class SampleRecord:
    t: float
    ytilde: np.ndarray
    qval: np.ndarray
    zoom: float
    symbol: np.ndarray


class OutputHistory:
    """The last ``eta`` transmitted output samples, newest first."""

    def __init__(self, eta):
        if eta < 1:
            raise ValueError("eta must be positive")
        self.eta = eta
        self._buf = deque(maxlen=eta)

    def push(self, rec):
        if self._buf and rec.t <= self._buf[0].t:
            raise OrderingError(
                f"sample at t = {rec.t} does not follow t = {self._buf[0].t}"
            )
        self._buf.appendleft(rec)

    @property
    def full(self):
        return len(self._buf) == self.eta

    def __len__(self):
        return len(self._buf)

    def __getitem__(self, i):
        return self._buf[i]

    @property
    def times(self):
        return [r.t for r in self._buf]

    @property
    def Y(self):
        return np.concatenate([r.ytilde for r in self._buf])

    @property
    def qY(self):
        return np.concatenate([r.qval for r in self._buf])


def f_vector(history, t, A, C, L):
    """``Ytilde - Psi(t) @ qY`` from the stored samples."""
    if not history.full:
        raise ValueError(f"history holds {len(history)} of {history.eta} samples")
    Psi = build_Psi(A, C, L, history.times, t)
    return history.Y - Psi @ history.qY


def output_event_value(history, t, ytilde_now, A, C, L, alpha):
    """``||N(t)|| * |ytilde(t) - ytilde(t_k)| - alpha * |f(t)|``; sampling on up-crossing."""
    N = build_N(A, C, history.times, t)
    f = f_vector(history, t, A, C, L)
    dy = np.asarray(ytilde_now, dtype=float) - history[0].ytilde
    return norm2(N) * norm2(dy) - alpha * norm2(f)


def relaxed_window(n, eta_star, omega, T):
    """Span allowed for the last ``eta_star`` samples when ``A`` has complex modes."""
    if eta_star <= 2 * (n - 1):
        raise ValueError(f"eta_star = {eta_star} must exceed 2(n-1) = {2 * (n - 1)}")
    if omega <= 0:
        return eta_star * T
    return min(2 * math.pi / omega * (eta_star - 2 * (n - 1)), eta_star * T)


@dataclass(frozen=True)
class NuLaw:
    """Output zoom recursion constants."""

    R_y: float
    delta_y: float
    lam_min: float
    lam_max: float
    chi_o: float
    xi_o: float
    Cnorm: float

    @classmethod
    def from_design(cls, R_y, delta_y, P_o, chi_o, xi_o, C):
        lam = np.linalg.eigvalsh(P_o)
        return cls(R_y, delta_y, float(lam[0]), float(lam[-1]), chi_o, xi_o, norm2(C))

    def theta(self, nu, gap):
        ball = self.lam_max * (self.chi_o * self.delta_y * nu) ** 2
        decay = math.exp(-self.xi_o * gap) * self.level(nu)
        return max(ball, decay)

    def level(self, nu):
        """Ellipsoid level ``lam_min(P_o) R_y^2 / ||C||^2 * nu^2``."""
        return self.lam_min * (self.R_y / self.Cnorm) ** 2 * nu**2

    def update(self, nu, gap):
        return nu_update(nu, gap, self)


def nu_update(nu, gap, law):
    """Next output zoom from the previous one and the inter-sample gap."""
    if not (nu > 0 and gap > 0):
        raise ValueError(f"need nu > 0 and gap > 0, got nu={nu}, gap={gap}")
    theta = law.theta(nu, gap)
    return law.Cnorm / law.R_y * math.sqrt(theta / law.lam_min)


def propagate_error_bound(E0, times, qvals, A, L):
    """Worst-case ``|xtilde|`` at each of ``times`` given ``|xtilde(times[0])| <= E0``.

    ``qvals[k]`` is the innovation applied on ``[times[k], times[k+1])``;
    ``times`` is increasing here. Uses the exact induced norms of the
    transition and of the input integral over each interval.
    """
    bounds = [float(E0)]
    for k in range(len(times) - 1):
        gap = times[k + 1] - times[k]
        Phi = mat_exp(A, gap)
        Gam = Phi @ exp_integral(A, L, 0.0, gap)
        bounds.append(norm2(Phi) * bounds[-1] + norm2(Gam) * norm2(qvals[k]))
    return bounds


def nu_init(E0, times, qvals, A, L, law):
    """Smallest zoom whose ellipsoid contains every error allowed by the warm-up bound.

    ``times`` runs from ``t_0`` to ``t_eta`` and ``qvals`` holds the
    ``eta`` warm-up innovations.
    """
    bound = propagate_error_bound(E0, times, qvals, A, L)[-1]
    nu = law.Cnorm * math.sqrt(law.lam_max / law.lam_min) * bound / law.R_y
    return max(nu, NU_MIN)


class WindowEvaluator:
    """Batched evaluation of ``N`` and ``f`` on a uniform grid after a restart time.

    The grid is ``t = t_w + j*h``, ``j = 0..M``. Per-grid matrices
    ``expm(-A j h)`` and ``int_0^{jh} expm(-A u) L du`` are computed once.
    """

    def __init__(self, A, C, L, h, M):
        self.A = np.asarray(A, dtype=float)
        self.C = np.atleast_2d(np.asarray(C, dtype=float))
        self.L = np.asarray(L, dtype=float).reshape(self.A.shape[0], -1)
        self.h = h
        self.M = M
        n = self.A.shape[0]
        p = self.L.shape[1]
        step = mat_exp(self.A, -h)
        G1 = exp_integral(self.A, self.L, 0.0, h)
        self.E = np.empty((M + 1, n, n))
        self.G = np.empty((M + 1, n, p))
        self.E[0] = np.eye(n)
        self.G[0] = 0.0
        for j in range(M):
            # G((j+1)h) = G(jh) + expm(-A jh) G(h)
            self.E[j + 1] = self.E[j] @ step
            self.G[j + 1] = self.G[j] + self.E[j] @ G1

    def prepare(self, history):
        """Constant parts for the current history: stacked ``C expm(-A d_i)`` and ``f`` offset."""
        A, C, L = self.A, self.C, self.L
        times = history.times
        tk = times[0]
        Ntil = np.vstack([C @ mat_exp(A, -(tk - ti)) for ti in times])
        Psi = build_Psi(A, C, L, times, tk)  # first block column vanishes at t = t_k
        f_base = history.Y - Psi @ history.qY
        return Ntil, f_base, history[0].qval

    def evaluate(self, prepared, s_w, j0, j1):
        """``N`` and ``f`` at offsets ``s = s_w + j*h`` for ``j0 <= j < j1``."""
        Ntil, f_base, qk = prepared
        A, L = self.A, self.L
        Ew = mat_exp(A, -s_w)
        Gw = exp_integral(A, L, 0.0, s_w) @ qk
        Nw = Ntil @ Ew
        N = np.einsum("ab,jbc->jac", Nw, self.E[j0:j1])
        g = Gw[None, :] + np.einsum("ab,jbc,c->ja", Ew, self.G[j0:j1], qk)
        f = f_base[None, :] - g @ Ntil.T
        return N, f

    def evaluate_at(self, prepared, s):
        """``N`` and ``f`` at a single offset ``s >= 0`` after the newest sample."""
        Ntil, f_base, qk = prepared
        N = Ntil @ mat_exp(self.A, -s)
        f = f_base - Ntil @ (exp_integral(self.A, self.L, 0.0, s) @ qk)
        return N, f


def batched_spec_norm(N):
    """Spectral norm of each matrix in a stack (closed form for one or two columns)."""
    N = np.asarray(N, dtype=float)
    cols = N.shape[-1]
    if cols == 1:
        return np.linalg.norm(N[..., 0], axis=-1)
    if cols == 2:
        a = np.einsum("jk,jk->j", N[..., 0], N[..., 0])
        c = np.einsum("jk,jk->j", N[..., 1], N[..., 1])
        b = np.einsum("jk,jk->j", N[..., 0], N[..., 1])
        lam = 0.5 * (a + c) + np.hypot(0.5 * (a - c), b)
        return np.sqrt(lam)
    gram = np.einsum("jab,jac->jbc", N, N)
    return np.sqrt(np.clip(np.linalg.eigvalsh(gram)[:, -1], 0.0, None))


def batched_norm_and_smin(N):
    """Largest and smallest singular values of each matrix in a stack."""
    sv = np.linalg.svd(np.asarray(N, dtype=float), compute_uv=False)
    return sv[:, 0], sv[:, -1]


def warmup_zoom(E0, times, A, C, L, R_y, delta_y):
    """Smallest common zoom for the warm-up samples that rules out saturation.

    Propagates ``|xtilde| <= u_k + v_k * nu`` with the worst innovation
    ``|q| <= ||C|| |xtilde| + delta_y nu`` and solves
    ``||C|| (u_k + v_k nu) <= R_y nu`` at every warm-up time.
    """
    Cn = norm2(C)
    u, v = float(E0), 0.0
    need = 0.0
    for k in range(len(times)):
        if Cn * v >= R_y:
            raise ValueError("warm-up spacing too long for the output quantizer range")
        need = max(need, Cn * u / (R_y - Cn * v))
        if k + 1 < len(times):
            gap = times[k + 1] - times[k]
            Phi = mat_exp(A, gap)
            a = norm2(Phi)
            c = norm2(Phi @ exp_integral(A, L, 0.0, gap))
            u, v = (a + c * Cn) * u, (a + c * Cn) * v + c * delta_y
    return max(need * (1.0 + 1e-6), NU_MIN)
