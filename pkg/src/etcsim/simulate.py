"""Closed-loop simulation of the event-triggered, quantized output-feedback loop.

Plant and controller::

    x' = A x + B u
    z' = A z + B u + L q_nu(y(t_k) - C z(t_k))     on [t_k, t_{k+1})
    u  = q_mu(K z(tau_j))                           on [tau_j, tau_{j+1})

Between events the held innovation and the held input are constant, so the
whole loop is the linear flow ``s' = M s`` on ``s = [x, z, u, q]``. The
integrator is classical fourth-order Runge-Kutta with a fixed step ``h``;
for a linear flow one RK4 step is the matrix polynomial
``R(hM) = I + hM + (hM)^2/2 + (hM)^3/6 + (hM)^4/24``, which is exactly what
:func:`step` computes stage by stage. The engine precomputes ``R(hM)^j``
once and, after every event, evaluates both event functions on the grid
ahead in vectorized chunks. A sign change is refined by bisection with a
fractional RK4 step.
"""

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .input_unit import MU_MIN, MuLaw, mu_init, mu_update
from .linalg import exp_integral, mat_exp, norm2
from .output_unit import (
    NU_MIN,
    NuLaw,
    OutputHistory,
    SampleRecord,
    WindowEvaluator,
    batched_norm_and_smin,
    batched_spec_norm,
    nu_init,
    nu_update,
    warmup_zoom,
)
from .quantization import (
    SaturationError,
    decode,
    decode_packet,
    encode_packet,
    quantize_dynamic,
)


class InvariantViolation(RuntimeError):
    """A run-time guarantee of the design failed (saturation, rank loss, ellipsoid escape)."""


# ---------------------------------------------------------------------------
# Affine flow and one-step integrators


@dataclass(frozen=True)
class ClosedLoop:
    """Matrices of the sampled-data loop; ``K`` is ``m x n``, ``L`` is ``n x p``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    K: np.ndarray
    L: np.ndarray

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    def flow_matrix(self):
        """``M`` with ``d/dt [x, z, u, q] = M [x, z, u, q]``."""
        n, m, p = self.n, self.m, self.p
        M = np.zeros((2 * n + m + p, 2 * n + m + p))
        M[:n, :n] = self.A
        M[:n, 2 * n:2 * n + m] = self.B
        M[n:2 * n, n:2 * n] = self.A
        M[n:2 * n, 2 * n:2 * n + m] = self.B
        M[n:2 * n, 2 * n + m:] = self.L
        return M


@dataclass(frozen=True)
class SimState:
    """Plant state, controller state and the two held signals at time ``t``."""

    t: float
    x: np.ndarray
    z: np.ndarray
    u: np.ndarray
    q: np.ndarray

    def pack(self):
        return np.concatenate([self.x, self.z, self.u, self.q])

    @classmethod
    def unpack(cls, t, s, n, m):
        return cls(t, s[:n].copy(), s[n:2 * n].copy(), s[2 * n:2 * n + m].copy(),
                   s[2 * n + m:].copy())


def _field(sys, x, z, u, q):
    dx = sys.A @ x + sys.B @ u
    dz = sys.A @ z + sys.B @ u + sys.L @ q
    return dx, dz


def step(sys, state, h):
    """One classical RK4 step of size ``h`` with ``u`` and ``q`` held."""
    x, z, u, q = state.x, state.z, state.u, state.q
    k1x, k1z = _field(sys, x, z, u, q)
    k2x, k2z = _field(sys, x + 0.5 * h * k1x, z + 0.5 * h * k1z, u, q)
    k3x, k3z = _field(sys, x + 0.5 * h * k2x, z + 0.5 * h * k2z, u, q)
    k4x, k4z = _field(sys, x + h * k3x, z + h * k3z, u, q)
    x1 = x + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
    z1 = z + h / 6.0 * (k1z + 2 * k2z + 2 * k3z + k4z)
    return SimState(state.t + h, x1, z1, u.copy(), q.copy())


def rk4_transition(M, h):
    """Matrix of one RK4 step for ``s' = M s``."""
    hM = h * np.asarray(M, dtype=float)
    out = np.eye(hM.shape[0])
    term = np.eye(hM.shape[0])
    for i in range(1, 5):
        term = term @ hM / i
        out = out + term
    return out


def exact_affine_oracle(sys, state, h):
    """Exact flow over ``h`` via the matrix exponential (reference for :func:`step`)."""
    s = sla.expm(sys.flow_matrix() * h) @ state.pack()
    return SimState.unpack(state.t + h, s, sys.n, sys.m)


# ---------------------------------------------------------------------------
# Run configuration and results


@dataclass(frozen=True)
class SimConfig:
    x0: np.ndarray
    z0: np.ndarray
    E0: float
    t_end: float
    h: float
    # spacing of the eta fixed warm-up samples; default T/10
    h_warm: float = None
    # zoom used for the warm-up samples; default: smallest non-saturating value
    nu_warm: float = None
    # trajectory probe spacing; default T/10
    record_dt: float = None
    # bisection stops at this fraction of T
    event_tol: float = 1e-13
    # sigma_min(N)/||N|| below this counts as rank loss
    rank_tol: float = 1e-10
    # relative slack on the ellipsoid-containment checks
    level_rtol: float = 1e-6
    strict: bool = False
    max_events: int = 10_000_000
    # a run of zeno_count consecutive output gaps below zeno_gap (default
    # 1e-6*T) is reported as accumulating samples
    zeno_gap: float = None
    zeno_count: int = 20
    # optional time regularization: event rules are not evaluated until
    # min_dwell after the previous sample of the same channel (0 = off)
    min_dwell: float = 0.0


@dataclass
class Transmission:
    channel: str  # "y" (sensor -> controller) or "u" (controller -> actuator)
    t: float
    symbol: np.ndarray
    zoom: float
    value: np.ndarray
    packet: bytes
    cause: str  # warmup | event | deadline | nu_jump | init


@dataclass
class RunStats:
    output_events: int = 0
    input_events: int = 0
    nu_jump_events: int = 0
    output_deadline_events: int = 0
    input_deadline_events: int = 0
    min_output_gap: float = math.inf
    min_input_gap: float = math.inf
    min_rel_sigma: float = math.inf
    min_sigma: float = math.inf
    ellipsoid_violations_o: int = 0
    ellipsoid_violations_c: int = 0
    nu_floor_hits: int = 0
    mu_floor_hits: int = 0
    rank_loss_windows: int = 0
    zeno_episodes: list = field(default_factory=list)
    t_eta: float = math.nan
    nu_eta: float = math.nan
    wall_time: float = 0.0


@dataclass
class SimResult:
    config: SimConfig
    times: np.ndarray
    x: np.ndarray
    z: np.ndarray
    u: np.ndarray
    nu: np.ndarray
    mu: np.ndarray
    V_o: np.ndarray
    V_c: np.ndarray
    transmissions: list
    output_samples: list  # SampleRecord for every output sample
    output_causes: list
    input_times: list
    stats: RunStats
    warnings: list
    segments: list = field(repr=False, default_factory=list)
    _flow: object = field(repr=False, default=None)
    eta: int = 0

    @property
    def output_times(self):
        return np.array([r.t for r in self.output_samples])

    def state_at(self, t):
        """Integrated state (as a :class:`SimState`) at any ``t`` in the run."""
        seg = self._segment_for(t)
        t_w, t_e, s_w = seg
        s = self._flow.propagate(s_w, t - t_w)
        return SimState.unpack(t, s, self._flow.n, self._flow.m)

    def _segment_for(self, t):
        starts = [s[0] for s in self.segments]
        i = int(np.searchsorted(starts, t, side="right")) - 1
        if i < 0 or t > self.segments[-1][1] + 1e-12:
            raise ValueError(f"t = {t} is outside the simulated interval")
        return self.segments[i]

    def history_at(self, t, eta):
        """The ``eta`` output samples in force at time ``t`` (newest first)."""
        hist = OutputHistory(eta)
        for rec in self.output_samples:
            if rec.t > t:
                break
            hist.push(rec)
        return hist


def _powers(d, order):
    """Rows ``[1, d, ..., d^order]``."""
    d = np.asarray(d, dtype=float)
    out = np.empty((d.size, order + 1))
    out[:, 0] = 1.0
    out[:, 1:] = d[:, None]
    return np.cumprod(out, axis=1)


class _Flow:
    """Powers of the RK4 step matrix and fractional-step propagation."""

    def __init__(self, M, h, jmax, n, m):
        self.M = M
        self.h = h
        self.n = n
        self.m = m
        one = rk4_transition(M, h)
        self.P = np.empty((jmax + 1,) + M.shape)
        self.P[0] = np.eye(M.shape[0])
        for j in range(jmax):
            self.P[j + 1] = self.P[j] @ one
        self.jmax = jmax
        d = M.shape[0]
        self._Mpow = np.empty((5, d, d))
        self._Mpow[0] = np.eye(d)
        for i in range(1, 5):
            self._Mpow[i] = self._Mpow[i - 1] @ M / i

    @staticmethod
    def powers(deltas):
        """Rows ``[1, d, d^2, d^3, d^4]`` for each sub-step ``d``."""
        return _powers(deltas, 4)

    def series(self, s):
        """``(M^i / i!) s`` for ``i = 0..4``; ``powers(d) @ series(s)`` is one RK4 step of size ``d``."""
        return self._Mpow @ s

    def propagate(self, s_w, dt):
        """Grid steps from the window start, then one fractional step."""
        j = int(math.floor(dt / self.h + 1e-9))
        j = min(max(j, 0), self.jmax)
        s = self.P[j] @ s_w
        rest = dt - j * self.h
        if rest > 0:
            s = rk4_transition(self.M, rest) @ s
        return s


class _ExpPair:
    """``expm(-A s)`` and ``int_0^s expm(-A u) L du`` for stacks of offsets.

    Both are blocks of ``expm(X s)`` with ``X = [[-A, L], [0, 0]]``. Offsets
    up to ``s_max`` use a Taylor polynomial with precomputed powers of ``X``,
    truncated where the remainder falls below double precision; anything
    longer goes through :func:`scipy.linalg.expm`.
    """

    def __init__(self, A, L, s_max):
        n, p = L.shape
        X = np.zeros((n + p, n + p))
        X[:n, :n] = -A
        X[:n, n:] = L
        self.X = X
        self.n = n
        self.s_max = s_max
        r = norm2(X) * s_max
        self.taylor = r <= 1.0
        order, term = 1, r
        while term > 1e-18 and order < 30:
            order += 1
            term = term * r / order
        self.order = order
        pw = [np.eye(n + p)]
        for i in range(1, order + 1):
            pw.append(pw[-1] @ X / i)
        self._pow = np.array(pw)

    def powers(self, offsets):
        return _powers(offsets, self.order)

    def series(self, left, Eb, q):
        """Coefficients of ``left @ expm(-A d)`` (flattened) and ``Eb @ G(d) @ q`` in powers of ``d``."""
        n = self.n
        if not self.taylor:
            raise ValueError("series form needs a Taylor-admissible step")
        Nser = np.stack([(left @ P[:n, :n]).ravel() for P in self._pow])
        Gser = np.stack([Eb @ (P[:n, n:] @ q) for P in self._pow])
        return Nser, Gser

    def __call__(self, offsets):
        s = np.atleast_1d(np.asarray(offsets, dtype=float))
        if self.taylor and s.max(initial=0.0) <= self.s_max:
            coef = self.powers(s)
            Y = (coef @ self._pow.reshape(self.order + 1, -1)).reshape((len(s),) + self.X.shape)
        else:
            Y = sla.expm(self.X[None, :, :] * s[:, None, None])
        n = self.n
        return Y[:, :n, :n], Y[:, :n, n:]


class _Channel:
    """Encoder and decoder ends of one channel.

    Each end runs its own copy of the zoom law; only the time-stamped symbol
    packet crosses the channel.
    """

    def __init__(self, name, spec):
        self.name = name
        self.spec = spec

    def send(self, t, v, zoom_enc, zoom_dec):
        try:
            _, sym = quantize_dynamic(self.spec, zoom_enc, v)
        except SaturationError as exc:
            raise InvariantViolation(
                f"{self.name}-channel saturation at t = {t:.12g}: {exc}") from None
        packet = encode_packet(t, sym)
        _, sym_rx = decode_packet(packet, self.spec.dim)
        if zoom_enc != zoom_dec:
            raise InvariantViolation(
                f"{self.name}-channel zoom desynchronized at t = {t:.12g}: "
                f"encoder {zoom_enc!r}, decoder {zoom_dec!r}"
            )
        return decode(self.spec, zoom_dec, sym_rx), sym_rx, packet


class Simulator:
    """One closed-loop run. See :func:`simulate`."""


    def __init__(self, plant, dc, config):
        self.plant = plant
        self.dc = dc
        self.cfg = config
        A, B, C = plant.A, plant.B, plant.C
        self.A, self.C, self.L = A, C, dc.L
        self.sys = ClosedLoop(A, B, C, dc.K, dc.L)
        self.n, self.m, self.p = plant.n, plant.m, plant.p
        T = dc.T
        h = config.h
        if not (h > 0 and h <= T):
            raise ValueError(f"step h = {h} must lie in (0, T = {T}]")
        self.jmax = int(math.ceil(T / h)) + 2
        self.flow = _Flow(self.sys.flow_matrix(), h, self.jmax, self.n, self.m)
        self.win = WindowEvaluator(A, C, dc.L, h, self.jmax)
        self.small = _ExpPair(A, dc.L, h)
        self.Cn = norm2(C)
        self.nulaw = NuLaw.from_design(dc.R_y, dc.delta_y, dc.P_o, dc.chi_o, dc.xi_o, C)
        self.mulaw = MuLaw.from_design(dc.R_u, dc.delta_u, dc.P_c, dc.chi_c, dc.xi_c,
                                       dc.zeta1, dc.zeta2, dc.K, dc.R_y, dc.delta_y)
        self.ych = _Channel("y", dc.quantizer_y(self.p))
        self.uch = _Channel("u", dc.quantizer_u(self.m))
        # never ask for more resolution than the time axis itself carries
        self.tol = max(config.event_tol * T, 4 * np.finfo(float).eps * config.t_end)
        # four sectioning rounds shrink a grid step below the tolerance
        self.sections = int(min(4096, max(8, math.ceil((h / self.tol) ** (1 / 4) * 1.0001))))
        self.in_coef = dc.beta_o * dc.R_y / self.Cn
        self.warn = []

    # -- output-side quantities -------------------------------------------------

    def _exp_pair(self, s):
        if s == 0.0:
            return np.eye(self.n), np.zeros((self.n, self.p))
        if s <= self.small.s_max:
            E, G = self.small([s])
            return E[0], G[0]
        E = mat_exp(self.A, -s)
        return E, exp_integral(self.A, self.L, 0.0, s)

    def _prepare(self, hist):
        """``Ntil`` (rows ``C expm(-A (t_k - t_i))``), ``f`` at ``t_k`` and ``q_k``.

        Same quantities as :meth:`WindowEvaluator.prepare`, with every
        exponential taken from one batched call.
        """
        times = hist.times
        eta, p = len(times), self.p
        offs = sorted({times[j] - times[i] for i in range(eta) for j in range(i + 1)} |
                      {times[j - 1] - times[j] for j in range(1, eta)})
        if offs[-1] <= self.small.s_max:
            E, G = self.small(offs)
        else:
            Y = sla.expm(self.small.X[None, :, :] * np.asarray(offs)[:, None, None])
            E, G = Y[:, :self.n, :self.n], Y[:, :self.n, self.n:]
        at = {o: i for i, o in enumerate(offs)}
        C = self.C
        Ntil = np.vstack([C @ E[at[times[0] - ti]] for ti in times])
        Psi = np.zeros((eta * p, eta * p))
        for i in range(eta):
            for j in range(1, i + 1):
                a = times[j] - times[i]
                g = times[j - 1] - times[j]
                Psi[i * p:(i + 1) * p, j * p:(j + 1) * p] = C @ E[at[a]] @ G[at[g]]
        f_base = hist.Y - Psi @ hist.qY
        return Ntil, f_base, hist[0].qval

    def _g_out(self, X, N, Gq, smin=True):
        """Output event values for states ``X`` given ``N`` and ``G(s) q_k`` at the same times."""
        n = self.n
        Ntil, f_base, _ = self._prep
        f = f_base[None, :] - Gq @ Ntil.T
        if smin:
            nN, sm = batched_norm_and_smin(N)
        else:
            nN, sm = batched_spec_norm(N), None
        dy = (X[:, :n] - X[:, n:2 * n]) @ self.C.T - self._ytil_k
        g = nN * np.linalg.norm(dy, axis=1) - self.dc.alpha * np.linalg.norm(f, axis=1)
        return g, nN, sm

    def _g_in(self, X, nu):
        n = self.n
        Z = X[:, n:2 * n]
        dv = (Z - self._z_held) @ self.dc.K.T
        return (np.linalg.norm(dv, axis=1) - self.dc.beta_c * np.linalg.norm(Z, axis=1)
                - self.in_coef * nu)

    def _g_out_at(self, s, s_rel):
        Ew, Gw = self._exp_pair(s_rel)
        Ntil, _, qk = self._prep
        g, _, _ = self._g_out(s[None, :], (Ntil @ Ew)[None], (Gw @ qk)[None], smin=False)
        return float(g[0])

    def _g_in_at(self, s, nu):
        return float(self._g_in(s[None, :], nu)[0])

    # -- main loop -------------------------------------------------------------

    def run(self):
        cfg, dc = self.cfg, self.dc
        n, m, p = self.n, self.m, self.p
        T, h = dc.T, self.flow.h
        wall0 = time.perf_counter()
        stats = RunStats()
        self._stats = stats
        x0 = np.asarray(cfg.x0, dtype=float).reshape(n)
        z0 = np.asarray(cfg.z0, dtype=float).reshape(n)
        if norm2(x0 - z0) > cfg.E0 * (1 + 1e-12):
            raise ValueError(f"|x0 - z0| = {norm2(x0 - z0):.6g} exceeds E0 = {cfg.E0:.6g}")
        if not cfg.t_end > 0:
            raise ValueError("t_end must be positive")
        h_warm = cfg.h_warm if cfg.h_warm is not None else T / 10.0
        if not 0 < h_warm <= T:
            raise ValueError(f"warm-up spacing {h_warm} must lie in (0, T]")
        eta = dc.eta
        warm_times = [i * h_warm for i in range(eta)]
        if dc.relaxed and warm_times[-1] >= dc.window:
            raise ValueError("warm-up samples do not fit in the relaxed sampling window")
        nu_w = cfg.nu_warm
        if nu_w is None:
            nu_w = warmup_zoom(cfg.E0, warm_times, self.A, self.C, dc.L, dc.R_y, dc.delta_y)
        record_dt = cfg.record_dt if cfg.record_dt is not None else T / 10.0
        zeno_gap = cfg.zeno_gap if cfg.zeno_gap is not None else 1e-6 * T
        min_dwell = cfg.min_dwell

        st = {
            "s": np.concatenate([x0, z0, np.zeros(m), np.zeros(p)]),
            "nu": nu_w, "nu_dec": nu_w, "mu": math.nan, "mu_dec": math.nan,
            "nu_at_tau": math.nan, "tau": math.nan, "active": False, "short_run": 0,
        }
        hist = OutputHistory(eta)
        samples, causes, trans, input_times, segments = [], [], [], [], []
        rec_t, rec_s, rec_nu, rec_mu = [], [], [], []
        self._z_held = np.zeros(n)
        self._prep = None
        self._ytil_k = None

        def record(tt, ss):
            rec_t.append(tt)
            rec_s.append(ss.copy())
            rec_nu.append(st["nu"])
            rec_mu.append(st["mu"])

        def output_sample(tt, ss, cause):
            k = len(samples)
            ytil = self.C @ (ss[:n] - ss[n:2 * n])
            if k < eta:
                nu_new = nu_new_dec = nu_w
            elif k == eta:
                tl = [r.t for r in samples] + [tt]
                qv = [r.qval for r in samples]
                nu_new = nu_init(cfg.E0, tl, qv, self.A, dc.L, self.nulaw)
                nu_new_dec = nu_init(cfg.E0, tl, qv, self.A, dc.L, self.nulaw)
                stats.t_eta, stats.nu_eta = tt, nu_new
            else:
                gap = tt - samples[-1].t
                nu_new = nu_update(st["nu"], gap, self.nulaw)
                nu_new_dec = nu_update(st["nu_dec"], gap, self.nulaw)
                stats.min_output_gap = min(stats.min_output_gap, gap)
                if gap < zeno_gap:
                    st["short_run"] += 1
                    if st["short_run"] == cfg.zeno_count:
                        stats.zeno_episodes.append(tt)
                        self._violation(
                            f"y-channel: {cfg.zeno_count} consecutive sampling gaps below "
                            f"{zeno_gap:.3g} ending at t = {tt:.12g} (accumulating samples)")
                else:
                    st["short_run"] = 0
            if nu_new < NU_MIN:
                stats.nu_floor_hits += 1
                nu_new = nu_new_dec = NU_MIN
            value, sym, packet = self.ych.send(tt, ytil, nu_new, nu_new_dec)
            st["nu"], st["nu_dec"] = nu_new, nu_new_dec
            if k >= eta:
                xt = ss[:n] - ss[n:2 * n]
                V = float(xt @ dc.P_o @ xt)
                lev = self.nulaw.level(nu_new)
                if V > lev * (1 + cfg.level_rtol):
                    stats.ellipsoid_violations_o += 1
                    self._violation(f"y-channel: V_o = {V:.6g} above level {lev:.6g} at t = {tt:.12g}")
            rec = SampleRecord(tt, ytil, value, nu_new, sym)
            samples.append(rec)
            causes.append(cause)
            hist.push(rec)
            trans.append(Transmission("y", tt, sym, nu_new, value, packet, cause))
            s_new = ss.copy()
            s_new[2 * n + m:] = value
            st["s"] = s_new
            if hist.full:
                self._prep = self._prepare(hist)
                self._Gq_grid = self.win.G @ value
                self._ytil_k = ytil

        def input_sample(tt, ss, cause):
            if cause == "init":
                mu_new = mu_new_dec = mu_init(ss[n:2 * n], dc.P_c, self.mulaw)
                st["active"] = True
            else:
                gap = tt - st["tau"]
                mu_new = mu_update(st["mu"], gap, st["nu_at_tau"], self.mulaw)
                mu_new_dec = mu_update(st["mu_dec"], gap, st["nu_at_tau"], self.mulaw)
                stats.min_input_gap = min(stats.min_input_gap, gap)
                stats.input_events += 1
            if mu_new < MU_MIN:
                stats.mu_floor_hits += 1
                mu_new = mu_new_dec = MU_MIN
            zz = ss[n:2 * n]
            value, sym, packet = self.uch.send(tt, dc.K @ zz, mu_new, mu_new_dec)
            st["mu"], st["mu_dec"] = mu_new, mu_new_dec
            V = float(zz @ dc.P_c @ zz)
            lev = self.mulaw.level(mu_new)
            if V > lev * (1 + cfg.level_rtol):
                stats.ellipsoid_violations_c += 1
                self._violation(f"u-channel: V_c = {V:.6g} above level {lev:.6g} at t = {tt:.12g}")
            trans.append(Transmission("u", tt, sym, mu_new, value, packet, cause))
            input_times.append(tt)
            st["tau"] = tt
            st["nu_at_tau"] = st["nu"]
            self._z_held = zz.copy()
            s_new = ss.copy()
            s_new[2 * n:2 * n + m] = value
            st["s"] = s_new

        output_sample(0.0, st["s"], "warmup")
        record(0.0, st["s"])
        next_probe = record_dt
        t = 0.0
        t_end = cfg.t_end
        eps_t = 1e-12 * max(1.0, T, t_end)
        windows = 0

        while t < t_end - eps_t:
            windows += 1
            if windows > cfg.max_events:
                raise InvariantViolation(f"more than {cfg.max_events} events before t = {t:.12g}")
            k = len(samples)
            t_k = samples[-1].t
            if k < eta:
                out_deadline, out_cause = warm_times[k], "warmup"
            elif dc.relaxed:
                out_deadline, out_cause = hist[eta - 1].t + dc.window, "deadline"
            else:
                out_deadline, out_cause = t_k + T, "deadline"
            active = st["active"]
            in_deadline = st["tau"] + T if active else math.inf
            t_stop = min(out_deadline, in_deadline, t_end)
            horizon = t + (self.jmax - 2) * h
            advance_only = t_stop > horizon
            if advance_only:
                t_stop = horizon
            t_w, s_w = t, st["s"]
            nu = st["nu"]
            watch_out = hist.full
            out_from = t_k + min_dwell
            in_from = st["tau"] + min_dwell if active else math.inf
            s_rel0 = t_w - t_k
            if watch_out:
                Ew, Gw = self._exp_pair(s_rel0)
                Ntil, _, qk = self._prep
                NtilEw = Ntil @ Ew
                Gwq = Gw @ qk

            J = int(math.floor((t_stop - t_w) / h))
            while J > 0 and t_w + J * h > t_stop:
                J -= 1
            hit = None
            j0, chunk = 1, 4
            while j0 <= J and hit is None:
                j1 = min(J + 1, j0 + chunk)
                X = self.flow.P[j0:j1] @ s_w
                tg = t_w + h * np.arange(j0, j1)
                firing = np.zeros(j1 - j0, dtype=bool)
                if watch_out:
                    N = NtilEw @ self.win.E[j0:j1]
                    Gq = Gwq + self._Gq_grid[j0:j1] @ Ew.T
                    g, nN, smin = self._g_out(X, N, Gq)
                    self._rank_stats(stats, nN, smin, t_w)
                    firing |= (g > 0) & (tg >= out_from)
                if active:
                    firing |= (self._g_in(X, nu) > 0) & (tg >= in_from)
                idx = np.flatnonzero(firing)
                if idx.size:
                    hit = j0 + int(idx[0])
                j0 = j1
                chunk *= 8

            if hit is not None:
                t_e, s_e = self._refine(t_w, s_w, s_rel0, hit, watch_out, active, nu,
                                        out_from, in_from)
                reason = "event"
            else:
                t_e = t_stop
                s_e = self.flow.propagate(s_w, t_stop - t_w)
                reason = "deadline"

            while next_probe < t_e - eps_t:
                record(next_probe, self.flow.propagate(s_w, next_probe - t_w))
                next_probe += record_dt
            segments.append((t_w, t_e, s_w))
            t = t_e
            st["s"] = s_e
            if reason == "deadline" and advance_only:
                continue
            if reason == "deadline" and t_stop == t_end:
                record(t, s_e)
                break

            fire_out, cause = False, out_cause
            if abs(t - out_deadline) <= eps_t:
                fire_out = True
                if out_cause == "deadline":
                    stats.output_deadline_events += 1
            elif watch_out and t >= out_from and self._g_out_at(s_e, t - t_k) > 0:
                fire_out, cause = True, "event"
            nu_before = st["nu"]
            if fire_out:
                output_sample(t, s_e, cause)
                if len(samples) > eta:
                    stats.output_events += 1
                if len(samples) == eta + 1:
                    input_sample(t, st["s"], "init")
                    record(t, st["s"])
                    continue
            if st["active"]:
                s_now = st["s"]
                if abs(t - in_deadline) <= eps_t:
                    stats.input_deadline_events += 1
                    input_sample(t, s_now, "deadline")
                elif t >= in_from and self._g_in_at(s_now, st["nu"]) > 0:
                    jump = fire_out and self._g_in_at(s_now, nu_before) < 0
                    if jump:
                        stats.nu_jump_events += 1
                    input_sample(t, s_now, "nu_jump" if jump else "event")
            record(t, st["s"])

        stats.wall_time = time.perf_counter() - wall0
        S = np.array(rec_s)
        X, Z, U = S[:, :n], S[:, n:2 * n], S[:, 2 * n:2 * n + m]
        Xt = X - Z
        V_o = np.einsum("ti,ij,tj->t", Xt, dc.P_o, Xt)
        V_c = np.einsum("ti,ij,tj->t", Z, dc.P_c, Z)
        return SimResult(
            config=cfg, times=np.array(rec_t), x=X, z=Z, u=U,
            nu=np.array(rec_nu), mu=np.array(rec_mu), V_o=V_o, V_c=V_c,
            transmissions=trans, output_samples=samples, output_causes=causes,
            input_times=input_times, stats=stats, warnings=self.warn,
            segments=segments, _flow=self.flow, eta=eta,
        )

    def _rank_stats(self, stats, nN, smin, t_w):
        rel = smin / np.maximum(nN, 1e-300)
        r = float(rel.min())
        stats.min_rel_sigma = min(stats.min_rel_sigma, r)
        stats.min_sigma = min(stats.min_sigma, float(smin.min()))
        if r <= self.cfg.rank_tol:
            stats.rank_loss_windows += 1
            if stats.rank_loss_windows == 1 or self.cfg.strict:
                self._violation(f"y-channel: N lost rank after t = {t_w:.12g}: "
                                f"sigma_min/||N|| = {r:.3e}")

    def _violation(self, msg):
        if self.cfg.strict:
            raise InvariantViolation(msg)
        if len(self.warn) < 1000:
            self.warn.append(msg)

    def _refine(self, t_w, s_w, s_rel0, j, watch_out, active, nu, out_from, in_from):
        """Locate the first up-crossing in ``(t_w + (j-1)h, t_w + jh]``.

        Each round evaluates both event functions at ``K`` equally spaced
        points of the current bracket and keeps the sub-interval holding the
        first firing point (``log2(K)`` bisection steps at once) until the
        bracket is below ``event_tol * T``.
        """
        h = self.flow.h
        K = self.sections
        t_lo = t_w + (j - 1) * h
        s_lo = self.flow.P[j - 1] @ s_w
        # State and output quantities are polynomials in the sub-step d:
        # contract the power series once, then each round is a few GEMMs.
        Xs = self.flow.series(s_lo)
        if watch_out:
            Ntil, _, qk = self._prep
            Ew, Gw = self._exp_pair(s_rel0)
            Eb = Ew @ self.win.E[j - 1]
            Nser, Gser = self.small.series(Ntil @ Eb, Eb, qk)
            Gq_b = Gw @ qk + Ew @ self._Gq_grid[j - 1]
        lo, hi = 0.0, h
        frac = np.arange(1, K + 1) / K
        q = Ntil.shape[0] if watch_out else 0
        while True:
            d = lo + (hi - lo) * frac
            d[-1] = hi
            X = self.flow.powers(d) @ Xs
            tg = t_lo + d
            firing = np.zeros(K, dtype=bool)
            if watch_out:
                cf = self.small.powers(d)
                N = (cf @ Nser).reshape(K, q, self.n)
                Gq = Gq_b[None, :] + cf @ Gser
                g, nN, smin = self._g_out(X, N, Gq)
                self._rank_stats(self._stats, nN, smin, t_w)
                firing |= (g > 0) & (tg >= out_from)
            if active:
                firing |= (self._g_in(X, nu) > 0) & (tg >= in_from)
            idx = np.flatnonzero(firing)
            if idx.size == 0:  # roundoff at the bracket end; accept hi
                i = K - 1
            else:
                i = int(idx[0])
            new_lo = lo if i == 0 else d[i - 1]
            lo, hi = new_lo, d[i]
            if hi - lo <= self.tol:
                return t_lo + hi, X[i]


def simulate(plant, dc, config):
    """Run the closed loop from ``config`` and return a :class:`SimResult`."""
    return Simulator(plant, dc, config).run()
