"""Input processing unit: event rule for the control input and the input zoom law."""

import bisect
import math
from dataclasses import dataclass

import numpy as np

from .linalg import norm2

MU_MIN = 1e-12


def input_event_value(K, z_now, z_held, nu, beta_c, beta_o, R_y, Cnorm):
    """``|K (z(t) - z(tau_j))| - beta_c |z(t)| - beta_o R_y/||C|| nu(t)``."""
    K = np.atleast_2d(K)
    dv = K @ (np.asarray(z_now, dtype=float) - np.asarray(z_held, dtype=float))
    return norm2(dv) - beta_c * norm2(z_now) - beta_o * R_y / Cnorm * nu


def nu_jump_check(K, z_now, z_held, nu_before, nu_after, beta_c, beta_o, R_y, Cnorm):
    """True when an output-zoom drop alone flips the input event inequality.

    A rule that already held before the drop belongs to the ordinary
    event path and is not reported here.
    """
    before = input_event_value(K, z_now, z_held, nu_before, beta_c, beta_o, R_y, Cnorm)
    after = input_event_value(K, z_now, z_held, nu_after, beta_c, beta_o, R_y, Cnorm)
    return before < 0.0 and after > 0.0


def k_star(t, sample_times):
    """Index of the latest output sample at or before ``t``."""
    if not sample_times or t < sample_times[0]:
        raise ValueError(f"t = {t} precedes the first output sample")
    return bisect.bisect_right(sample_times, t) - 1


def zeta_constants(P_c, Q_c, L, eps_c, xi_c, beta_tilde):
    """Gains of the output-zoom terms in the controller-state ball radius."""
    lq = float(np.linalg.eigvalsh(Q_c)[0])
    lp = float(np.linalg.eigvalsh(P_c)[-1])
    den = (1.0 - eps_c) * lq - xi_c * lp
    if not den > 0:
        raise ValueError(
            f"xi_c = {xi_c:g} too large: (1-eps_c) lam_min(Q_c) - xi_c lam_max(P_c) = {den:g}"
        )
    pcl = 2.0 * norm2(np.asarray(P_c) @ np.asarray(L))
    return (beta_tilde * eps_c * lq + pcl) / den, pcl / den


@dataclass(frozen=True)
class MuLaw:
    R_u: float
    delta_u: float
    lam_min: float
    lam_max: float
    chi_c: float
    xi_c: float
    zeta1: float
    zeta2: float
    Knorm: float
    R_y: float
    delta_y: float

    @classmethod
    def from_design(cls, R_u, delta_u, P_c, chi_c, xi_c, zeta1, zeta2, K, R_y, delta_y):
        lam = np.linalg.eigvalsh(P_c)
        return cls(R_u, delta_u, float(lam[0]), float(lam[-1]), chi_c, xi_c,
                   zeta1, zeta2, norm2(K), R_y, delta_y)

    def level(self, mu):
        return self.lam_min * (self.R_u / self.Knorm) ** 2 * mu**2

    def chi_bar(self, mu, nu):
        return self.chi_c * self.delta_u * mu + (self.zeta1 * self.R_y + self.zeta2 * self.delta_y) * nu

    def theta(self, mu, gap, nu):
        ball = self.lam_max * self.chi_bar(mu, nu) ** 2
        return max(ball, math.exp(-self.xi_c * gap) * self.level(mu))

    @property
    def rho_y(self):
        return (self.Knorm / self.R_u * math.sqrt(self.lam_max / self.lam_min)
                * (self.zeta1 * self.R_y + self.zeta2 * self.delta_y))

    def update(self, mu, gap, nu):
        return mu_update(mu, gap, nu, self)


def mu_update(mu, gap, nu, law):
    """Next input zoom; ``nu`` is the output zoom at the latest output sample before ``tau_j``."""
    if not (mu > 0 and gap > 0):
        raise ValueError(f"need mu > 0 and gap > 0, got mu={mu}, gap={gap}")
    theta = law.theta(mu, gap, nu)
    return law.Knorm / law.R_u * math.sqrt(theta / law.lam_min)


def mu_init(z0, P_c, law):
    """Smallest zoom whose ellipsoid contains the (known) controller state."""
    z0 = np.asarray(z0, dtype=float)
    v = float(z0 @ np.asarray(P_c) @ z0)
    mu = law.Knorm / law.R_u * math.sqrt(max(v, 0.0) / law.lam_min)
    return max(mu, MU_MIN)
