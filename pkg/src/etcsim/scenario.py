"""Scenario files: TOML documents describing a plant, a design and a run.

Reference schema (``[section] key``; matrices are nested row arrays)::

    name = "..."                      # optional, defaults to the file stem
    description = "..."               # optional

    [plant]       A (n x n), B (n x m), C (p x n)
    [gains]       K (m x n), L (n x p)
    [observer]    Q (n x n), eps, xi_fraction, rho_bar, delta = 1.0,
                  P (optional certificate), R (optional range >= required)
    [controller]  Q (n x n), eps, xi_fraction, rho_bar, beta_tilde = 1.0,
                  delta = 1.0, P (optional), R (optional)
    [sampling]    T, eta_star (optional, complex-eigenvalue case only)
    [simulation]  x0 (n), z0 (n, default 0), E0 (default |x0 - z0|), t_end,
                  h (default T/1000), h_warm (default T/10), nu_warm,
                  record_dt (default T/10), min_dwell = 0, strict = false
    [dwell]       gap_floor (default T/100)
    [reported]    optional published values to compare against; any of
                  P_o, P_c, alpha, xi_o, chi_o, R_y, bits_y, beta_c,
                  xi_c, chi_c, R_u, bits_u, plus rtol (default 0.01)

Vectors may be written as flat arrays; a flat array for a matrix field is
accepted only where it is unambiguous (a row for ``C``/``K`` when that
gives the right shape, a column for ``B``/``L``).
"""

import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .design import PlantModel, derive_constants
from .simulate import SimConfig


class ScenarioError(ValueError):
    """Malformed or dimensionally inconsistent scenario; the message names the field."""


_BUILTIN_PACKAGE = "etcsim.scenarios"

_REPORTED_KEYS = {
    "P_o", "P_c", "alpha", "xi_o", "chi_o", "R_y", "bits_y", "beta_c",
    "xi_c", "chi_c", "R_u", "bits_u", "rtol",
}


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    K: np.ndarray
    L: np.ndarray
    Q_o: np.ndarray
    Q_c: np.ndarray
    eps_o: float
    eps_c: float
    xi_frac_o: float
    xi_frac_c: float
    beta_tilde: float
    rho_bar: float
    rho_bar_u: float
    T: float
    delta_y: float
    delta_u: float
    P_o: np.ndarray = None
    P_c: np.ndarray = None
    R_y: float = None
    R_u: float = None
    eta_star: int = None
    x0: np.ndarray = None
    z0: np.ndarray = None
    E0: float = None
    t_end: float = None
    h: float = None
    h_warm: float = None
    nu_warm: float = None
    record_dt: float = None
    min_dwell: float = 0.0
    strict: bool = False
    gap_floor: float = None
    reported: dict = field(default_factory=dict)
    source: str = ""

    @property
    def plant(self):
        return PlantModel(self.A, self.B, self.C)

    def design(self):
        return derive_constants(
            self.plant, self.K, self.L, self.Q_o, self.Q_c, self.eps_o, self.eps_c,
            self.xi_frac_o, self.xi_frac_c, self.beta_tilde, self.rho_bar, self.rho_bar_u,
            self.T, delta_y=self.delta_y, delta_u=self.delta_u, P_o=self.P_o, P_c=self.P_c,
            eta_star=self.eta_star, R_y=self.R_y, R_u=self.R_u,
        )

    def step(self, h=None):
        return h if h is not None else (self.h if self.h is not None else self.T / 1000.0)

    def dwell_gap_floor(self):
        return self.gap_floor if self.gap_floor is not None else self.T / 100.0

    def sim_config(self, h=None, strict=None, t_end=None):
        if self.x0 is None or self.t_end is None:
            raise ScenarioError("[simulation] needs x0 and t_end to run")
        return SimConfig(
            x0=self.x0, z0=self.z0, E0=self.E0,
            t_end=float(t_end if t_end is not None else self.t_end),
            h=self.step(h), h_warm=self.h_warm, nu_warm=self.nu_warm,
            record_dt=self.record_dt, min_dwell=self.min_dwell,
            strict=self.strict if strict is None else bool(strict),
        )


# ---------------------------------------------------------------------------
# Field readers with precise diagnostics


def _get(tbl, key, where, default=..., kind=None):
    if key not in tbl:
        if default is ...:
            raise ScenarioError(f"{where}.{key}: required field is missing")
        return default
    return tbl[key]


def _number(tbl, key, where, default=..., lo=None, hi=None, open_lo=False, open_hi=False):
    v = _get(tbl, key, where, default)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{where}.{key}: expected a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ScenarioError(f"{where}.{key}: must be finite, got {v}")
    if lo is not None and (v < lo or (open_lo and v == lo)):
        raise ScenarioError(f"{where}.{key}: must be {'>' if open_lo else '>='} {lo}, got {v}")
    if hi is not None and (v > hi or (open_hi and v == hi)):
        raise ScenarioError(f"{where}.{key}: must be {'<' if open_hi else '<='} {hi}, got {v}")
    return v


def _array(v, name):
    try:
        a = np.array(v, dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError(f"{name}: expected numbers or nested rows of numbers") from None
    if a.ndim > 2 or a.size == 0:
        raise ScenarioError(f"{name}: expected a vector or a matrix given as rows")
    if not np.all(np.isfinite(a)):
        raise ScenarioError(f"{name}: non-finite entries")
    return a


def _matrix(tbl, key, where, rows=None, cols=None, flat="row", default=...):
    v = _get(tbl, key, where, default)
    if v is None:
        return None
    name = f"{where}.{key}"
    a = _array(v, name)
    if a.ndim == 1:
        a = a.reshape(1, -1) if flat == "row" else a.reshape(-1, 1)
    if rows is not None and a.shape[0] != rows:
        raise ScenarioError(f"{name}: expected {rows} rows, got {a.shape[0]} (shape {a.shape})")
    if cols is not None and a.shape[1] != cols:
        raise ScenarioError(f"{name}: expected {cols} columns, got {a.shape[1]} (shape {a.shape})")
    return a


def _vector(tbl, key, where, size, default=...):
    v = _get(tbl, key, where, default)
    if v is None:
        return None
    name = f"{where}.{key}"
    a = _array(v, name).reshape(-1)
    if a.size != size:
        raise ScenarioError(f"{name}: expected {size} entries, got {a.size}")
    return a


def _table(doc, key, required=True):
    if key not in doc:
        if required:
            raise ScenarioError(f"[{key}]: required section is missing")
        return {}
    t = doc[key]
    if not isinstance(t, dict):
        raise ScenarioError(f"[{key}]: expected a table")
    return t


def _reject_unknown(tbl, allowed, where):
    extra = sorted(set(tbl) - set(allowed))
    if extra:
        raise ScenarioError(f"{where}: unknown field(s) {', '.join(extra)}")


def parse_scenario(doc, source="<memory>", name=None):
    """Validate a parsed TOML document and build a :class:`Scenario`."""
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a table")
    _reject_unknown(doc, {"name", "description", "plant", "gains", "observer", "controller",
                          "sampling", "simulation", "dwell", "reported"}, "scenario")
    plant = _table(doc, "plant")
    _reject_unknown(plant, {"A", "B", "C"}, "plant")
    A = _matrix(plant, "A", "plant")
    n = A.shape[0]
    if A.shape != (n, n):
        raise ScenarioError(f"plant.A: expected a square matrix, got shape {A.shape}")
    B = _matrix(plant, "B", "plant", rows=n, flat="col")
    m = B.shape[1]
    C = _matrix(plant, "C", "plant", cols=n, flat="row")
    p = C.shape[0]

    gains = _table(doc, "gains")
    _reject_unknown(gains, {"K", "L"}, "gains")
    K = _matrix(gains, "K", "gains", rows=m, cols=n, flat="row")
    L = _matrix(gains, "L", "gains", rows=n, cols=p, flat="col")

    obs = _table(doc, "observer")
    _reject_unknown(obs, {"Q", "eps", "xi_fraction", "rho_bar", "delta", "P", "R"}, "observer")
    ctl = _table(doc, "controller")
    _reject_unknown(ctl, {"Q", "eps", "xi_fraction", "rho_bar", "beta_tilde", "delta", "P", "R"},
                    "controller")
    unit = dict(lo=0.0, hi=1.0, open_lo=True, open_hi=True)

    samp = _table(doc, "sampling")
    _reject_unknown(samp, {"T", "eta_star"}, "sampling")
    T = _number(samp, "T", "sampling", lo=0.0, open_lo=True)
    eta_star = _get(samp, "eta_star", "sampling", None)
    if eta_star is not None and (isinstance(eta_star, bool) or not isinstance(eta_star, int)
                                 or eta_star < 1):
        raise ScenarioError(f"sampling.eta_star: expected a positive integer, got {eta_star!r}")

    sim = _table(doc, "simulation", required=False)
    _reject_unknown(sim, {"x0", "z0", "E0", "t_end", "h", "h_warm", "nu_warm", "record_dt",
                          "min_dwell", "strict"}, "simulation")
    x0 = _vector(sim, "x0", "simulation", n, None)
    z0 = _vector(sim, "z0", "simulation", n, None)
    if z0 is None and x0 is not None:
        z0 = np.zeros(n)
    E0 = _number(sim, "E0", "simulation", None, lo=0.0)
    if E0 is None and x0 is not None:
        E0 = float(np.linalg.norm(x0 - z0))
    if E0 is not None and x0 is not None and np.linalg.norm(x0 - z0) > E0 * (1 + 1e-12):
        raise ScenarioError(
            f"simulation.E0: {E0:g} is smaller than |x0 - z0| = {np.linalg.norm(x0 - z0):.6g}")
    strict = _get(sim, "strict", "simulation", False)
    if not isinstance(strict, bool):
        raise ScenarioError(f"simulation.strict: expected true/false, got {strict!r}")

    dwell = _table(doc, "dwell", required=False)
    _reject_unknown(dwell, {"gap_floor"}, "dwell")

    reported = _table(doc, "reported", required=False)
    _reject_unknown(reported, _REPORTED_KEYS, "reported")
    rep = {}
    for k, v in reported.items():
        if k in ("P_o", "P_c"):
            rep[k] = _matrix(reported, k, "reported", rows=n, cols=n)
        else:
            rep[k] = _number(reported, k, "reported")

    pos = dict(lo=0.0, open_lo=True)
    return Scenario(
        name=name or str(doc.get("name", "scenario")),
        description=str(doc.get("description", "")),
        A=A, B=B, C=C, K=K, L=L,
        Q_o=_matrix(obs, "Q", "observer", rows=n, cols=n),
        Q_c=_matrix(ctl, "Q", "controller", rows=n, cols=n),
        eps_o=_number(obs, "eps", "observer", **unit),
        eps_c=_number(ctl, "eps", "controller", **unit),
        xi_frac_o=_number(obs, "xi_fraction", "observer", **unit),
        xi_frac_c=_number(ctl, "xi_fraction", "controller", **unit),
        beta_tilde=_number(ctl, "beta_tilde", "controller", 1.0, **pos),
        rho_bar=_number(obs, "rho_bar", "observer", **unit),
        rho_bar_u=_number(ctl, "rho_bar", "controller", **unit),
        T=T,
        delta_y=_number(obs, "delta", "observer", 1.0, **pos),
        delta_u=_number(ctl, "delta", "controller", 1.0, **pos),
        P_o=_matrix(obs, "P", "observer", rows=n, cols=n, default=None),
        P_c=_matrix(ctl, "P", "controller", rows=n, cols=n, default=None),
        R_y=_number(obs, "R", "observer", None, **pos),
        R_u=_number(ctl, "R", "controller", None, **pos),
        eta_star=eta_star,
        x0=x0, z0=z0, E0=E0,
        t_end=_number(sim, "t_end", "simulation", None, **pos),
        h=_number(sim, "h", "simulation", None, **pos),
        h_warm=_number(sim, "h_warm", "simulation", None, **pos),
        nu_warm=_number(sim, "nu_warm", "simulation", None, **pos),
        record_dt=_number(sim, "record_dt", "simulation", None, **pos),
        min_dwell=_number(sim, "min_dwell", "simulation", 0.0, lo=0.0),
        strict=strict,
        gap_floor=_number(dwell, "gap_floor", "dwell", None, **pos),
        reported=rep,
        source=source,
    )


def builtin_scenarios():
    """Names of the scenarios shipped with the package."""
    root = resources.files(_BUILTIN_PACKAGE)
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def load_scenario(spec):
    """Load a scenario from a file path or a built-in scenario name."""
    path = Path(spec)
    if path.is_file():
        text = path.read_text(encoding="utf-8")
        source, stem = str(path), path.stem
    else:
        res = resources.files(_BUILTIN_PACKAGE) / f"{spec}.toml"
        if not res.is_file():
            raise ScenarioError(
                f"no scenario file {spec!r} and no built-in scenario of that name "
                f"(built-ins: {', '.join(builtin_scenarios())})")
        text = res.read_text(encoding="utf-8")
        source, stem = f"builtin:{spec}", str(spec)
    return loads_scenario(text, source=source, default_name=stem)


def loads_scenario(text, source="<string>", default_name="scenario"):
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{source}: parse error: {exc}") from None
    name = doc.get("name", default_name)
    return parse_scenario(doc, source=source, name=name)
