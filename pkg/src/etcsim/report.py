"""Design reports: structured text and a ``name = value`` key-value document.

Every value in the key-value form is written so that :func:`parse_kv`
recovers it exactly: floats with 17 significant digits, integers,
booleans as ``true``/``false`` and strings JSON-quoted. Matrices are
flattened to ``name[i,j]`` entries (1-based).
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .design import dwell_report, eta_star_rule
from .linalg import norm2, solve_lyapunov
from .quantization import ratio_bits


def fmt_float(v):
    """Shortest-safe textual form of a float: 17 significant digits."""
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".17g")


def _fmt_value(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt_float(v)
    if isinstance(v, str):
        return json.dumps(v)
    raise TypeError(f"unsupported report value {v!r}")


def flatten(items):
    """Expand matrices and vectors in ``(name, value)`` pairs into scalar entries."""
    out = {}
    for name, v in items:
        if isinstance(v, np.ndarray) or isinstance(v, (list, tuple)):
            a = np.asarray(v)
            if a.ndim == 1:
                for i, x in enumerate(a, 1):
                    out[f"{name}[{i}]"] = x.item()
            else:
                for (i, j), x in np.ndenumerate(a):
                    out[f"{name}[{i + 1},{j + 1}]"] = x.item()
        else:
            out[name] = v
    return out


def format_kv(entries):
    """Render a mapping of scalars as ``name = value`` lines."""
    lines = []
    for k, v in entries.items():
        if not k or "=" in k or k != k.strip() or "\n" in k:
            raise ValueError(f"invalid key {k!r}")
        lines.append(f"{k} = {_fmt_value(v)}")
    return "\n".join(lines) + "\n"


def _parse_value(s):
    if s in ("nan", "inf", "-inf"):
        return float(s)
    if s == "true":
        return True
    if s == "false":
        return False
    if s.startswith('"'):
        return json.loads(s)
    try:
        return int(s)
    except ValueError:
        return float(s)


def parse_kv(text):
    """Inverse of :func:`format_kv`; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, val = line.partition(" = ")
        if not sep:
            raise ValueError(f"line {lineno}: expected 'name = value', got {line!r}")
        try:
            out[key] = _parse_value(val.strip())
        except ValueError:
            raise ValueError(f"line {lineno}: cannot parse value {val!r}") from None
    return out


def kv_matrix(kv, name):
    """Reassemble ``name[i,j]`` entries into an array."""
    idx = {}
    for k, v in kv.items():
        if k.startswith(name + "[") and k.endswith("]"):
            parts = tuple(int(p) - 1 for p in k[len(name) + 1:-1].split(","))
            idx[parts] = v
    if not idx:
        raise KeyError(name)
    shape = tuple(max(p[d] for p in idx) + 1 for d in range(len(next(iter(idx)))))
    a = np.zeros(shape)
    for p, v in idx.items():
        a[p] = v
    return a


@dataclass
class Flag:
    name: str
    message: str


@dataclass
class DesignReport:
    scenario: object
    dc: object
    dwell: object
    entries: dict
    flags: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def to_kv(self):
        return format_kv(self.entries)

    def to_text(self):
        return render_text(self)


def _lyap_residual(M, P, Q):
    return norm2(M.T @ P + P @ M + Q)


def _agrees(computed, reported, rtol):
    """Within ``rtol`` or within rounding of the printed digits of ``reported``."""
    text = repr(float(reported))
    decimals = len(text.split(".")[1]) if "." in text and "e" not in text else 0
    tol = max(rtol * abs(reported), 0.5 * 10.0 ** -decimals)
    return abs(computed - reported) <= tol * (1 + 1e-12)


def build_report(scenario, dc=None, gap_floor=None):
    """Assemble the full design report for a scenario."""
    sc = scenario
    plant = sc.plant
    dc = dc if dc is not None else sc.design()
    gap_floor = gap_floor if gap_floor is not None else sc.dwell_gap_floor()
    dw = dwell_report(plant, dc, gap_floor)
    A, B, C = plant.A, plant.B, plant.C
    Mo = A - dc.L @ C
    Mc = A + B @ dc.K
    P_o_exact = solve_lyapunov(Mo, dc.Q_o_nominal)
    P_c_exact = solve_lyapunov(Mc, dc.Q_c_nominal)

    items = [
        ("scenario", sc.name),
        ("n", plant.n), ("m", plant.m), ("p", plant.p),
        ("eps_o", dc.eps_o), ("eps_c", dc.eps_c),
        ("alpha", dc.alpha), ("xi_o", dc.xi_o), ("chi_o", dc.chi_o),
        ("beta_c", dc.beta_c), ("beta_o", dc.beta_o), ("beta_tilde", dc.beta_tilde),
        ("xi_c", dc.xi_c), ("chi_c", dc.chi_c), ("zeta1", dc.zeta1), ("zeta2", dc.zeta2),
        ("rho_bar", dc.rho_bar), ("rho_bar_u", dc.rho_bar_u), ("T", dc.T),
        ("eta", dc.eta), ("relaxed", bool(dc.relaxed)), ("omega", dc.omega), ("window", dc.window),
        ("delta_y", dc.delta_y), ("R_y", dc.R_y), ("R_y_over_delta_y", dc.R_y / dc.delta_y),
        ("R_y_over_delta_y_required", 1.0 / dc.ratio_y),
        ("bits_y", ratio_bits(dc.delta_y / dc.R_y)),
        ("codeword_bits_y", dc.quantizer_y(plant.p).codeword_bits),
        ("delta_u", dc.delta_u), ("R_u", dc.R_u), ("R_u_over_delta_u", dc.R_u / dc.delta_u),
        ("R_u_over_delta_u_required", 1.0 / dc.ratio_u),
        ("bits_u", ratio_bits(dc.delta_u / dc.R_u)),
        ("codeword_bits_u", dc.quantizer_u(plant.m).codeword_bits),
        ("P_o", dc.P_o), ("Q_o", dc.Q_o), ("P_c", dc.P_c), ("Q_c", dc.Q_c),
        ("P_o_exact", P_o_exact), ("P_c_exact", P_c_exact),
    ]
    for label, M in (("P_o", dc.P_o), ("Q_o", dc.Q_o), ("P_c", dc.P_c), ("Q_c", dc.Q_c),
                     ("Q_o_nominal", dc.Q_o_nominal), ("Q_c_nominal", dc.Q_c_nominal)):
        ev = np.linalg.eigvalsh(M)
        items += [(f"lambda_min_{label}", float(ev[0])), (f"lambda_max_{label}", float(ev[-1]))]
    items += [
        ("lyap_residual_o", _lyap_residual(Mo, dc.P_o, dc.Q_o_nominal)),
        ("lyap_residual_c", _lyap_residual(Mc, dc.P_c, dc.Q_c_nominal)),
        ("lyap_residual_o_exact", _lyap_residual(Mo, P_o_exact, dc.Q_o_nominal)),
        ("lyap_residual_c_exact", _lyap_residual(Mc, P_c_exact, dc.Q_c_nominal)),
    ]
    fo, fi = dw.output, dw.input
    fc = fo.facts
    items += [
        ("dwell_gap_floor", fc.gap_floor),
        ("fact_c", fc.c), ("fact_sigma", fc.sigma), ("fact_c1", fc.c1), ("fact_sigma1", fc.sigma1),
        ("fact_c2", fc.c2), ("fact_sigma2", fc.sigma2), ("fact_sigma_bar", fc.sigma_bar),
        ("fact_cbar", fc.cbar), ("fact_sigma_hat", fc.sigma_hat),
        ("fact_min_singular", fc.min_singular),
        ("a1", fo.a1), ("a2", fo.a2), ("a3", fo.a3), ("a4", fo.a4), ("r_out", fo.r),
        ("t_D", fo.t_D), ("t_D_comparison", fo.t_D_comparison),
        ("beta_dwell", fi.beta), ("r_in", fi.r),
    ]
    items += [(f"b{i}", v) for i, v in enumerate(fi.b, 1)]
    items += [("tau_D", fi.tau_D), ("tau_D_comparison", fi.tau_D_comparison)]
    items += [("suggested_t_end", 2 * math.log(1e4) / dc.xi_o)]

    flags, notes = _consistency(sc, dc, P_c_exact, P_o_exact, Mc, Mo)
    notes = list(dw.notes) + notes
    if dc.relaxed:
        notes.append(
            f"complex eigenvalues (omega = {dc.omega:.6g}): relaxed sampler with eta* = {dc.eta} "
            f"(rule minimum {eta_star_rule(plant.n, dc.omega, dc.T)}), window {dc.window:.6g}")
    notes.append(
        "trade-off: a larger eps_o raises the output triggering level alpha (sparser "
        "sampling) but lowers (1 - eps_o), which raises chi_o and the number of output "
        "quantization levels; eps_c plays the same role for beta_c, chi_c and R_u")
    items += [(f"flag_{f.name}", f.message) for f in flags]
    items += [(f"note_{i + 1}", s) for i, s in enumerate(notes)]
    return DesignReport(sc, dc, dw, flatten(items), flags, notes)


def _consistency(sc, dc, P_c_exact, P_o_exact, Mc, Mo):
    """Compare against published values in ``[reported]``; returns (flags, notes)."""
    rep = sc.reported
    flags, notes = [], []
    if not rep:
        return flags, notes
    rtol = rep.get("rtol", 0.01)
    for key, Pex, M, Q in (("P_o", P_o_exact, Mo, dc.Q_o_nominal),
                           ("P_c", P_c_exact, Mc, dc.Q_c_nominal)):
        if key not in rep:
            continue
        Pr = rep[key]
        res = _lyap_residual(M, Pr, Q)
        dev = float(np.max(np.abs(Pr - Pex)))
        if dev > 0.01:
            flags.append(Flag(
                f"{key}_inconsistent",
                f"reported {key} = {Pr.tolist()} is not the Lyapunov solution: residual "
                f"{res:.3g}; the solution is {np.round(Pex, 6).tolist()}"))
        else:
            notes.append(f"reported {key} agrees with the Lyapunov solution to {dev:.2g} "
                         f"(rounding residual {res:.3g})")
    computed = {"alpha": dc.alpha, "xi_o": dc.xi_o, "chi_o": dc.chi_o, "R_y": dc.R_y / dc.delta_y,
                "beta_c": dc.beta_c, "xi_c": dc.xi_c, "chi_c": dc.chi_c,
                "R_u": dc.R_u / dc.delta_u,
                "bits_y": ratio_bits(dc.delta_y / dc.R_y), "bits_u": ratio_bits(dc.delta_u / dc.R_u)}
    bad = []
    for k, v in computed.items():
        if k in rep:
            rv = rep[k]
            ok = (v == rv) if k.startswith("bits") else _agrees(v, rv, rtol)
            if not ok:
                bad.append(f"{k}: computed {v:.6g}, reported {rv:.6g}")
    side_c = [b for b in bad if b.split(":")[0] in ("xi_c", "chi_c", "R_u", "bits_u")]
    side_o = [b for b in bad if b not in side_c]
    if side_o:
        flags.append(Flag("output_side_mismatch", "; ".join(side_o)))
    if side_c:
        msg = "; ".join(side_c)
        if "xi_c" in rep:
            lq = float(np.linalg.eigvalsh(dc.Q_c)[0])
            lp = float(np.linalg.eigvalsh(dc.P_c)[-1])
            frac = sc.xi_frac_c
            eps_implied = 1 - rep["xi_c"] * lp / (frac * lq)
            msg += (f"; the reported xi_c implies eps_c = {eps_implied:.4f} "
                    f"(configured {dc.eps_c:g})")
        if "P_c" in rep and any(f.name == "P_c_inconsistent" for f in flags):
            msg += "; the reported P_c is itself not a Lyapunov solution"
        flags.append(Flag("input_side_mismatch",
                          "reported (xi_c, chi_c, R_u) are not reproduced by the reported "
                          "design: " + msg))
    return flags, notes


def render_text(rep):
    """Human-readable sectioned report."""
    e = rep.entries
    dc = rep.dc
    g = lambda k: f"{e[k]:.6g}" if isinstance(e[k], float) else str(e[k])  # noqa: E731

    def mat(M):
        return "[" + ", ".join("[" + ", ".join(f"{x:.6g}" for x in row) + "]" for row in M) + "]"

    lines = [f"Design report: {e['scenario']}  (n={e['n']}, m={e['m']}, p={e['p']})", ""]
    lines += ["Observer / output sampler",
              f"  P_o = {mat(dc.P_o)}   (Lyapunov solution {mat(e_mat(e, 'P_o_exact'))})",
              f"  lambda(P_o) in [{g('lambda_min_P_o')}, {g('lambda_max_P_o')}], "
              f"lambda(Q_o certified) in [{g('lambda_min_Q_o')}, {g('lambda_max_Q_o')}], "
              f"residual {g('lyap_residual_o')}",
              f"  eps_o = {g('eps_o')}  alpha = {g('alpha')}  xi_o = {g('xi_o')}  chi_o = {g('chi_o')}",
              f"  eta = {g('eta')}  relaxed = {e['relaxed']}  window = {g('window')}  T = {g('T')}",
              f"  R_y/Delta_y = {g('R_y_over_delta_y')} (required {g('R_y_over_delta_y_required')}), "
              f"{g('bits_y')} bits per axis, {g('codeword_bits_y')}-bit codeword",
              "",
              "Controller / input sampler",
              f"  P_c = {mat(dc.P_c)}   (Lyapunov solution {mat(e_mat(e, 'P_c_exact'))})",
              f"  lambda(P_c) in [{g('lambda_min_P_c')}, {g('lambda_max_P_c')}], "
              f"lambda(Q_c certified) in [{g('lambda_min_Q_c')}, {g('lambda_max_Q_c')}], "
              f"residual {g('lyap_residual_c')}",
              f"  eps_c = {g('eps_c')}  beta_c = {g('beta_c')}  beta_o = {g('beta_o')}  "
              f"xi_c = {g('xi_c')}  chi_c = {g('chi_c')}  zeta1 = {g('zeta1')}  zeta2 = {g('zeta2')}",
              f"  R_u/Delta_u = {g('R_u_over_delta_u')} (required {g('R_u_over_delta_u_required')}), "
              f"{g('bits_u')} bits per axis, {g('codeword_bits_u')}-bit codeword",
              "",
              "Dwell-time bounds",
              f"  envelopes: c = {g('fact_c')}, sigma = {g('fact_sigma')}, c1 = {g('fact_c1')}, "
              f"sigma1 = {g('fact_sigma1')}, c2 = {g('fact_c2')}, sigma2 = {g('fact_sigma2')}, "
              f"sigma_bar = {g('fact_sigma_bar')} (gap floor {g('dwell_gap_floor')})",
              f"  output: a1 = {g('a1')}, a2 = {g('a2')}, a3 = {g('a3')}, a4 = {g('a4')}, r = {g('r_out')}"
              f"  ->  t_D = {g('t_D')} (exact comparison {g('t_D_comparison')})",
              "  input:  " + ", ".join(f"b{i} = {g(f'b{i}')}" for i in range(1, 9))
              + f", r = {g('r_in')}  ->  tau_D = {g('tau_D')} (exact comparison {g('tau_D_comparison')})",
              "",
              f"Suggested horizon for a 1e-4 zoom reduction: t_end >= {g('suggested_t_end')}"]
    if rep.flags:
        lines += ["", "Consistency flags"]
        lines += [f"  [{f.name}] {f.message}" for f in rep.flags]
    if rep.notes:
        lines += ["", "Notes"]
        lines += [f"  - {s}" for s in rep.notes]
    return "\n".join(lines) + "\n"


def e_mat(entries, name):
    return kv_matrix(entries, name)


def run_summary(result, dwell=None):
    """Key-value summary of a simulation run."""
    st = result.stats
    x_end = result.x[-1]
    xt_end = x_end - result.z[-1]
    items = [
        ("t_end", float(result.times[-1])),
        ("x_end_norm", norm2(x_end)),
        ("xtilde_end_norm", norm2(xt_end)),
        ("nu_end", float(result.nu[-1])),
        ("nu_eta", st.nu_eta),
        ("nu_ratio", float(result.nu[-1]) / st.nu_eta),
        ("mu_end", float(result.mu[-1])),
        ("t_eta", st.t_eta),
        ("output_events", st.output_events),
        ("output_deadline_events", st.output_deadline_events),
        ("input_events", st.input_events),
        ("input_deadline_events", st.input_deadline_events),
        ("nu_jump_events", st.nu_jump_events),
        ("min_output_gap", st.min_output_gap),
        ("min_input_gap", st.min_input_gap),
        ("min_sigma_N", st.min_sigma),
        ("min_rel_sigma_N", st.min_rel_sigma),
        ("zeno_episodes", len(st.zeno_episodes)),
        ("ellipsoid_violations_o", st.ellipsoid_violations_o),
        ("ellipsoid_violations_c", st.ellipsoid_violations_c),
        ("warnings", len(result.warnings)),
    ]
    if dwell is not None:
        t_D, tau_D = dwell.output.t_D, dwell.input.tau_D
        items += [
            ("t_D", t_D), ("tau_D", tau_D),
            ("output_gaps_respect_t_D", bool(st.min_output_gap >= t_D)),
            ("input_gaps_respect_tau_D", bool(st.min_input_gap >= tau_D)),
            ("output_conservatism", st.min_output_gap / t_D),
            ("input_conservatism", st.min_input_gap / tau_D),
        ]
    return flatten(items)
