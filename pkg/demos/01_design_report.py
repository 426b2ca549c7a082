"""Design constants for the two shipped scenarios.

The worked example is an unstable second-order plant with one output and
one input. Its design is derived from the gains, the Lyapunov weights and
the margins (eps, xi fraction, rho_bar), and compared against the values
recorded in the scenario's [reported] table. The report flags any value
that the stated design does not reproduce.

    python demos/01_design_report.py
"""

from etcsim import load_scenario
from etcsim.report import build_report

for name in ("worked_example", "oscillator"):
    sc = load_scenario(name)
    rep = build_report(sc)
    dc, dw = rep.dc, rep.dwell
    print(f"== {name}: {sc.description}")
    print(f"   output side: alpha={dc.alpha:.4f} xi_o={dc.xi_o:.5f} chi_o={dc.chi_o:.3f}"
          f"  R_y/delta_y={dc.R_y / dc.delta_y:.2f} ({dc.bits_y} bits)")
    print(f"   input side:  beta_c={dc.beta_c:.4f} xi_c={dc.xi_c:.5f} chi_c={dc.chi_c:.3f}"
          f"  R_u/delta_u={dc.R_u / dc.delta_u:.2f} ({dc.bits_u} bits)")
    print(f"   sampler: eta={dc.eta} relaxed={dc.relaxed} window={dc.window:.4g}")
    print(f"   dwell bounds: t_D={dw.output.t_D:.3e}  tau_D={dw.input.tau_D:.3e}")
    for f in rep.flags:
        print(f"   FLAG {f.name}: {f.message}")
    print()

print("Full report: etcsim design --scenario worked_example")
