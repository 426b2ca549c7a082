"""Closed-loop run on the oscillator, with CSV artifacts and a plot script.

The plant has complex eigenvalues, so the output unit keeps a window of
eta* = 3 samples. The event rule fires a sample whenever the innovation
grows past its threshold. The input unit sends a new control value only
when the nominal input drifts too far from the held one. The two channels
run asynchronously.

    python demos/03_closed_loop_run.py [output-dir]
"""

import sys
from pathlib import Path

import numpy as np

from etcsim import load_scenario, simulate
from etcsim.artifacts import emit_plot, write_run

out = Path(sys.argv[1] if len(sys.argv) > 1 else "etcsim_out/demo_oscillator")
sc = load_scenario("oscillator")
dc = sc.design()
res = simulate(sc.plant, dc, sc.sim_config())
st = res.stats
print(f"t_end={res.times[-1]:g}: |x|={np.linalg.norm(res.x[-1]):.2e}"
      f"  |x - z|={np.linalg.norm(res.x[-1] - res.z[-1]):.2e}")
print(f"output samples: {len(res.output_samples)} (events {st.output_events}),"
      f" input updates: {len(res.input_times)}")
print(f"smallest gaps: output {st.min_output_gap:.3e}, input {st.min_input_gap:.3e}")
print(f"smallest singular value of N: {st.min_sigma:.3e}")
print(f"zoom: nu {res.nu[0]:.3g} -> {res.nu[-1]:.3g}, mu -> {res.mu[-1]:.3g}")

write_run(res, out)
emit_plot(out, sc.C, sc.K)
print(f"wrote {out}/trajectory.csv, transmissions.csv and plot.gp"
      f" (render with: cd {out} && gnuplot plot.gp)")
