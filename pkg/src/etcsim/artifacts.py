"""Run artifacts: trajectory / transmission CSV files and plot-script emission.

Numbers are written with 17 significant digits so every float64 survives a
write/read cycle exactly. Plot data files are verbatim column subsets of
the CSV files (same text for every number), so they parse back to exactly
the values in the run artifacts; derived curves such as ``C (x - z)`` are
formed by expressions in the generated gnuplot script.
"""

import csv
import io
from pathlib import Path

import numpy as np

from .report import fmt_float

TRAJECTORY_CSV = "trajectory.csv"
TRANSMISSIONS_CSV = "transmissions.csv"


class ArtifactError(RuntimeError):
    """Missing or malformed run artifacts."""


def trajectory_header(n, m):
    return (["t"] + [f"x{i}" for i in range(1, n + 1)] + [f"z{i}" for i in range(1, n + 1)]
            + [f"u{i}" for i in range(1, m + 1)] + ["nu", "mu", "V_o", "V_c"])


def trajectory_csv(result):
    n = result.x.shape[1]
    m = result.u.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trajectory_header(n, m))
    for i, t in enumerate(result.times):
        row = [t, *result.x[i], *result.z[i], *result.u[i], result.nu[i], result.mu[i],
               result.V_o[i], result.V_c[i]]
        w.writerow([fmt_float(v) for v in row])
    return buf.getvalue()


TRANSMISSION_HEADER = ["channel", "time", "symbols", "zoom", "decoded", "cause"]


def transmissions_csv(result):
    """One row per packet; vector fields are space-separated inside one column."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRANSMISSION_HEADER)
    for tr in result.transmissions:
        w.writerow([
            tr.channel, fmt_float(tr.t),
            " ".join(str(int(s)) for s in np.atleast_1d(tr.symbol)),
            fmt_float(tr.zoom),
            " ".join(fmt_float(v) for v in np.atleast_1d(tr.value)),
            tr.cause,
        ])
    return buf.getvalue()


def write_run(result, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / TRAJECTORY_CSV).write_text(trajectory_csv(result), encoding="utf-8")
    (out / TRANSMISSIONS_CSV).write_text(transmissions_csv(result), encoding="utf-8")
    return out


def read_csv_text(path):
    """``(header, rows)`` with every field kept as its original text."""
    path = Path(path)
    if not path.is_file():
        raise ArtifactError(f"missing artifact {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ArtifactError(f"{path} is empty")
    return rows[0], rows[1:]


def read_trajectory(path):
    """Trajectory columns as a dict of float arrays."""
    header, rows = read_csv_text(path)
    data = np.array([[float(v) for v in r] for r in rows]).reshape(len(rows), len(header))
    return {h: data[:, i] for i, h in enumerate(header)}


def read_transmissions(path):
    header, rows = read_csv_text(path)
    if header != TRANSMISSION_HEADER:
        raise ArtifactError(f"{path}: unexpected header {header}")
    out = []
    for r in rows:
        out.append(dict(
            channel=r[0], time=float(r[1]),
            symbols=np.array([int(s) for s in r[2].split()], dtype=np.int64),
            zoom=float(r[3]),
            decoded=np.array([float(v) for v in r[4].split()]),
            cause=r[5],
        ))
    return out


# ---------------------------------------------------------------------------
# Plot emission


def _linear_expr(row, a_cols, b_cols=None):
    """gnuplot expression ``sum_j row[j] * ($a_j - $b_j)`` with 1-based data columns."""
    terms = []
    for j, c in enumerate(row):
        if c == 0:
            continue
        col = f"${a_cols[j]}" if b_cols is None else f"(${a_cols[j]}-${b_cols[j]})"
        terms.append(f"({fmt_float(c)})*{col}")
    return "(" + ("+".join(terms) if terms else "0") + ")"


def _write_dat(path, header, rows):
    lines = ["# " + " ".join(header)] + [" ".join(r) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_dat(path):
    """``(header, rows-as-text)`` of a data file written by :func:`emit_plot`."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("# "):
        raise ArtifactError(f"{path}: missing header line")
    return lines[0][2:].split(), [ln.split() for ln in lines[1:] if ln.strip()]


def emit_plot(run_dir, C, K, out_dir=None):
    """Write ``plot.gp`` and tidy data files for the output and input panels.

    Panel 1: the continuous output error ``C (x - z)`` with the decoded
    samples that were transmitted. Panel 2: the nominal input ``K z`` with
    the applied (held, quantized) input as a staircase.
    """
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir is not None else run_dir
    out.mkdir(parents=True, exist_ok=True)
    th, trows = read_csv_text(run_dir / TRAJECTORY_CSV)
    xh, xrows = read_csv_text(run_dir / TRANSMISSIONS_CSV)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    K = np.atleast_2d(np.asarray(K, dtype=float))
    p, n = C.shape
    m = K.shape[0]
    if th != trajectory_header(n, m):
        raise ArtifactError(f"{TRAJECTORY_CSV}: header {th} does not match n={n}, m={m}")

    # Output panel: t, x.., z..
    cols_y = list(range(0, 1 + 2 * n))
    _write_dat(out / "output_continuous.dat", [th[c] for c in cols_y],
               [[r[c] for c in cols_y] for r in trows])
    ys = [r for r in xrows if r[0] == "y"]
    _write_dat(out / "output_samples.dat", ["time"] + [f"ytilde{i}" for i in range(1, p + 1)],
               [[r[1]] + r[4].split() for r in ys])
    # Input panel: t, z.., u..
    cols_u = [0] + list(range(1 + n, 1 + 2 * n + m))
    _write_dat(out / "input_continuous.dat", [th[c] for c in cols_u],
               [[r[c] for c in cols_u] for r in trows])
    us = [r for r in xrows if r[0] == "u"]
    _write_dat(out / "input_updates.dat", ["time"] + [f"u{i}" for i in range(1, m + 1)],
               [[r[1]] + r[4].split() for r in us])

    x_cols = [2 + j for j in range(n)]
    z_cols = [2 + n + j for j in range(n)]
    zi_cols = [2 + j for j in range(n)]  # z columns inside input_continuous.dat
    u_cols = [2 + n + i for i in range(m)]

    lines = [
        "# gnuplot script: output error with transmitted samples, nominal and applied input",
        "set terminal pngcairo size 1000,800",
        "set output 'figure.png'",
        "set multiplot layout 2,1",
        "set xlabel 't'",
        "set grid",
        "set ylabel 'output error'",
    ]
    plots = []
    for i in range(p):
        plots.append(f"'output_continuous.dat' using 1:{_linear_expr(C[i], x_cols, z_cols)} "
                     f"with lines title 'ytilde{i + 1}'")
        if ys:
            plots.append(f"'output_samples.dat' using 1:{i + 2} with points pt 7 ps 0.5 "
                         f"title 'sampled ytilde{i + 1}'")
    lines.append("plot " + ", \\\n     ".join(plots))
    lines.append("set ylabel 'input'")
    plots = []
    for i in range(m):
        plots.append(f"'input_continuous.dat' using 1:{_linear_expr(K[i], zi_cols)} "
                     f"with lines title 'u_nom{i + 1} = K z'")
        plots.append(f"'input_continuous.dat' using 1:{u_cols[i]} with steps "
                     f"title 'applied u{i + 1}'")
        if us:
            plots.append(f"'input_updates.dat' using 1:{i + 2} with points pt 7 ps 0.5 "
                         f"title 'transmitted u{i + 1}'")
    lines.append("plot " + ", \\\n     ".join(plots))
    lines.append("unset multiplot")
    (out / "plot.gp").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out
