import copy
import math
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from etcsim import cli
from etcsim.artifacts import (ArtifactError, emit_plot, read_csv_text, read_dat, read_trajectory,
                              read_transmissions, trajectory_csv, transmissions_csv, write_run)
from etcsim.report import build_report, flatten, format_kv, kv_matrix, parse_kv, run_summary
from etcsim.scenario import ScenarioError, builtin_scenarios, load_scenario, parse_scenario
from etcsim.simulate import simulate

from importlib import resources


def _doc(name="oscillator"):
    text = (resources.files("etcsim.scenarios") / f"{name}.toml").read_text(encoding="utf-8")
    return tomllib.loads(text)


def _toml(doc):
    """Minimal TOML writer for the scenario subset (tables of numbers, strings, arrays)."""
    def val(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, str):
            return '"' + v.replace('"', '\\"') + '"'
        if isinstance(v, list):
            return "[" + ", ".join(val(x) for x in v) + "]"
        return repr(float(v)) if isinstance(v, float) else str(v)
    lines = [f"{k} = {val(v)}" for k, v in doc.items() if not isinstance(v, dict)]
    for k, v in doc.items():
        if isinstance(v, dict):
            lines.append(f"[{k}]")
            lines += [f"{kk} = {val(vv)}" for kk, vv in v.items()]
    return "\n".join(lines) + "\n"


def test_builtins_load():
    assert {"worked_example", "oscillator"} <= set(builtin_scenarios())
    sc = load_scenario("oscillator")
    assert sc.plant.n == 2 and sc.eta_star == 3


MATRIX_FIELDS = [("plant", "A"), ("plant", "B"), ("plant", "C"), ("gains", "K"), ("gains", "L"),
                 ("observer", "Q"), ("controller", "Q")]

RELATED = {("plant", "B"): {"gains.K"}, ("plant", "C"): {"gains.L"}}


@settings(max_examples=60, deadline=None)
@given(field=st.sampled_from(MATRIX_FIELDS), rows=st.integers(1, 4), cols=st.integers(1, 4))
def test_dimension_mismatch_names_the_field(field, rows, cols):
    doc = _doc()
    sec, key = field
    orig = np.asarray(doc[sec][key], dtype=float)
    if (rows, cols) == orig.shape:
        return
    doc = copy.deepcopy(doc)
    doc[sec][key] = np.ones((rows, cols)).tolist()
    # B and C fix m and p, so a consistent-looking B/C moves the blame to K/L
    allowed = {f"{sec}.{key}"} | RELATED.get((sec, key), set())
    if (sec, key) == ("plant", "A"):
        allowed |= {f"{s}.{k}" for s, k in MATRIX_FIELDS} | {"simulation.x0", "simulation.z0"}
    with pytest.raises(ScenarioError) as info:
        parse_scenario(doc, "fuzz")
    assert str(info.value).split(":")[0] in allowed, str(info.value)


@pytest.mark.parametrize("mutate, needle", [
    (lambda d: d["simulation"].__setitem__("x0", [1.0, 2.0, 3.0]), "simulation.x0"),
    (lambda d: d["observer"].__setitem__("eps", 1.5), "observer.eps"),
    (lambda d: d["sampling"].__setitem__("T", -1.0), "sampling.T"),
    (lambda d: d["plant"].__setitem__("bogus", 1), "bogus"),
    (lambda d: d.pop("gains"), "gains"),
    (lambda d: d["plant"].__setitem__("A", "no"), "plant.A"),
])
def test_field_errors(mutate, needle):
    doc = copy.deepcopy(_doc())
    mutate(doc)
    with pytest.raises(ScenarioError, match=needle.replace(".", r"\.")):
        parse_scenario(doc, "case")


def test_report_kv_round_trip(worked):
    rep = build_report(worked)
    text = rep.to_kv()
    kv = parse_kv(text)
    assert format_kv(kv) == text
    assert kv["alpha"] == rep.dc.alpha
    assert np.array_equal(kv_matrix(kv, "P_c"), rep.dc.P_c)
    assert kv["bits_y"] == 7
    assert any(k.startswith("flag_P_c") for k in kv)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.one_of(st.floats(allow_nan=False), st.integers(-10**9, 10**9),
                          st.booleans(), st.text(max_size=20)), min_size=1, max_size=8))
def test_kv_round_trip_values(values):
    items = [(f"k{i}", v) for i, v in enumerate(values)]
    kv = parse_kv(format_kv(dict(items)))
    for (k, v) in items:
        got = kv[k]
        if isinstance(v, float) and math.isinf(v):
            assert got == v
        else:
            # integral floats print without a fraction, so only the value is kept
            assert got == v
            if isinstance(v, (bool, str)):
                assert type(got) is type(v)


def test_design_report_flags_and_text(worked):
    rep = build_report(worked)
    names = {f.name for f in rep.flags}
    assert {"P_c_inconsistent", "input_side_mismatch"} <= names
    txt = rep.to_text()
    assert "alpha" in txt and "P_c_inconsistent" in txt


@pytest.fixture(scope="module")
def osc_short(osc, osc_dc):
    return simulate(osc.plant, osc_dc, osc.sim_config(t_end=8.0))


def test_csv_round_trip_is_exact(osc_short, tmp_path):
    write_run(osc_short, tmp_path)
    traj = read_trajectory(tmp_path / "trajectory.csv")
    assert np.array_equal(traj["t"], osc_short.times)
    assert np.array_equal(traj["x1"], osc_short.x[:, 0])
    assert np.array_equal(traj["mu"], osc_short.mu, equal_nan=True)
    trs = read_transmissions(tmp_path / "transmissions.csv")
    assert len(trs) == len(osc_short.transmissions)
    for a, b in zip(trs, osc_short.transmissions):
        assert a["channel"] == b.channel and a["time"] == b.t and a["zoom"] == b.zoom
        assert np.array_equal(a["symbols"], b.symbol) and np.array_equal(a["decoded"], b.value)


def test_plot_data_are_csv_subsets(osc, osc_short, tmp_path):
    write_run(osc_short, tmp_path)
    emit_plot(tmp_path, osc.C, osc.K)
    th, trows = read_csv_text(tmp_path / "trajectory.csv")
    h, rows = read_dat(tmp_path / "output_continuous.dat")
    assert h == th[:5] and rows == [r[:5] for r in trows]
    h, rows = read_dat(tmp_path / "input_continuous.dat")
    assert h == ["t", "z1", "z2", "u1"] and rows == [[r[0], r[3], r[4], r[5]] for r in trows]
    _, xr = read_csv_text(tmp_path / "transmissions.csv")
    _, ys = read_dat(tmp_path / "output_samples.dat")
    assert ys == [[r[1], r[4]] for r in xr if r[0] == "y"]
    _, us = read_dat(tmp_path / "input_updates.dat")
    assert [[float(v) for v in r] for r in us] == [[float(r[1]), float(r[4])] for r in xr if r[0] == "u"]
    gp = (tmp_path / "plot.gp").read_text()
    assert "with steps" in gp and "output_samples.dat" in gp


def test_plot_without_transmissions(osc, osc_short, tmp_path):
    write_run(osc_short, tmp_path)
    hdr = (tmp_path / "transmissions.csv").read_text().splitlines()[0]
    (tmp_path / "transmissions.csv").write_text(hdr + "\n")
    emit_plot(tmp_path, osc.C, osc.K)
    assert read_dat(tmp_path / "output_samples.dat")[1] == []
    assert "output_samples.dat" not in (tmp_path / "plot.gp").read_text()


def test_plot_missing_artifacts(osc, tmp_path):
    with pytest.raises(ArtifactError):
        emit_plot(tmp_path, osc.C, osc.K)


def test_run_summary_is_deterministic(osc_short):
    assert format_kv(run_summary(osc_short)) == format_kv(run_summary(osc_short))


# -- command line -----------------------------------------------------------


def test_cli_design(capsys, tmp_path):
    assert cli.main(["design", "--scenario", "worked_example", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "alpha" in out
    kv = parse_kv((tmp_path / "design.kv").read_text())
    assert kv["bits_y"] == 7


def test_cli_design_unobservable(capsys, tmp_path):
    doc = _doc()
    doc["plant"]["A"] = [[-1.0, 0.0], [0.0, 1.0]]
    doc["plant"]["B"] = [[1.0], [1.0]]
    doc["plant"]["C"] = [[1.0, 0.0]]
    p = tmp_path / "bad.toml"
    p.write_text(_toml(doc))
    assert cli.main(["design", "--scenario", str(p)]) == 2
    assert "observability" in capsys.readouterr().err


def test_cli_bad_file(capsys, tmp_path):
    p = tmp_path / "broken.toml"
    p.write_text("[plant\nA = 1\n")
    assert cli.main(["design", "--scenario", str(p)]) == 2
    assert cli.main(["design", "--scenario", "no_such_scenario"]) == 2


def test_cli_run_and_plot(tmp_path, capsys, monkeypatch):
    doc = _doc()
    doc["simulation"]["t_end"] = 4.0
    p = tmp_path / "short.toml"
    p.write_text(_toml(doc))
    out = tmp_path / "run"
    monkeypatch.setenv("ETCSIM_OUT", str(tmp_path / "ignored"))
    assert cli.main(["run", "--scenario", str(p), "--out", str(out)]) == 0
    for f in ("trajectory.csv", "transmissions.csv", "design.kv", "scenario.toml", "summary.kv"):
        assert (out / f).is_file()
    assert not (tmp_path / "ignored").exists()
    first = (out / "trajectory.csv").read_bytes(), (out / "summary.kv").read_bytes()
    assert cli.main(["run", "--scenario", str(p), "--out", str(out)]) == 0
    assert ((out / "trajectory.csv").read_bytes(), (out / "summary.kv").read_bytes()) == first
    assert cli.main(["plot", str(out)]) == 0
    assert (out / "plot.gp").is_file()
    monkeypatch.setenv("ETCSIM_OUT", str(out))
    (out / "plot.gp").unlink()
    assert cli.main(["plot"]) == 0 and (out / "plot.gp").is_file()


def test_cli_env_output_dir(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("ETCSIM_OUT", str(tmp_path / "env"))
    assert cli.main(["design", "--scenario", "oscillator"]) == 0
    assert (tmp_path / "env" / "design.kv").is_file()


def test_cli_plot_without_scenario(tmp_path, capsys):
    (tmp_path / "trajectory.csv").write_text("t\n0\n")
    assert cli.main(["plot", str(tmp_path)]) == 2


def test_cli_selftest_subset(capsys):
    assert cli.main(["selftest", "--only", "7"]) == 0
    assert "PASS [7]" in capsys.readouterr().out
