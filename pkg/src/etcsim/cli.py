"""Command-line entry point: ``etcsim design | run | plot | selftest``."""

import argparse
import os
import sys
from pathlib import Path

from . import acceptance
from .artifacts import ArtifactError, emit_plot, write_run
from .design import DesignError
from .quantization import SaturationError
from .report import build_report, format_kv, run_summary
from .scenario import ScenarioError, load_scenario
from .simulate import InvariantViolation, simulate

EXIT_OK = 0
EXIT_FAILED = 1      # acceptance failures
EXIT_INPUT = 2       # unusable scenario or design
EXIT_RUNTIME = 3     # invariant violated during a run

SCENARIO_COPY = "scenario.toml"


def _out_dir(args, default):
    """``--out`` wins, then ``ETCSIM_OUT``, then ``default``."""
    if args.out:
        return Path(args.out)
    env = os.environ.get("ETCSIM_OUT")
    return Path(env) if env else Path(default)


def _scenario_text(spec):
    p = Path(spec)
    if p.is_file():
        return p.read_text(encoding="utf-8")
    from importlib import resources
    res = resources.files("etcsim.scenarios") / f"{spec}.toml"
    return res.read_text(encoding="utf-8") if res.is_file() else None


def cmd_design(args):
    sc = load_scenario(args.scenario)
    rep = build_report(sc)
    sys.stdout.write(rep.to_text())
    if args.out or os.environ.get("ETCSIM_OUT"):
        out = _out_dir(args, ".")
        out.mkdir(parents=True, exist_ok=True)
        (out / "design.txt").write_text(rep.to_text(), encoding="utf-8")
        (out / "design.kv").write_text(rep.to_kv(), encoding="utf-8")
        print(f"wrote {out / 'design.txt'} and {out / 'design.kv'}")
    return EXIT_OK


def cmd_run(args):
    sc = load_scenario(args.scenario)
    dc = sc.design()
    cfg = sc.sim_config(h=args.step, strict=True if args.strict else None)
    out = _out_dir(args, Path("etcsim_out") / sc.name)
    res = simulate(sc.plant, dc, cfg)
    write_run(res, out)
    rep = build_report(sc, dc)
    (out / "design.kv").write_text(rep.to_kv(), encoding="utf-8")
    text = _scenario_text(args.scenario)
    if text is not None:
        (out / SCENARIO_COPY).write_text(text, encoding="utf-8")
    summary = run_summary(res, rep.dwell)
    (out / "summary.kv").write_text(format_kv(summary), encoding="utf-8")
    if res.warnings:
        (out / "warnings.txt").write_text("\n".join(res.warnings) + "\n", encoding="utf-8")
    sys.stdout.write(format_kv(summary))
    print(f"wrote run artifacts to {out}")
    return EXIT_OK


def cmd_plot(args):
    run_dir = Path(args.run_dir) if args.run_dir else _out_dir(args, ".")
    spec = args.scenario or (run_dir / SCENARIO_COPY)
    if not args.scenario and not Path(spec).is_file():
        raise ArtifactError(f"no {SCENARIO_COPY} in {run_dir}; pass --scenario")
    sc = load_scenario(str(spec))
    emit_plot(run_dir, sc.C, sc.K)
    print(f"wrote plot.gp and panel data to {run_dir} (render with: gnuplot plot.gp)")
    return EXIT_OK


def cmd_selftest(args):
    which = None
    if args.only:
        try:
            which = sorted({int(s) for s in args.only.split(",")})
        except ValueError:
            raise SystemExit(f"--only expects comma-separated criterion numbers, got {args.only!r}")
        unknown = [k for k in which if k not in acceptance.CRITERIA]
        if unknown:
            raise SystemExit(f"unknown criteria {unknown}; valid: {sorted(acceptance.CRITERIA)}")
    results = acceptance.run_all(which, stream=sys.stdout)
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return EXIT_OK if not failed else EXIT_FAILED


def build_parser():
    ap = argparse.ArgumentParser(prog="etcsim", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, scenario_required):
        p.add_argument("--scenario", required=scenario_required,
                       help="scenario TOML file or built-in name (worked_example, oscillator)")
        p.add_argument("--out", help="output directory (overrides ETCSIM_OUT)")

    p = sub.add_parser("design", help="print the design report")
    common(p, True)
    p.set_defaults(func=cmd_design)
    p = sub.add_parser("run", help="simulate the closed loop and write CSV artifacts")
    common(p, True)
    p.add_argument("--step", type=float, help="integration step h (default from the scenario)")
    p.add_argument("--strict", action="store_true", help="abort on any invariant warning")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("plot", help="emit a gnuplot script and panel data for a run directory")
    common(p, False)
    p.add_argument("run_dir", nargs="?", help="run directory (default: --out / ETCSIM_OUT)")
    p.set_defaults(func=cmd_plot)
    p = sub.add_parser("selftest", help="run the acceptance checks")
    p.add_argument("--only", help="comma-separated criterion numbers, e.g. 1,2,6")
    p.set_defaults(func=cmd_selftest)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, DesignError) as exc:
        print(f"etcsim {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ArtifactError as exc:
        print(f"etcsim {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InvariantViolation, SaturationError) as exc:
        print(f"etcsim {args.command}: invariant violated: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
