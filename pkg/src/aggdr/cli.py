"""Command-line entry point: ``aggdr run|calibrate|loadability|report``.

Exit codes: 0 success, 2 invalid input, 3 solver failure, 4 file or data
error. Runs persist per-day summaries under ``<out>/days``; repeating a
command reuses them, so an interrupted run resumes where it stopped.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

from . import report, scenarios
from .errors import AggDRError, DataError, ModelValidationError, NonConvergence, SolverError

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4
log = logging.getLogger("aggdr")


def default_scenario_file() -> Path:
    return Path(str(resources.files("aggdr") / "data" / "nem4" / "scenarios.yaml"))


def parse_days(text: str | None) -> list[int] | None:
    """``"a..b"`` (inclusive), ``"a"`` or a comma list of either."""
    if not text:
        return None
    out: list[int] = []
    try:
        for part in text.split(","):
            if ".." in part:
                a, b = part.split("..", 1)
                lo, hi = int(a), int(b)
                if hi < lo:
                    raise ValueError
                out.extend(range(lo, hi + 1))
            else:
                out.append(int(part))
    except ValueError:
        raise ModelValidationError(f"bad --days value {text!r}; use a..b, a or a comma list") from None
    return out


def _load(args) -> list[scenarios.ScenarioSpec]:
    names = args.only.split(",") if getattr(args, "only", None) else None
    specs = scenarios.load_scenarios(args.scenario, names)
    over = {}
    if getattr(args, "price_mode", None):
        over["price_mode"] = args.price_mode
    if getattr(args, "target", None):
        over["target_region"] = args.target
    if getattr(args, "step", None) is not None:
        over["loadability_step"] = args.step
    if over:
        specs = [replace(s, **over) for s in specs]
        bad = [v for s in specs for v in s.violations()]
        if bad:
            raise ModelValidationError(bad[0], bad)
    return specs


def _progress(verbose: bool):
    if not verbose:
        return None

    def tick(name, day):
        log.info("%s day %d done", name, day)

    return tick


def _run(args, specs):
    days = parse_days(args.days)
    dump = getattr(args, "dump_lp", None)
    if dump:
        Path(dump).mkdir(parents=True, exist_ok=True)
    return scenarios.run_batch(specs, args.out, days, args.parallel, dump, _progress(args.verbose))


def cmd_run(args) -> int:
    results = _run(args, _load(args))
    report.write_run_outputs(results, args.out)
    if args.figures:
        _figures(results, Path(args.out) / "figures", ("csv", "svg"))
    text, _ = report.render_table(results)
    print(text, end="")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    specs = [s for s in _load(args) if s.dr_mode != "none"]
    out = Path(args.out)
    lines = []
    for spec in specs:
        cal = scenarios.calibrate(spec)
        path = out / "calibration" / f"{spec.name}.json"
        scenarios._save_calibration(cal, path)
        lines.append(
            f"{spec.name}: "
            + ", ".join(
                f"{r} {cal.charge_cap[r]:.0f} MW{'' if cal.converged[r] else ' (not converged)'}"
                for r in sorted(cal.charge_cap)
            )
        )
    print("\n".join(lines))
    return EXIT_OK


def cmd_loadability(args) -> int:
    results = _run(args, _load(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "loadability.csv").write_text(report.loadability_csv(results))
    for r in results:
        print(f"{r.name}: {r.loadability.average / 1e3:.2f} GW average over {len(r.loadability.per_hour)} h")
    return EXIT_OK


def _figures(results, out: Path, formats, series=("demand", "flexible", "pv", "battery", "soc", "price"),
             days=()):
    spec = report.ReportSpec(tuple(r.name for r in results), tuple(series), frozenset(formats), days=tuple(days))
    written = []
    for r in results:
        written += report.render_series(r, spec, out)
    return written


def cmd_report(args) -> int:
    specs = _load(args)
    results = scenarios.run_batch(specs, args.out, parse_days(args.days), args.parallel)
    formats = set(args.format.split(","))
    spec = report.ReportSpec(tuple(r.name for r in results), tuple(args.series.split(",")) if args.series else (),
                             frozenset(formats), days=tuple(parse_days(args.figure_days) or ()))
    out = Path(args.out)
    text, table_csv = report.render_table(results)
    if "txt" in formats:
        (out / "report.txt").write_text(text)
    if "csv" in formats:
        (out / "metrics.csv").write_text(table_csv)
    for r in results:
        report.render_series(r, spec, out / "figures")
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aggdr", description="Aggregated demand response dispatch studies.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress per day")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, days=True):
        sp.add_argument("--scenario", type=Path, default=default_scenario_file(),
                        help="scenario YAML (default: the packaged four-region fixture)")
        sp.add_argument("--out", type=Path, required=True, help="output directory")
        sp.add_argument("--only", help="comma-separated scenario names (default: all)")
        sp.add_argument("--price-mode", choices=("nodal", "system"), help="price signal for taker scenarios")
        if days:
            sp.add_argument("--days", help="day range a..b (inclusive), a single day or a comma list")
            sp.add_argument("--parallel", type=int, default=1, help="worker processes")

    sp = sub.add_parser("run", help="run scenarios and write tables and profiles")
    common(sp)
    sp.add_argument("--dump-lp", type=Path, help="write each solved LP as MPS into this directory")
    sp.add_argument("--figures", action="store_true", help="also write per-series CSV and SVG files")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("calibrate", help="calibrate charge caps only")
    common(sp, days=False)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("loadability", help="run scenarios and write per-hour loadability")
    common(sp)
    sp.add_argument("--target", help="region whose demand is scaled")
    sp.add_argument("--step", type=float, help="loadability step size in MW")
    sp.set_defaults(func=cmd_loadability)

    sp = sub.add_parser("report", help="render tables and series from a (resumed) run")
    common(sp)
    sp.add_argument("--series", help=f"comma list from {','.join(report.SERIES)}")
    sp.add_argument("--format", default="csv,txt", help="comma list from csv,txt,svg")
    sp.add_argument("--figure-days", help="days to include in series output (default: all)")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if getattr(args, "parallel", 1) < 1:
        print("error: --parallel must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except ModelValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for v in exc.violations[1:]:
            print(f"  {v}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SolverError, NonConvergence) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (DataError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except AggDRError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
