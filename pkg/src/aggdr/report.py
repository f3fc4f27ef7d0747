"""Tables, series CSVs and static SVG charts built from scenario results.

Everything here is a pure function of its inputs: numbers are formatted
with fixed precision and files are written in a fixed order, so rendering
the same results twice gives byte-identical output. Internally quantities
are MW/MWh; tables show GW/TWh.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

TABLE_COLUMNS = (
    "scenario",
    "spilled_energy",
    "spilled_hours_pct",
    "unserved_hours",
    "backup_energy",
    "avg_loadability",
)
TABLE_UNITS = ("", "TWh", "%", "h", "TWh", "GW")
FORMATS = ("csv", "txt", "svg")

# series name -> (DaySummary field, axis label)
SERIES = {
    "demand": ("nett_demand", "Nett demand (MW)"),
    "inflexible": ("inflexible", "Inflexible demand (MW)"),
    "responsive": ("responsive", "Responsive demand (MW)"),
    "flexible": ("flexible", "Flexible demand (MW)"),
    "pv": ("pv", "PV power (MW)"),
    "battery": ("battery", "Battery power (MW)"),
    "soc": ("soc", "State of charge (MWh)"),
    "price": ("price", "Nodal price ($/MWh)"),
}
PROFILE_FIELDS = ("inflexible", "responsive", "pv", "flexible", "battery", "soc", "price")


@dataclass(frozen=True)
class ReportSpec:
    """What to render: scenarios, series and output formats."""

    scenarios: tuple[str, ...]
    series: tuple[str, ...] = ()
    formats: frozenset = field(default_factory=lambda: frozenset({"csv", "txt"}))
    regions: tuple[str, ...] = ()  # empty means every region
    days: tuple[int, ...] = ()  # empty means every day in the result

    def __post_init__(self):
        object.__setattr__(self, "scenarios", tuple(self.scenarios))
        object.__setattr__(self, "series", tuple(self.series))
        object.__setattr__(self, "formats", frozenset(self.formats))
        if not self.scenarios:
            raise ValueError("a report needs at least one scenario")
        if not self.formats:
            raise ValueError("a report needs at least one output format")
        bad = sorted(set(self.formats) - set(FORMATS))
        if bad:
            raise ValueError(f"unknown output format(s) {bad}; expected a subset of {list(FORMATS)}")
        unknown = [s for s in self.series if s not in SERIES]
        if unknown:
            raise KeyError(f"unknown series {unknown[0]!r}; expected one of {sorted(SERIES)}")


# ---------------------------------------------------------------- table


def _fmt(x: float) -> str:
    out = f"{x:.2f}"
    return "0.00" if out == "-0.00" else out


def table_rows(results: Sequence) -> list[list[str]]:
    """One row of formatted cells per result, in the given order."""
    rows = []
    for r in results:
        m = r.metrics
        if r.has_renewables:
            spill, spill_pct = _fmt(m.spilled_energy / 1e6), _fmt(m.spilled_hours_pct)
        else:
            spill = spill_pct = "-"
        rows.append([
            r.name,
            spill,
            spill_pct,
            _fmt(m.unserved_hours),
            _fmt(m.backup_energy / 1e6),
            _fmt(r.loadability.average / 1e3),
        ])
    return rows


def render_table(results: Sequence) -> tuple[str, str]:
    """Render the balancing and loadability table.

    Returns:
        ``(text, csv_text)``. The text form is column-aligned with a units
        line; the CSV has exactly ``TABLE_COLUMNS`` as header. No results
        give a header-only CSV.
    """
    rows = table_rows(results)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    w.writerows(rows)

    head = [list(TABLE_COLUMNS), [f"({u})" if u else "" for u in TABLE_UNITS]]
    cells = head + rows
    widths = [max(len(row[i]) for row in cells) for i in range(len(TABLE_COLUMNS))]
    lines = []
    for k, row in enumerate(cells):
        parts = [row[0].ljust(widths[0])] + [c.rjust(widths[i]) for i, c in enumerate(row) if i]
        lines.append("  ".join(parts).rstrip())
        if k == 1:
            lines.append("  ".join("-" * w_ for w_ in widths))
    return "\n".join(lines) + "\n", buf.getvalue()


def calibration_table(results: Sequence) -> str:
    """Plain-text charge caps per calibrated scenario (MW)."""
    lines = []
    for r in results:
        if r.calibration is None:
            continue
        cal = r.calibration
        caps = ", ".join(f"{k} {cal.charge_cap[k]:.0f} MW{'' if cal.converged[k] else ' (not converged)'}"
                         for k in sorted(cal.charge_cap))
        lines.append(f"{r.name}: {caps}")
    return "\n".join(lines) + ("\n" if lines else "")


# ---------------------------------------------------------------- series


def _days(result, days: Sequence[int] = ()):
    if not days:
        return list(result.daily_solutions)
    by_day = {d.day: d for d in result.daily_solutions}
    missing = [d for d in days if d not in by_day]
    if missing:
        raise KeyError(f"{result.name}: day {missing[0]} not in result")
    return [by_day[d] for d in days]


def series_matrix(result, name: str, days: Sequence[int] = ()) -> tuple[tuple[str, ...], np.ndarray]:
    """Concatenate one series over days: ``(regions, array[region, hour])``.

    Raises:
        KeyError: ``name`` is not a known series.
    """
    if name not in SERIES:
        raise KeyError(f"unknown series {name!r}; expected one of {sorted(SERIES)}")
    attr = SERIES[name][0]
    chosen = _days(result, days)
    if not chosen:
        return (), np.zeros((0, 0))
    blocks = [getattr(d, attr)() if callable(getattr(d, attr)) else getattr(d, attr) for d in chosen]
    return tuple(chosen[0].regions), np.concatenate([np.asarray(b, dtype=float) for b in blocks], axis=1)


def _hour_index(result, days: Sequence[int] = ()):
    out = []
    for d in _days(result, days):
        steps = d.spill.shape[1]
        out.extend((d.day, h) for h in range(steps))
    return out


def series_csv(result, name: str, days: Sequence[int] = ()) -> str:
    regions, arr = series_matrix(result, name, days)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["day", "hour", *regions])
    for k, (day, hour) in enumerate(_hour_index(result, days)):
        w.writerow([day, hour, *(f"{v:.3f}" for v in arr[:, k])])
    return buf.getvalue()


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = np.floor(lo / step) * step
    return [float(start + i * step) for i in range(int(np.ceil((hi - start) / step)) + 1)]


def line_chart_svg(
    lines: dict[str, np.ndarray],
    y_label: str,
    x_label: str = "Hour",
    title: str = "",
    width: int = 720,
    height: int = 360,
) -> str:
    """Static SVG line chart, one polyline per entry of ``lines``."""
    palette = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
    left, right, top, bottom = 70, 20, 30 if title else 15, 45
    pw, ph = width - left - right, height - top - bottom
    n = max((len(v) for v in lines.values()), default=0)
    vals = np.concatenate([np.asarray(v, dtype=float) for v in lines.values()]) if lines else np.zeros(1)
    vals = vals if vals.size else np.zeros(1)
    ticks = _nice_ticks(float(vals.min()), float(vals.max()))
    y0, y1 = ticks[0], ticks[-1]

    def sx(i):
        return left + (pw * i / (n - 1) if n > 1 else pw / 2)

    def sy(v):
        return top + ph * (1 - (v - y0) / (y1 - y0))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{title}</text>')
    for t in ticks:
        y = sy(t)
        out.append(f'<line x1="{left}" y1="{y:.2f}" x2="{left + pw}" y2="{y:.2f}" stroke="#ddd"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.2f}" text-anchor="end">{t:g}</text>')
    xstep = max(1, int(np.ceil(n / 12))) if n else 1
    for i in range(0, n, xstep):
        out.append(f'<text x="{sx(i):.2f}" y="{top + ph + 16}" text-anchor="middle">{i}</text>')
    out.append(f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>')
    out.append(f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">{x_label}</text>')
    out.append(
        f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {top + ph / 2:.1f})">{y_label}</text>'
    )
    for k, (label, v) in enumerate(lines.items()):
        colour = palette[k % len(palette)]
        pts = " ".join(f"{sx(i):.2f},{sy(float(y)):.2f}" for i, y in enumerate(np.asarray(v, dtype=float)))
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 12 + 14 * k
        out.append(f'<line x1="{left + pw - 110}" y1="{ly - 4}" x2="{left + pw - 92}" y2="{ly - 4}" '
                   f'stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw - 88}" y="{ly}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_series(result, spec: ReportSpec, out_dir) -> list[Path]:
    """Write one CSV (and one SVG per region, if requested) per series.

    Returns the written paths in write order.

    Raises:
        KeyError: a requested series is unknown or a region is missing.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name in spec.series:
        regions, arr = series_matrix(result, name, spec.days)
        if "csv" in spec.formats:
            p = out / f"{result.name}_{name}.csv"
            p.write_text(series_csv(result, name, spec.days))
            written.append(p)
        if "svg" in spec.formats:
            wanted = spec.regions or regions
            for region in wanted:
                if region not in regions:
                    raise KeyError(f"{result.name}: no region {region!r}")
                row = arr[regions.index(region)]
                p = out / f"{result.name}_{name}_{region}.svg"
                p.write_text(line_chart_svg({region: row}, SERIES[name][1], title=f"{result.name} {region}"))
                written.append(p)
    return written


def overlay_svg(results: Sequence, name: str, region: str, days: Sequence[int] = ()) -> str:
    """One chart comparing a series across scenarios (e.g. anticipator vs taker)."""
    lines = {}
    for r in results:
        regions, arr = series_matrix(r, name, days)
        if region not in regions:
            raise KeyError(f"{r.name}: no region {region!r}")
        lines[r.name] = arr[regions.index(region)]
    return line_chart_svg(lines, SERIES[name][1], title=region)


# ---------------------------------------------------------------- run outputs


def loadability_csv(results: Sequence) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "day", "hour", "base_demand", "loadability"])
    for r in results:
        for d in r.daily_solutions:
            for h, (base, load) in enumerate(zip(d.demand, d.loadability)):
                w.writerow([r.name, d.day, h, f"{base:.3f}", f"{load:.3f}"])
    return buf.getvalue()


def profile_csv(results: Sequence, region: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scenario", "day", "hour", *PROFILE_FIELDS])
    for r in results:
        for d in r.daily_solutions:
            if region not in d.regions:
                continue
            i = d.regions.index(region)
            cols = [np.asarray(getattr(d, f))[i] for f in PROFILE_FIELDS]
            for h in range(len(cols[0])):
                w.writerow([r.name, d.day, h, *(f"{c[h]:.3f}" for c in cols)])
    return buf.getvalue()


def write_run_outputs(results: Sequence, out_dir) -> list[Path]:
    """``metrics.csv``, ``loadability.csv``, ``report.txt`` and ``profiles/<region>.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    text, table_csv = render_table(results)
    cal = calibration_table(results)
    files = {
        out / "metrics.csv": table_csv,
        out / "loadability.csv": loadability_csv(results),
        out / "report.txt": text + (f"\nCharge caps\n{cal}" if cal else ""),
    }
    regions: list[str] = []
    for r in results:
        for d in r.daily_solutions[:1]:
            regions += [x for x in d.regions if x not in regions]
    for region in regions:
        files[out / "profiles" / f"{region}.csv"] = profile_csv(results, region)
    for path, text_ in files.items():
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text_)
    return list(files)
