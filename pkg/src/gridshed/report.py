"""Trace recording and output: CSV, hand-rolled SVG charts, markdown report.

SVG files are emitted directly from primitives (polylines and text) so
outputs are byte-stable for golden-file comparisons; values in CSV carry
9 significant digits.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

FLOAT_FMT = "{:.9g}"

_PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)


@dataclass
class TraceSet:
    """Time series recorded each engine step; all series share the axis."""

    time: np.ndarray  # (T,)
    bus_ids: list[int]
    v: np.ndarray  # (T, n_bus) pu
    df: np.ndarray  # (T,) Hz
    load_buses: list[int]
    p_load: np.ndarray  # (T, n_load) MW
    line_ids: list[int]
    rate: np.ndarray  # (T, n_line) pu

    def series_names(self) -> list[str]:
        return (
            [f"v_bus_{b}" for b in self.bus_ids]
            + ["df"]
            + [f"p_load_{b}" for b in self.load_buses]
            + [f"rate_line_{k}" for k in self.line_ids]
        )

    def series(self, name: str) -> np.ndarray:
        if name == "df":
            return self.df
        if name.startswith("v_bus_"):
            return self.v[:, self.bus_ids.index(int(name[6:]))]
        if name.startswith("p_load_"):
            return self.p_load[:, self.load_buses.index(int(name[7:]))]
        if name.startswith("rate_line_"):
            return self.rate[:, self.line_ids.index(int(name[10:]))]
        raise KeyError(name)


def write_csv(traces: TraceSet, sink) -> None:
    """One row per step; header names every series."""
    close = False
    if isinstance(sink, (str,)) or hasattr(sink, "__fspath__"):
        sink = open(sink, "w", newline="")
        close = True
    try:
        writer = csv.writer(sink, lineterminator="\n")
        writer.writerow(["t"] + traces.series_names())
        columns = [traces.time] + [traces.series(n) for n in traces.series_names()]
        for i in range(len(traces.time)):
            writer.writerow([FLOAT_FMT.format(col[i]) for col in columns])
    finally:
        if close:
            sink.close()


def read_csv(source) -> tuple[list[str], np.ndarray]:
    """Parse a trace CSV back into (header, value matrix).

    `source` is a path or file object; a plain string is taken as raw CSV
    text.
    """
    if hasattr(source, "__fspath__"):
        with open(source, newline="") as fh:
            rows = list(csv.reader(fh))
    elif isinstance(source, str):
        rows = list(csv.reader(io.StringIO(source)))
    else:
        rows = list(csv.reader(source))
    header = rows[0]
    values = np.array([[float(x) for x in row] for row in rows[1:]])
    return header, values


# ---------------------------------------------------------------------------
# SVG charts
# ---------------------------------------------------------------------------

_UNITS = {"v": "voltage (pu)", "df": "frequency deviation (Hz)",
          "p": "active power (MW)", "rate": "loading rate (pu)"}


def _unit_for(names: list[str]) -> str:
    kinds = set()
    for n in names:
        if n == "df":
            kinds.add("df")
        else:
            kinds.add(n.split("_")[0])
    if len(kinds) == 1:
        return _UNITS.get(kinds.pop(), "value")
    return "value"


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / (count - 1) for i in range(count)]


def render_svg(traces: TraceSet, selection, sink) -> None:
    """Line chart of the selected series over time.

    `selection` is a list of series names as used in the CSV header;
    unknown names raise with the available names listed.
    """
    names = list(selection)
    if not names:
        raise ValueError("empty selection; nothing to plot")
    available = traces.series_names()
    unknown = [n for n in names if n not in available]
    if unknown:
        raise ValueError(
            f"unknown series {unknown}; available: {', '.join(available)}"
        )

    width, height = 860, 480
    ml, mr, mt, mb = 70, 180, 20, 50
    pw, ph = width - ml - mr, height - mt - mb

    t = traces.time
    ys = [traces.series(n) for n in names]
    x_lo, x_hi = float(t[0]), float(t[-1]) if len(t) > 1 else float(t[0]) + 1.0
    y_lo = min(float(np.min(y)) for y in ys)
    y_hi = max(float(np.max(y)) for y in ys)
    if y_hi - y_lo < 1e-12:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def sx(x: float) -> float:
        return ml + pw * (x - x_lo) / (x_hi - x_lo)

    def sy(y: float) -> float:
        return mt + ph * (1.0 - (y - y_lo) / (y_hi - y_lo))

    out = []
    out.append(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">'
    )
    out.append(f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>')
    out.append(
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>'
    )
    for xv in _ticks(x_lo, x_hi):
        px = sx(xv)
        out.append(f'<line x1="{px:.2f}" y1="{mt + ph}" x2="{px:.2f}" y2="{mt + ph + 5}" stroke="#333"/>')
        out.append(
            f'<text x="{px:.2f}" y="{mt + ph + 18}" text-anchor="middle">{xv:g}</text>'
        )
    for yv in _ticks(y_lo, y_hi):
        py = sy(yv)
        out.append(f'<line x1="{ml - 5}" y1="{py:.2f}" x2="{ml}" y2="{py:.2f}" stroke="#333"/>')
        out.append(
            f'<text x="{ml - 8}" y="{py + 4:.2f}" text-anchor="end">{yv:.4g}</text>'
        )
    out.append(
        f'<text x="{ml + pw / 2}" y="{height - 12}" text-anchor="middle">time (s)</text>'
    )
    unit = _unit_for(names)
    out.append(
        f'<text x="18" y="{mt + ph / 2}" text-anchor="middle" '
        f'transform="rotate(-90 18 {mt + ph / 2})">{unit}</text>'
    )
    for idx, (name, y) in enumerate(zip(names, ys)):
        color = _PALETTE[idx % len(_PALETTE)]
        pts = " ".join(f"{sx(tv):.2f},{sy(yv):.2f}" for tv, yv in zip(t, y))
        out.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        if idx < 24:  # legend only for the first entries, keeps charts readable
            ly = mt + 14 + 16 * idx
            lx = ml + pw + 12
            out.append(
                f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 18}" y2="{ly - 4}" '
                f'stroke="{color}" stroke-width="2"/>'
            )
            out.append(f'<text x="{lx + 24}" y="{ly}">{name}</text>')
    out.append("</svg>")
    payload = "\n".join(out) + "\n"

    if isinstance(sink, (str,)) or hasattr(sink, "__fspath__"):
        with open(sink, "w") as fh:
            fh.write(payload)
    else:
        sink.write(payload)


# ---------------------------------------------------------------------------
# Markdown report
# ---------------------------------------------------------------------------


def write_report(log, traces: TraceSet, sink, title: str = "Cascade run") -> None:
    """Human-readable summary: contingencies, sheds, trips, final state."""
    records = log.records
    sheds = [r for r in records if r.kind == "shed-command"]
    trips = [r for r in records if r.kind == "relay-trip"]
    blackouts = [r for r in records if r.kind == "island-blackout"]
    final_rates = traces.rate[-1]
    max_rate = float(np.max(final_rates)) if final_rates.size else 0.0
    worst = traces.line_ids[int(np.argmax(final_rates))] if final_rates.size else None

    lines = [f"# {title}", ""]
    lines.append(f"- steps: {len(traces.time)}, horizon: {traces.time[-1]:g} s")
    lines.append(f"- final frequency deviation: {traces.df[-1]:+.4f} Hz")
    lines.append(f"- final max loading rate: {max_rate:.4f} pu (line {worst})")
    lines.append(f"- relay trips: {len(trips)}, shed commands: {len(sheds)}, "
                 f"island blackouts: {len(blackouts)}")
    lines.append("")

    lines.append("## Events")
    lines.append("")
    if records:
        lines.append("| t (s) | kind | subject | cause |")
        lines.append("|---|---|---|---|")
        for r in records:
            lines.append(f"| {r.time:g} | {r.kind} | {r.subject} | {r.cause} |")
    else:
        lines.append("none")
    lines.append("")

    if sheds:
        lines.append("## Shed order")
        lines.append("")
        for i, r in enumerate(sheds, 1):
            lines.append(f"{i}. t={r.time:g} s: {r.subject} (cause: {r.cause})")
        lines.append("")

    payload = "\n".join(lines) + "\n"
    if isinstance(sink, (str,)) or hasattr(sink, "__fspath__"):
        with open(sink, "w") as fh:
            fh.write(payload)
    else:
        sink.write(payload)
