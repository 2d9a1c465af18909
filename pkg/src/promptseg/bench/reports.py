"""Report serialization: CSV tables, a JSON round-trip form, and
self-contained SVG plots (no external renderer)."""
from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from pathlib import Path

from ..errors import InvalidConfig, IoError
from .experiments import ArmRow, StudyReport, TestRow


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def report_csv(report: StudyReport) -> str:
    lines = ["study,arm,metric,mean,sd,n,seed_hash"]
    for row in report.rows:
        lines.append(
            ",".join([
                report.study, row.arm, row.metric,
                _cell(row.mean), _cell(row.sd), str(row.n), report.seed_hash,
            ])
        )
    return "\n".join(lines) + "\n"


def tests_csv(report: StudyReport) -> str:
    lines = ["study,arm_a,arm_b,metric,method,statistic,p_value"]
    for t in report.tests:
        lines.append(
            ",".join([
                report.study, t.arm_a, t.arm_b, t.metric, t.method,
                _cell(t.statistic), _cell(t.p_value),
            ])
        )
    return "\n".join(lines) + "\n"


def report_to_json(report: StudyReport) -> str:
    doc = {
        "study": report.study,
        "rows": [
            {"arm": r.arm, "metric": r.metric, "mean": r.mean, "sd": r.sd, "n": r.n}
            for r in report.rows
        ],
        "tests": [
            {
                "arm_a": t.arm_a, "arm_b": t.arm_b, "metric": t.metric,
                "method": t.method, "statistic": t.statistic, "p_value": t.p_value,
            }
            for t in report.tests
        ],
        "meta": {
            "seed": report.seed,
            "seed_hash": report.seed_hash,
            "config_hash": report.config_hash,
            "version": report.version,
        },
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def report_from_json(text: str) -> StudyReport:
    doc = json.loads(text)
    rows = tuple(
        ArmRow(r["arm"], r["metric"], r["mean"], r["sd"], int(r["n"])) for r in doc["rows"]
    )
    tests = tuple(
        TestRow(t["arm_a"], t["arm_b"], t["metric"], t["method"], t["statistic"], t["p_value"])
        for t in doc["tests"]
    )
    meta = doc["meta"]
    return StudyReport(doc["study"], rows, tests, int(meta["seed"]), meta["seed_hash"],
                       meta["config_hash"], meta["version"])


# --- SVG plotting ---------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_W, _H, _PAD = 640, 400, 56


def _canvas(title: str):
    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg",
                     width=str(_W), height=str(_H),
                     viewBox=f"0 0 {_W} {_H}")
    ET.SubElement(svg, "rect", x="0", y="0", width=str(_W), height=str(_H), fill="white")
    text = ET.SubElement(svg, "text", x=str(_W // 2), y="24", fill="black")
    text.set("text-anchor", "middle")
    text.set("font-family", "sans-serif")
    text.set("font-size", "16")
    text.text = title
    return svg


def _axes(svg, y_lo: float, y_hi: float):
    ET.SubElement(svg, "line", x1=str(_PAD), y1=str(_H - _PAD), x2=str(_W - _PAD),
                  y2=str(_H - _PAD), stroke="black")
    ET.SubElement(svg, "line", x1=str(_PAD), y1=str(_PAD), x2=str(_PAD),
                  y2=str(_H - _PAD), stroke="black")
    for frac in (0.0, 0.5, 1.0):
        yv = y_lo + frac * (y_hi - y_lo)
        ypix = _H - _PAD - frac * (_H - 2 * _PAD)
        label = ET.SubElement(svg, "text", x=str(_PAD - 8), y=f"{ypix + 4:.1f}", fill="black")
        label.set("text-anchor", "end")
        label.set("font-family", "sans-serif")
        label.set("font-size", "11")
        label.text = f"{yv:.2f}"


def _scale(y: float, y_lo: float, y_hi: float) -> float:
    span = max(y_hi - y_lo, 1e-9)
    return _H - _PAD - (y - y_lo) / span * (_H - 2 * _PAD)


def svg_curve_plot(series: dict[str, list[tuple[float, float]]], title: str) -> str:
    """Line plot of one metric against prompt count, one polyline per arm."""
    ys = [y for pts in series.values() for _, y in pts]
    xs = [x for pts in series.values() for x, _ in pts]
    y_lo, y_hi = 0.0, max(1.0, max(ys, default=1.0))
    x_lo, x_hi = min(xs, default=0.0), max(xs, default=1.0)
    svg = _canvas(title)
    _axes(svg, y_lo, y_hi)
    xspan = max(x_hi - x_lo, 1e-9)
    for k, (name, pts) in enumerate(sorted(series.items())):
        color = _PALETTE[k % len(_PALETTE)]
        coords = " ".join(
            f"{_PAD + (x - x_lo) / xspan * (_W - 2 * _PAD):.1f},{_scale(y, y_lo, y_hi):.1f}"
            for x, y in pts
        )
        ET.SubElement(svg, "polyline", points=coords, fill="none", stroke=color)
        legend = ET.SubElement(svg, "text", x=str(_W - _PAD + 4),
                               y=str(_PAD + 16 * k + 8), fill=color)
        legend.set("font-family", "sans-serif")
        legend.set("font-size", "11")
        legend.text = name
    return ET.tostring(svg, encoding="unicode")


def svg_arm_plot(labels: list[str], means: list[float], sds: list[float], title: str) -> str:
    """Mean with a +-1 sd whisker per arm (box-plot style summary)."""
    y_hi = max(1.0, max((m + s for m, s in zip(means, sds)), default=1.0))
    svg = _canvas(title)
    _axes(svg, 0.0, y_hi)
    slot = (_W - 2 * _PAD) / max(len(labels), 1)
    for k, (label, mean, sd) in enumerate(zip(labels, means, sds)):
        color = _PALETTE[k % len(_PALETTE)]
        cx = _PAD + slot * (k + 0.5)
        y_mid = _scale(mean, 0.0, y_hi)
        y_top = _scale(mean + sd, 0.0, y_hi)
        y_bot = _scale(max(mean - sd, 0.0), 0.0, y_hi)
        ET.SubElement(svg, "line", x1=f"{cx:.1f}", y1=f"{y_top:.1f}", x2=f"{cx:.1f}",
                      y2=f"{y_bot:.1f}", stroke=color)
        ET.SubElement(svg, "rect", x=f"{cx - 18:.1f}", y=f"{y_mid - 4:.1f}", width="36",
                      height="8", fill=color)
        text = ET.SubElement(svg, "text", x=f"{cx:.1f}", y=str(_H - _PAD + 18), fill="black")
        text.set("text-anchor", "middle")
        text.set("font-family", "sans-serif")
        text.set("font-size", "12")
        text.text = label
    return ET.tostring(svg, encoding="unicode")


def report_svg(report: StudyReport) -> str:
    curve_rows = [r for r in report.rows if r.metric.startswith("dice_t")]
    if curve_rows:
        series: dict[str, list[tuple[float, float]]] = {}
        for r in curve_rows:
            if r.mean is None:
                continue
            series.setdefault(r.arm, []).append((float(r.metric[6:]), r.mean))
        for pts in series.values():
            pts.sort()
        return svg_curve_plot(series, f"{report.study}: Dice vs prompt count")
    labels, means, sds = [], [], []
    for r in report.rows:
        if r.metric == "dice" and r.mean is not None:
            labels.append(r.arm)
            means.append(r.mean)
            sds.append(r.sd or 0.0)
    return svg_arm_plot(labels, means, sds, f"{report.study}: Dice by arm")


def emit_report(report: StudyReport, out_dir, formats=("csv", "json", "svg")) -> dict[str, Path]:
    """Write the requested report files into `out_dir`; returns their paths."""
    for fmt in formats:
        if fmt not in ("csv", "json", "svg"):
            raise InvalidConfig(f"unknown report format {fmt!r}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths: dict[str, Path] = {}
        if "csv" in formats:
            paths["csv"] = out / "report.csv"
            paths["csv"].write_text(report_csv(report))
            paths["tests_csv"] = out / "tests.csv"
            paths["tests_csv"].write_text(tests_csv(report))
        if "json" in formats:
            paths["json"] = out / "report.json"
            paths["json"].write_text(report_to_json(report))
        if "svg" in formats:
            paths["svg"] = out / "plots.svg"
            paths["svg"].write_text(report_svg(report))
        return paths
    except OSError as exc:
        raise IoError(f"cannot write report to {out}: {exc}") from exc
