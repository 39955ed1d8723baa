"""Report serialization: canonical JSON, flattened CSV, SVG bar charts."""

from __future__ import annotations

import json
import os
from xml.sax.saxutils import escape

from advkit.errors import WriteError
from advkit.harness import EvaluationReport

CSV_COLUMNS = (
    "row_type",
    "name",
    "level",
    "n",
    "accuracy",
    "escape_rate",
    "mean_psnr_db",
    "mean_ssim",
    "gate_pass_fraction",
    "undefended_rate",
    "defended_rate",
    "queries",
    "annotation",
)


def report_to_json_str(report: EvaluationReport) -> str:
    return json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n"


def report_from_json_str(text: str) -> EvaluationReport:
    return EvaluationReport.from_json(json.loads(text))


def report_to_csv(report: EvaluationReport) -> str:
    lines = [",".join(CSV_COLUMNS)]

    def cell(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return repr(v)
        return str(v)

    def row(**kw):
        lines.append(",".join(cell(kw.get(c)) for c in CSV_COLUMNS))

    if report.clean is not None:
        row(row_type="clean", name="clean", n=report.clean.n,
            accuracy=report.clean.accuracy, queries=report.clean.queries)
    for r in report.corruption_rows:
        row(row_type="corruption", name=r.method, level=r.severity, n=r.n,
            accuracy=r.accuracy, escape_rate=r.escape_rate,
            mean_psnr_db=r.mean_psnr_db, mean_ssim=r.mean_ssim,
            gate_pass_fraction=r.gate_pass_fraction, queries=r.queries,
            annotation=r.annotation)
    for r in report.attack_rows:
        row(row_type="attack", name=r.kind, level=r.epsilon, n=r.n,
            escape_rate=r.escape_rate, mean_psnr_db=r.mean_psnr_db,
            mean_ssim=r.mean_ssim, queries=r.queries,
            annotation="partial" if r.partial else None)
    for r in report.defense_rows:
        row(row_type="defense", name=r.method, level=r.severity, n=r.n,
            undefended_rate=r.undefended_rate, defended_rate=r.defended_rate)
    return "\n".join(lines) + "\n"


def report_to_svg(report: EvaluationReport) -> str:
    """Bar chart: one group per corruption method (or attack kind)."""
    groups = {}
    for r in report.corruption_rows:
        groups.setdefault(r.method, []).append((r.severity, r.accuracy))
    if not groups:
        for r in report.attack_rows:
            groups.setdefault(r.kind, []).append((r.epsilon, r.escape_rate))

    bar_w = 14
    gap = 24
    chart_h = 160
    label_h = 70
    group_names = sorted(groups)
    group_widths = [len(groups[g]) * bar_w for g in group_names]
    width = sum(group_widths) + gap * (len(group_names) + 1)
    height = chart_h + label_h + 20

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{max(width, 100)}" height="{height}">',
        f'<line x1="0" y1="{chart_h + 10}" x2="{max(width, 100)}" y2="{chart_h + 10}" stroke="black"/>',
    ]
    x = gap
    for name, gw in zip(group_names, group_widths):
        parts.append(f'<g class="method" id="group-{escape(name)}">')
        for i, (level, value) in enumerate(sorted(groups[name])):
            v = 0.0 if value is None else float(value)
            bh = v * chart_h
            bx = x + i * bar_w
            by = chart_h + 10 - bh
            parts.append(
                f'<rect x="{bx:.1f}" y="{by:.1f}" width="{bar_w - 2}" height="{bh:.1f}" '
                f'fill="#4477aa"><title>{escape(name)} level {level}: {v:.3f}</title></rect>'
            )
        parts.append(
            f'<text x="{x + gw / 2:.1f}" y="{chart_h + 26}" font-size="9" text-anchor="middle" '
            f'transform="rotate(45 {x + gw / 2:.1f} {chart_h + 26})">{escape(name)}</text>'
        )
        parts.append("</g>")
        x += gw + gap
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(report: EvaluationReport, out_dir, formats=("json", "csv", "svg"),
                basename: str = "report") -> dict:
    """Write the report in the requested formats; returns {format: path}."""
    os.makedirs(out_dir, exist_ok=True)
    writers = {
        "json": report_to_json_str,
        "csv": report_to_csv,
        "svg": report_to_svg,
    }
    paths = {}
    for fmt in formats:
        if fmt not in writers:
            raise ValueError(f"unknown report format {fmt!r}")
        path = os.path.join(out_dir, f"{basename}.{fmt}")
        try:
            with open(path, "w") as fh:
                fh.write(writers[fmt](report))
        except OSError as exc:
            raise WriteError(f"cannot write {path}: {exc}") from exc
        paths[fmt] = path
    return paths
