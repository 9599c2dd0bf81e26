"""Decision-aid report rendering and dispatch.

A report presents one decision-aid indicator: a narrative header with the
four instantiation parameters, one section per KPI with a descending
per-entity table, and a pie chart of each entity's share (entities below 1%
are grouped into "other"). Output formats are JSON, SVG and plain text;
dispatch drops a message file into an outbox directory instead of sending
mail. All files are written atomically and contain no wall-clock timestamps,
so identical inputs produce byte-identical reports.
"""

from __future__ import annotations

import json
import math
import os
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .errors import ReportError
from .models import DecisionAidIndicator, Report, ReportSection, ReportSpec

# Which report sections a decider role receives; unlisted roles get them all.
DECIDER_SECTIONS: dict[str, tuple[str, ...]] = {
    "manufacturing_department": ("tool", "program"),
}

_PALETTE = ("#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
            "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac")

OTHER_LABEL = "other"
NO_DATA_MARKER = "no data in scope"


def _pie_shares(table: Sequence[tuple[str, float]]) -> list[tuple[str, float]]:
    total = math.fsum(v for _, v in table)
    if total <= 0:
        return []
    shares = [(entity, value / total) for entity, value in table]
    kept = [(e, s) for e, s in shares if s >= 0.01]
    rest = math.fsum(s for _, s in shares if s < 0.01)
    if rest > 0:
        kept.append((OTHER_LABEL, rest))
    return kept


def _scope_text(scope) -> str:
    parts = []
    for name in ("machine", "tool", "program", "workpiece"):
        value = getattr(scope, name)
        if value is not None:
            parts.append(f"{name}={value}")
    return ", ".join(parts) if parts else "all entities"


def _time_range_text(scope) -> str:
    lo = "start" if scope.time_start is None else f"{scope.time_start:g} s"
    hi = "end" if scope.time_end is None else f"{scope.time_end:g} s"
    return f"{lo} .. {hi}"


def _mode_text(mode) -> str:
    if mode.kind == "periodic":
        return f"periodic (every {mode.period_s:g} s)"
    if mode.kind == "on_event":
        return f"on event ({mode.event_metric} > {mode.event_threshold:g})"
    return "on demand"


def build_report(spec: ReportSpec, indicator: DecisionAidIndicator,
                 kpi_group_by: Optional[Mapping[str, str]] = None) -> tuple[Report, list[str]]:
    """Assemble the report and write the requested formats under spec.output_dir."""
    if not spec.formats:
        raise ReportError("report spec must request at least one format")
    group_by = dict(kpi_group_by or {})
    context = indicator.context

    visible = DECIDER_SECTIONS.get(context.decider)
    sections = []
    for kpi_id in spec.models:
        results = indicator.kpi_results.get(kpi_id, {})
        kind = group_by.get(kpi_id, "")
        if visible is not None and kind and kind not in visible:
            continue
        table = sorted(results.items(), key=lambda kv: (-kv[1], kv[0]))
        sections.append(ReportSection(kpi_id=kpi_id, group_by=kind, table=table,
                                      pie=_pie_shares(table),
                                      total=math.fsum(v for _, v in table)))

    empty = all(not s.table for s in sections)
    report = Report(
        indicator=indicator,
        header={
            "objective": context.objective,
            "decider": context.decider,
            "scope": _scope_text(context.scope),
            "mode": _mode_text(context.mode),
            "time_range": _time_range_text(context.scope),
        },
        sections=sections,
        empty=empty,
    )

    out_dir = Path(spec.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    if "json" in spec.formats:
        paths.append(_write_atomic(out_dir / "report.json", _render_json(report)))
    if "text" in spec.formats:
        paths.append(_write_atomic(out_dir / "report.txt", _render_text(report)))
    if "svg" in spec.formats and not empty:
        for section in report.sections:
            if section.pie:
                svg = _render_pie_svg(f"{section.kpi_id}", section.pie)
                paths.append(_write_atomic(out_dir / f"report_{section.kpi_id}.svg", svg))
    return report, paths


def _write_atomic(path: Path, text: str) -> str:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
    return str(path)


def _render_json(report: Report) -> str:
    doc = {
        "indicator_id": report.indicator.indicator_id,
        "inputs_digest": report.indicator.inputs_digest,
        "computed_at": report.indicator.computed_at,
        "header": report.header,
        "sections": [
            {
                "kpi_id": s.kpi_id,
                "group_by": s.group_by,
                "total": s.total,
                "table": [[entity, value] for entity, value in s.table],
                "pie": [[entity, share] for entity, share in s.pie],
            }
            for s in report.sections
        ],
    }
    if report.empty:
        doc["marker"] = NO_DATA_MARKER
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _render_text(report: Report) -> str:
    lines = ["DECISION-AID REPORT", ""]
    for key in ("objective", "decider", "scope", "mode", "time_range"):
        lines.append(f"{key:>10}: {report.header[key]}")
    lines.append(f"{'indicator':>10}: {report.indicator.indicator_id}")
    lines.append("")
    if report.empty:
        lines.append(NO_DATA_MARKER)
        return "\n".join(lines) + "\n"
    for s in report.sections:
        lines.append(f"-- {s.kpi_id} (by {s.group_by or 'entity'}, total {s.total:g})")
        width = max((len(e) for e, _ in s.table), default=6)
        for entity, value in s.table:
            lines.append(f"   {entity:<{width}}  {value:g}")
        lines.append("")
    return "\n".join(lines) + "\n"


def _render_pie_svg(title: str, pie: Sequence[tuple[str, float]]) -> str:
    cx, cy, r = 160.0, 170.0, 120.0
    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" width="520" height="340" '
        'viewBox="0 0 520 340">',
        f'<title>{title}</title>',
        f'<text x="16" y="24" font-family="sans-serif" font-size="16">{title}</text>',
    ]
    if len(pie) == 1:
        entity, share = pie[0]
        parts.append(f'<circle cx="{cx:g}" cy="{cy:g}" r="{r:g}" fill="{_PALETTE[0]}"/>')
    else:
        angle = -0.5 * math.pi      # start at 12 o'clock, clockwise
        for i, (entity, share) in enumerate(pie):
            sweep = share * 2.0 * math.pi
            x0 = cx + r * math.cos(angle)
            y0 = cy + r * math.sin(angle)
            angle += sweep
            x1 = cx + r * math.cos(angle)
            y1 = cy + r * math.sin(angle)
            large = 1 if sweep > math.pi else 0
            parts.append(
                f'<path d="M {cx:.4f} {cy:.4f} L {x0:.4f} {y0:.4f} '
                f'A {r:.4f} {r:.4f} 0 {large} 1 {x1:.4f} {y1:.4f} Z" '
                f'fill="{_PALETTE[i % len(_PALETTE)]}"/>')
    for i, (entity, share) in enumerate(pie):
        y = 60 + i * 22
        parts.append(f'<rect x="320" y="{y - 12}" width="14" height="14" '
                     f'fill="{_PALETTE[i % len(_PALETTE)]}"/>')
        parts.append(f'<text x="340" y="{y}" font-family="sans-serif" font-size="13">'
                     f'{entity}: {share * 100.0:.1f}%</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def dispatch_report(report_paths: Sequence[str], decider: str, outbox_dir,
                    subject: str = "decision-aid report") -> str:
    """Write an outbox message referencing the report artifacts.

    Each dispatch creates a new message file with a unique sequential id;
    nothing is transported anywhere.
    """
    if not report_paths:
        raise ReportError("nothing to dispatch: build the report first")
    for p in report_paths:
        if not Path(p).exists():
            raise ReportError(f"report artifact missing: {p}")
    outbox = Path(outbox_dir)
    outbox.mkdir(parents=True, exist_ok=True)
    seq = 1
    while (outbox / f"msg-{seq:06d}.json").exists():
        seq += 1
    msg_path = outbox / f"msg-{seq:06d}.json"
    doc = {
        "msg_id": f"msg-{seq:06d}",
        "recipient": decider,
        "subject": subject,
        "attachments": [str(p) for p in report_paths],
    }
    _write_atomic(msg_path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return str(msg_path)
