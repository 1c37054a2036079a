"""Write a campaign report to disk as CSV, JSON and SVG files.

Output files in ``out_dir``:

    hist_round{r}_group{g}.csv     resistance histogram (relative to group median)
    collision_map_round{r}.json    die grid of collisions excluding S1
    collision_map_round{r}.svg     the same grid as a heat map
    collision_histogram.csv        dies per collision count, every round
    shift_scatter.csv              initial vs final resistance per junction
    campaign.json                  the full report

Everything is rendered from the report alone with fixed float formatting,
so the same report always produces the same bytes.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .simulate import HIST_LOW, HIST_STEP, SCHEMA_VERSION, CampaignReport, RoundSummary

CELL = 24
MARGIN = 20
COLOR_SCALE = "linear white (0 collisions) to red (max count over all rounds); grey = no die"


def _fmt(x: float) -> str:
    return repr(float(x))


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _heat_color(value: int, vmax: int) -> str:
    frac = 0.0 if vmax <= 0 else min(1.0, value / vmax)
    level = round(255 * (1 - frac))
    return f"#ff{level:02x}{level:02x}"


def collision_grid(summary: RoundSummary, grid: tuple[int, int]) -> list[list[int | None]]:
    rows, cols = grid
    cells: list[list[int | None]] = [[None] * cols for _ in range(rows)]
    for (r, c), total in summary.collision_map.items():
        cells[r][c] = total
    return cells


def render_svg_grid(cells: list[list[int | None]], vmax: int, title: str = "") -> str:
    """Minimal SVG heat grid: one rect per die, count printed in each cell."""
    rows = len(cells)
    cols = len(cells[0]) if rows else 0
    width = 2 * MARGIN + cols * CELL
    height = 2 * MARGIN + rows * CELL + (MARGIN if title else 0)
    top = MARGIN + (MARGIN if title else 0)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
    ]
    if title:
        out.append(f'<text x="{MARGIN}" y="{MARGIN + 4}" font-family="sans-serif" font-size="12">{title}</text>')
    for r, row in enumerate(cells):
        for c, value in enumerate(row):
            x, y = MARGIN + c * CELL, top + r * CELL
            fill = "#dddddd" if value is None else _heat_color(value, vmax)
            out.append(
                f'<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}" stroke="#444444" stroke-width="0.5"/>'
            )
            if value is not None:
                out.append(
                    f'<text x="{x + CELL // 2}" y="{y + CELL // 2 + 4}" font-family="sans-serif" '
                    f'font-size="10" text-anchor="middle">{value}</text>'
                )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_reports(report: CampaignReport, out_dir: str | Path) -> list[Path]:
    """Write every report file; returns the paths written, in order."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out}: {exc}") from exc

    files: dict[str, str] = {}
    for summary in report.per_round:
        for group, counts in summary.resistance_histograms.items():
            rows = [
                [_fmt(HIST_LOW + i * HIST_STEP), _fmt(HIST_LOW + (i + 1) * HIST_STEP), n]
                for i, n in enumerate(counts)
            ]
            files[f"hist_round{summary.round_index}_group{group}.csv"] = _csv_text(
                ["bin_low_rel", "bin_high_rel", "count"], rows
            )

    vmax = max((v for s in report.per_round for v in s.collision_map.values()), default=0)
    for summary in report.per_round:
        cells = collision_grid(summary, report.die_grid)
        files[f"collision_map_round{summary.round_index}.json"] = (
            json.dumps(
                {
                    "schema_version": SCHEMA_VERSION,
                    "round": summary.round_index,
                    "rows": report.die_grid[0],
                    "cols": report.die_grid[1],
                    "cells": cells,
                    "color_scale": COLOR_SCALE,
                    "color_max": vmax,
                },
                indent=2,
            )
            + "\n"
        )
        files[f"collision_map_round{summary.round_index}.svg"] = render_svg_grid(
            cells, vmax, f"round {summary.round_index}: collisions excluding S1"
        )

    hist_rows = [
        [s.round_index, count, dies]
        for s in report.per_round
        for count, dies in s.collision_histogram.items()
    ]
    files["collision_histogram.csv"] = _csv_text(["round", "collisions_excluding_s1", "die_count"], hist_rows)

    files["shift_scatter.csv"] = _csv_text(
        ["junction_id", "group", "r_initial_ohm", "r_final_ohm", "shift_ohm", "tuned"],
        [
            [s.junction_id, s.group, _fmt(s.r_initial), _fmt(s.r_final), _fmt(s.shift), int(s.tuned)]
            for s in report.junction_shifts
        ],
    )
    files["campaign.json"] = json.dumps(report.to_dict(), indent=2) + "\n"

    written = []
    for name, text in files.items():
        path = out / name
        try:
            path.write_text(text, encoding="utf-8")
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
        written.append(path)
    return written


def load_campaign_report(path: str | Path) -> CampaignReport:
    return CampaignReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
