"""Accuracy tables laid out as architecture rows by polarization-mode columns."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .metrics import format_accuracy

MODE_COLUMNS = {"VH": "VH", "VV": "VV", "VHVV": "VH-VV"}


def architecture_label(model: str, head: str | None = None, augmentation: str = "none") -> str:
    label = "CapsNet" if model == "capsnet" else f"CNN ({head or 'S'})"
    if augmentation and augmentation != "none":
        label += f" ({augmentation})"
    return label


def build_table(results) -> tuple[list, list]:
    """Rows in first-seen order; a missing (architecture, mode) cell stays empty."""
    header = ["Architecture", *MODE_COLUMNS.values()]
    rows: dict = {}
    for r in results:
        mode = r["mode"]
        if mode not in MODE_COLUMNS:
            raise ValueError(f"unknown mode {mode!r} in results")
        cells = rows.setdefault(r["architecture"], {})
        cells[MODE_COLUMNS[mode]] = format_accuracy(float(r["accuracy"]))
    table = [[arch, *(cells.get(col, "") for col in header[1:])] for arch, cells in rows.items()]
    return header, table


def render_text(header, table) -> str:
    widths = [max(len(str(row[i])) for row in [header, *table]) for i in range(len(header))]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip() for row in [header, *table]]
    return "\n".join(lines) + "\n"


def render_csv(header, table) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(table)
    return buf.getvalue()


def load_results(directory: str | Path) -> list:
    """Every ``*.json`` result under ``directory`` carrying architecture, mode and accuracy."""
    results = []
    for path in sorted(Path(directory).rglob("*.json")):
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError:
            continue
        if isinstance(data, dict) and {"architecture", "mode", "accuracy"} <= data.keys():
            results.append(data)
    return results


def write_report(results, out: str | Path) -> tuple[Path, Path]:
    """Write ``<out>.csv`` and ``<out>.txt``; returns both paths."""
    header, table = build_table(results)
    out = Path(out)
    base = out.with_suffix("") if out.suffix in (".csv", ".txt") else out
    csv_path, txt_path = base.with_suffix(".csv"), base.with_suffix(".txt")
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    csv_path.write_text(render_csv(header, table))
    txt_path.write_text(render_text(header, table))
    return csv_path, txt_path
