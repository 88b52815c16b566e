"""Plain-text rendering of the CSV files the commands write."""

from __future__ import annotations

import csv
from pathlib import Path

from ..errors import DataError


def _cell(text: str, digits: int) -> tuple[str, bool]:
    try:
        value = float(text)
    except ValueError:
        return text, False
    if text.strip().lstrip("-").isdigit():
        return text, True
    return f"{value:.{digits}f}", True


def render_rows(header, rows, digits: int = 4) -> str:
    """Align columns; numbers are right-aligned and floats rounded to ``digits``."""
    cells = [[_cell(str(v), digits) for v in row] for row in rows]
    widths = [len(h) for h in header]
    for row in cells:
        for j, (text, _) in enumerate(row):
            widths[j] = max(widths[j], len(text))
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip(),
             "  ".join("-" * w for w in widths)]
    for row in cells:
        parts = [text.rjust(w) if numeric else text.ljust(w) for (text, numeric), w in zip(row, widths)]
        lines.append("  ".join(parts).rstrip())
    return "\n".join(lines) + "\n"


def render_csv(path, digits: int = 4) -> str:
    path = Path(path)
    if not path.exists():
        raise DataError("no such file", path=str(path))
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError("empty CSV file", path=str(path))
    header, body = rows[0], rows[1:]
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DataError(f"expected {len(header)} fields, got {len(row)}", line=i, path=str(path))
    return render_rows(header, body, digits)
