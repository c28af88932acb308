"""
Evaluation report writers.

CSV (default): `# key=value` provenance lines, then `method,metric,K,value`.

Excel (.xlsx paths): a multi-sheet workbook
    Sheet 1 – Summary  one row per method, one column per metric@K
    Sheet 2 – Long     the raw method / metric / K / value rows
    Sheet 3 – Config   the resolved settings the run used
"""

from __future__ import annotations

import io
from pathlib import Path
from typing import Any, Mapping

import pandas as pd
from openpyxl import Workbook
from openpyxl.styles import Alignment, Font, PatternFill
from openpyxl.utils import get_column_letter
from openpyxl.utils.dataframe import dataframe_to_rows

from app.errors import FormatError
from app.metrics import METRIC_NAMES

REPORT_COLUMNS = ["method", "metric", "K", "value"]


# ---------------------------------------------------------------------------
# Colour palette
# ---------------------------------------------------------------------------
_BEST_FILL = "C6EFCE"
_HEADER_FILL = "4472C4"
_HEADER_FONT_CLR = "FFFFFF"


def _write_header_row(ws, row_idx: int, values: list, bold: bool = True) -> None:
    for col_idx, val in enumerate(values, start=1):
        cell = ws.cell(row=row_idx, column=col_idx, value=val)
        cell.fill = PatternFill("solid", fgColor=_HEADER_FILL)
        cell.font = Font(bold=bold, color=_HEADER_FONT_CLR)
        cell.alignment = Alignment(horizontal="center", wrap_text=True)


def _autofit(ws) -> None:
    for col in ws.columns:
        max_len = max((len(str(c.value)) for c in col if c.value is not None), default=8)
        ws.column_dimensions[get_column_letter(col[0].column)].width = min(max_len + 4, 30)


def _check_frame(frame: pd.DataFrame) -> None:
    missing = [c for c in REPORT_COLUMNS if c not in frame.columns]
    if missing:
        raise FormatError(f"Report frame lacks columns {missing}")


def pivot(frame: pd.DataFrame) -> pd.DataFrame:
    """Wide view: rows = method (input order), columns = metric@K."""
    _check_frame(frame)
    methods = list(dict.fromkeys(frame["method"]))
    ks = sorted(set(frame["K"]))
    columns = [f"{m}@{k}" for k in ks for m in METRIC_NAMES]

    keyed = frame.assign(column=frame["metric"] + "@" + frame["K"].astype(str))
    wide = keyed.pivot_table(index="method", columns="column", values="value", aggfunc="first")
    return wide.reindex(index=methods, columns=[c for c in columns if c in wide.columns])


# ---------------------------------------------------------------------------
# Sheet writers
# ---------------------------------------------------------------------------

def _write_summary_sheet(ws, wide: pd.DataFrame) -> None:
    ws.title = "Summary"
    _write_header_row(ws, 1, ["method"] + list(wide.columns))

    for r_idx, (method, row) in enumerate(wide.iterrows(), start=2):
        ws.cell(row=r_idx, column=1, value=method)
        for c_idx, val in enumerate(row.tolist(), start=2):
            ws.cell(row=r_idx, column=c_idx, value=round(float(val), 2))

    # Highlight the best method per column
    for c_idx, column in enumerate(wide.columns, start=2):
        best = wide[column].max()
        for r_idx, val in enumerate(wide[column].tolist(), start=2):
            if len(wide) > 1 and val == best:
                ws.cell(row=r_idx, column=c_idx).fill = PatternFill("solid", fgColor=_BEST_FILL)

    _autofit(ws)


def _write_long_sheet(ws, frame: pd.DataFrame) -> None:
    ws.title = "Long"
    _write_header_row(ws, 1, REPORT_COLUMNS)
    rows = dataframe_to_rows(frame[REPORT_COLUMNS], index=False, header=False)
    for r_idx, row in enumerate(rows, start=2):
        for c_idx, val in enumerate(row, start=1):
            ws.cell(row=r_idx, column=c_idx, value=val)
    _autofit(ws)


def _write_config_sheet(ws, settings: Mapping[str, Any]) -> None:
    ws.title = "Config"
    _write_header_row(ws, 1, ["setting", "value"])
    for r_idx, (key, value) in enumerate(sorted(settings.items()), start=2):
        ws.cell(row=r_idx, column=1, value=key)
        ws.cell(row=r_idx, column=2, value=str(value))
    _autofit(ws)


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------

def report_csv(frame: pd.DataFrame, settings: Mapping[str, Any] | None = None) -> str:
    _check_frame(frame)
    buf = io.StringIO()
    for key, value in sorted((settings or {}).items()):
        buf.write(f"# {key}={value}\n")
    frame[REPORT_COLUMNS].to_csv(buf, index=False, lineterminator="\n")
    return buf.getvalue()


def save_report(
    output_path: str | Path,
    frame: pd.DataFrame,
    settings: Mapping[str, Any] | None = None,
) -> Path:
    """
    Write the evaluation report.

    Parameters
    ----------
    output_path : destination; `.xlsx` gives a workbook, anything else CSV
    frame       : long-format rows from analysis.compare()
    settings    : resolved run settings, echoed for provenance

    Returns the resolved output path.
    """
    output_path = Path(output_path)
    if output_path.suffix.lower() == ".xlsx":
        wb = Workbook()
        _write_summary_sheet(wb.active, pivot(frame))
        _write_long_sheet(wb.create_sheet(), frame)
        _write_config_sheet(wb.create_sheet(), settings or {})
        wb.save(output_path)
    else:
        output_path.write_text(report_csv(frame, settings), encoding="utf-8")
    return output_path.resolve()


def load_report(path: str | Path) -> pd.DataFrame:
    """Read a CSV report back (provenance comment lines skipped)."""
    frame = pd.read_csv(path, comment="#")
    _check_frame(frame)
    return frame


def format_table(frame: pd.DataFrame) -> str:
    """Console view: one block per K, methods as rows, metrics as columns (percent)."""
    _check_frame(frame)
    blocks = []
    for k in sorted(set(frame["K"])):
        part = frame[frame["K"] == k]
        table = part.pivot_table(index="method", columns="metric", values="value", aggfunc="first")
        table = table.reindex(
            index=list(dict.fromkeys(part["method"])),
            columns=[m for m in METRIC_NAMES if m in table.columns],
        )
        table.columns = [f"{m}@{k}" for m in table.columns]
        blocks.append(table.to_string(float_format=lambda v: f"{v:.2f}"))
    return "\n\n".join(blocks)
