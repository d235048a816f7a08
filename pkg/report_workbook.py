"""
Formatted Excel workbook for sweep reports: one sheet with every run, one
sheet per method and a sheet with the MatMul/Axpy and CPU/Axpy ratios.
"""

import logging

import pandas as pd
from openpyxl import Workbook
from openpyxl.styles import Alignment, Border, Font, Side
from openpyxl.utils import get_column_letter

from harness import CSV_COLUMNS, report_record, csv_row
from shared_utils import ReportIOError, sanitize_filename

logger = logging.getLogger(__name__)

THIN_BORDER = Border(
    left=Side(style='thin'),
    right=Side(style='thin'),
    top=Side(style='thin'),
    bottom=Side(style='thin')
)


def adjust_column_width(worksheet, min_width=10, max_width=40):
    """Sizes every column to its longest cell, within [min_width, max_width]."""
    for column in worksheet.columns:
        column_letter = get_column_letter(column[0].column)
        max_length = max((len(str(cell.value)) for cell in column if cell.value is not None), default=0)
        worksheet.column_dimensions[column_letter].width = min(max(max_length + 2, min_width), max_width)


def write_frame(worksheet, frame, title):
    """Writes a title row, a bold header row and the frame's values, all bordered and centered."""
    worksheet.cell(row=1, column=1, value=title).font = Font(bold=True, size=14)
    for col, name in enumerate(frame.columns, start=1):
        worksheet.cell(row=2, column=col, value=str(name)).font = Font(bold=True)
    for row_index, values in enumerate(frame.itertuples(index=False), start=3):
        for col, value in enumerate(values, start=1):
            worksheet.cell(row=row_index, column=col, value=None if pd.isna(value) else value)

    for row in worksheet.iter_rows(min_row=2, max_row=worksheet.max_row, max_col=worksheet.max_column):
        for cell in row:
            cell.border = THIN_BORDER
            cell.alignment = Alignment(horizontal='center', vertical='center', wrap_text=True)
    adjust_column_width(worksheet)


def write_report_workbook(reports, out, ratio_table=None):
    """
    Saves reports (Report objects or parsed dicts) to an .xlsx file. The
    ratio sheet is only added when a ratio table is given.
    """
    runs = pd.DataFrame([csv_row(report_record(r)) for r in reports], columns=CSV_COLUMNS)

    wb = Workbook()
    ws = wb.active
    ws.title = "Runs"
    write_frame(ws, runs, "Modeled stencil runs (schema v1)")

    for method, frame in runs.groupby("method", sort=True):
        sheet = wb.create_sheet(sanitize_filename(str(method))[:31] or "method")
        write_frame(sheet, frame, f"{method} runs")

    if ratio_table is not None and not ratio_table.empty:
        write_frame(wb.create_sheet("Ratios"), ratio_table, "Modeled total-time ratios")

    try:
        wb.save(out)
    except OSError as e:
        raise ReportIOError(f"Could not write workbook to {out}: {e}") from e
    logger.info("Successfully generated workbook with %d run(s) at %s", len(runs), out)
    return out
