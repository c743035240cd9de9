"""
Export module for bundlechoice.

Writes JSON reports and exports Monte Carlo metrics tables to CSV, JSON,
JSON Lines and Excel. File names are fixed so reruns overwrite identically.
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from .models import MetricsRow

logger = logging.getLogger(__name__)

COLUMN_ORDER = [
    "estimator",
    "parameter",
    "design",
    "n",
    "t_len",
    "err",
    "sd",
    "rmse",
    "mad",
    "bias",
    "coverage",
    "successes",
    "failures",
]
SHEET_NAME = "Monte Carlo"


def _ensure_output_dir(output_dir: Path) -> None:
    """Create output directory if it doesn't exist."""
    output_dir.mkdir(parents=True, exist_ok=True)


def _generate_filename(prefix: str, extension: str) -> str:
    return f"{prefix}.{extension}"


def _clean(value: Any) -> Any:
    """Replace non-finite floats by None, recursively."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def write_json(data: Any, path: Path) -> Path:
    """Write a JSON report with sorted keys; NaN and infinities become null."""
    path = Path(path)
    _ensure_output_dir(path.parent)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_clean(data), f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")
    logger.debug(f"Wrote {path}")
    return path


def _rows_to_dataframe(rows: Sequence[MetricsRow]) -> pd.DataFrame:
    """Convert rows to a DataFrame with the fixed column order."""
    df = pd.DataFrame([row.to_dict() for row in rows], columns=COLUMN_ORDER)
    return df[COLUMN_ORDER]


def export_to_csv(
    rows: Sequence[MetricsRow], output_dir: Path, filename: Optional[str] = None
) -> Path:
    """
    Export a metrics table to CSV.

    Args:
        rows: Metrics rows to export
        output_dir: Directory to save the CSV file
        filename: Optional custom filename

    Returns:
        Path to the created CSV file
    """
    _ensure_output_dir(output_dir)
    output_path = output_dir / (filename or _generate_filename("metrics", "csv"))
    _rows_to_dataframe(rows).to_csv(output_path, index=False, encoding="utf-8")
    logger.info(f"Exported {len(rows)} rows to CSV: {output_path}")
    return output_path


def export_to_excel(
    rows: Sequence[MetricsRow], output_dir: Path, filename: Optional[str] = None
) -> Path:
    """Export a metrics table to an Excel workbook (.xlsx)."""
    _ensure_output_dir(output_dir)
    output_path = output_dir / (filename or _generate_filename("metrics", "xlsx"))
    df = _rows_to_dataframe(rows)

    with pd.ExcelWriter(output_path, engine="openpyxl") as writer:
        df.to_excel(writer, index=False, sheet_name=SHEET_NAME)

        worksheet = writer.sheets[SHEET_NAME]
        for idx, col in enumerate(df.columns):
            max_length = max(df[col].astype(str).map(len).max() if len(df) else 0, len(col))
            # Cap at 50 chars for readability
            worksheet.column_dimensions[chr(65 + idx)].width = min(max_length + 2, 50)

    logger.info(f"Exported {len(rows)} rows to Excel: {output_path}")
    return output_path


def export_to_json(
    rows: Sequence[MetricsRow],
    output_dir: Path,
    filename: Optional[str] = None,
    jsonl: bool = True,
) -> Path:
    """
    Export a metrics table to JSON.

    Args:
        rows: Metrics rows to export
        output_dir: Directory to save the file
        filename: Optional custom filename
        jsonl: If True, one JSON object per line

    Returns:
        Path to the created file
    """
    _ensure_output_dir(output_dir)
    extension = "jsonl" if jsonl else "json"
    output_path = output_dir / (filename or _generate_filename("metrics", extension))
    data = [_clean(row.to_dict()) for row in rows]

    with open(output_path, "w", encoding="utf-8") as f:
        if jsonl:
            for item in data:
                f.write(json.dumps(item, sort_keys=True) + "\n")
        else:
            json.dump(data, f, indent=2, sort_keys=True)
            f.write("\n")

    logger.info(f"Exported {len(rows)} rows to JSON: {output_path}")
    return output_path


def export_results(
    rows: Sequence[MetricsRow],
    output_dir: Path,
    formats: Optional[List[str]] = None,
) -> Dict[str, Path]:
    """
    Export a metrics table to several formats.

    Args:
        rows: Metrics rows to export
        output_dir: Directory to save output files
        formats: Any of "csv", "json", "jsonl", "excel"; defaults to csv and json

    Returns:
        Dictionary mapping format names to output file paths
    """
    if formats is None:
        formats = ["csv", "json"]

    output_files: Dict[str, Path] = {}
    for fmt in formats:
        if fmt == "csv":
            output_files["csv"] = export_to_csv(rows, output_dir)
        elif fmt == "json":
            output_files["json"] = export_to_json(rows, output_dir, jsonl=False)
        elif fmt == "jsonl":
            output_files["jsonl"] = export_to_json(rows, output_dir, jsonl=True)
        elif fmt == "excel":
            output_files["excel"] = export_to_excel(rows, output_dir)
        else:
            logger.warning(f"Unknown export format: {fmt}")
    return output_files
