"""
Panel loader module for bundlechoice.

Reads and writes observation panels as long-format CSV (one row per individual
and period) and loads instances for the rationalizability check.

CSV columns: id, t, y, xA_1..xA_dx, xB_1..xB_dx, z_1..z_dz. Choices are written
as labels (O, A, B, AB); integer codes 0..3 are accepted on input.
"""

import json
import logging
import re
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
import pandas as pd

from .errors import InvalidChoiceError, PanelParseError
from .models import Choice, ObservationPanel, PairObservation, Theta

logger = logging.getLogger(__name__)

ID_COLUMNS = ["id", "t", "y"]


def _numbered_columns(columns: List[str], prefix: str) -> List[str]:
    pattern = re.compile(rf"^{prefix}_(\d+)$")
    found = [(int(m.group(1)), c) for c in columns for m in [pattern.match(c)] if m]
    return [c for _, c in sorted(found)]


def _csv_row(index: int) -> int:
    """1-based file line of a data row (the header is line 1)."""
    return int(index) + 2


def _parse_choice(value: object, row: int) -> int:
    text = str(value).strip()
    if text.lstrip("-").isdigit():
        code = int(text)
        if 0 <= code <= 3:
            return code
        raise PanelParseError(f"choice code {code} outside 0..3", row=row, column="y")
    try:
        return int(Choice.from_label(text))
    except InvalidChoiceError as e:
        raise PanelParseError(str(e), row=row, column="y") from None


def load_panel_csv(path: Union[str, Path]) -> ObservationPanel:
    """
    Load a balanced panel from CSV.

    Args:
        path: CSV file in long format

    Returns:
        ObservationPanel with individuals in order of first appearance

    Raises:
        FileNotFoundError: If the file does not exist
        PanelParseError: If a column is missing, a value is missing or
            non-numeric, a choice is invalid, or the panel is unbalanced
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Panel file not found: {path}")

    df = pd.read_csv(path, dtype={"y": str}, float_precision="round_trip")
    columns = list(df.columns)
    missing = [c for c in ID_COLUMNS if c not in columns]
    if missing:
        raise PanelParseError(f"missing required columns: {missing}")
    xa_cols = _numbered_columns(columns, "xA")
    xb_cols = _numbered_columns(columns, "xB")
    z_cols = _numbered_columns(columns, "z")
    if not xa_cols or len(xa_cols) != len(xb_cols):
        raise PanelParseError("need matching xA_k and xB_k columns for both goods")
    if not z_cols:
        raise PanelParseError("need at least one z_k column")

    for col in ["t"] + xa_cols + xb_cols + z_cols:
        numeric = pd.to_numeric(df[col], errors="coerce")
        bad = np.nonzero(~np.isfinite(numeric.to_numpy(dtype=float)))[0]
        if bad.size:
            raise PanelParseError("missing or non-numeric value", row=_csv_row(bad[0]), column=col)
        df[col] = numeric
    if df["y"].isna().any():
        first = int(np.nonzero(df["y"].isna().to_numpy())[0][0])
        raise PanelParseError("missing choice", row=_csv_row(first), column="y")
    codes = np.array([_parse_choice(v, _csv_row(i)) for i, v in enumerate(df["y"])], dtype=np.int64)

    ids = pd.unique(df["id"])
    periods = np.sort(pd.unique(df["t"]))
    if df.duplicated(subset=["id", "t"]).any():
        first = int(np.nonzero(df.duplicated(subset=["id", "t"]).to_numpy())[0][0])
        raise PanelParseError("duplicate (id, t) row", row=_csv_row(first))
    if len(df) != len(ids) * len(periods):
        raise PanelParseError("unbalanced panel: every id needs every period")

    id_pos = {v: i for i, v in enumerate(ids)}
    t_pos = {v: j for j, v in enumerate(periods)}
    n, t_len, d_x, d_z = len(ids), len(periods), len(xa_cols), len(z_cols)
    x = np.empty((n, t_len, 2, d_x))
    y = np.empty((n, t_len), dtype=np.int64)
    z = np.full((n, d_z), np.nan)
    xa = df[xa_cols].to_numpy(dtype=float)
    xb = df[xb_cols].to_numpy(dtype=float)
    zz = df[z_cols].to_numpy(dtype=float)
    for row, (ident, period) in enumerate(zip(df["id"], df["t"])):
        i, j = id_pos[ident], t_pos[period]
        x[i, j, 0] = xa[row]
        x[i, j, 1] = xb[row]
        y[i, j] = codes[row]
        if np.isnan(z[i, 0]):
            z[i] = zz[row]
        elif not np.array_equal(z[i], zz[row]):
            raise PanelParseError("z must be constant within an individual", row=_csv_row(row))

    logger.info(f"Loaded panel with {n} individuals and {t_len} periods from {path}")
    return ObservationPanel(x=x, z=z, y=y)


def panel_to_dataframe(panel: ObservationPanel) -> pd.DataFrame:
    """Long-format frame with the CSV column layout."""
    n, t_len, d_x, d_z = panel.n, panel.t_len, panel.d_x, panel.d_z
    data = {
        "id": np.repeat(np.arange(n), t_len),
        "t": np.tile(np.arange(t_len), n),
        "y": [Choice(int(c)).label for c in panel.y.reshape(-1)],
    }
    for k in range(d_x):
        data[f"xA_{k + 1}"] = panel.x[:, :, 0, k].reshape(-1)
    for k in range(d_x):
        data[f"xB_{k + 1}"] = panel.x[:, :, 1, k].reshape(-1)
    for k in range(d_z):
        data[f"z_{k + 1}"] = np.repeat(panel.z[:, k], t_len)
    return pd.DataFrame(data)


def write_panel_csv(panel: ObservationPanel, path: Union[str, Path]) -> Path:
    """Write a panel as long-format CSV, creating the parent directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    panel_to_dataframe(panel).to_csv(path, index=False, encoding="utf-8")
    logger.info(f"Wrote panel with {panel.n} individuals to {path}")
    return path


def load_rationalize_instance(path: Union[str, Path]) -> Tuple[List[PairObservation], Theta]:
    """
    Load {"pairs": [{P_s, P_t, x_s, x_t, z}, ...], "theta": {beta, gamma}}.

    Raises:
        FileNotFoundError: If the file does not exist
        ValueError: If a required key is missing
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Instance file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    try:
        pairs = [PairObservation.from_dict(p) for p in data["pairs"]]
        theta = Theta.from_dict(data["theta"])
    except KeyError as e:
        raise ValueError(f"instance is missing key {e}") from None
    logger.info(f"Loaded {len(pairs)} covariate pairs from {path}")
    return pairs, theta
