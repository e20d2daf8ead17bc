"""CSV return-series ingestion with validation and a gap report.

Input format: a header row ``date,return`` followed by one row per trading
day, daily simple returns. Strict mode rejects anything questionable; lenient
mode repairs what can be repaired (sorting, scrubbing sentinel rows) and
warns, but still refuses structurally broken files.
"""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np
import pandas as pd

from .environments import ReturnPath

__all__ = ["IngestError", "IngestWarning", "ingest_returns"]

# conventional missing-data marker in legacy return files
_SENTINEL = -99.99
_MAX_ABS_RETURN = 1.0
# calendar gap beyond a long weekend worth surfacing in the report
_GAP_DAYS = 7


class IngestError(ValueError):
    pass


class IngestWarning(UserWarning):
    pass


def _warn(messages: list[str], text: str) -> None:
    messages.append(text)
    warnings.warn(text, IngestWarning, stacklevel=3)


def _row_name(index: int, date_text: str) -> str:
    # 1-based data rows, header excluded
    return f"row {index + 1} (date={date_text!r})"


def ingest_returns(path: str | Path, strict: bool = True) -> ReturnPath:
    """Read, validate, and sort a two-column return series.

    Returns a path whose ``meta`` carries the ingestion report: observation
    count, date range, calendar gaps longer than a week, rows scrubbed in
    lenient mode, and every warning issued.
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise IngestError(f"{path}: file is empty") from None
    columns = [str(c).strip().lower() for c in frame.columns]
    if columns != ["date", "return"]:
        raise IngestError(
            f"{path}: expected header 'date,return', found {list(frame.columns)!r}"
        )
    if len(frame) == 0:
        raise IngestError(f"{path}: no data rows")

    messages: list[str] = []
    date_text = frame.iloc[:, 0].str.strip()
    value_text = frame.iloc[:, 1].str.strip()

    dates = pd.to_datetime(date_text, errors="coerce", format="mixed")
    bad_date = np.flatnonzero(dates.isna().to_numpy())
    if bad_date.size:
        i = int(bad_date[0])
        raise IngestError(f"{path}: unparseable date at {_row_name(i, date_text.iloc[i])}")

    values = pd.to_numeric(value_text, errors="coerce").to_numpy(dtype=np.float64)
    bad_value = np.flatnonzero(~np.isfinite(values))
    if bad_value.size:
        i = int(bad_value[0])
        if strict:
            raise IngestError(
                f"{path}: missing or unparseable return at {_row_name(i, date_text.iloc[i])}"
            )
        _warn(messages, f"{path}: scrubbed {bad_value.size} unparseable return row(s)")

    sentinel = np.isclose(values, _SENTINEL, rtol=0.0, atol=1e-12)
    if sentinel.any():
        i = int(np.flatnonzero(sentinel)[0])
        if strict:
            raise IngestError(
                f"{path}: sentinel value {_SENTINEL} at {_row_name(i, date_text.iloc[i])}"
            )
        _warn(messages, f"{path}: scrubbed {int(sentinel.sum())} sentinel ({_SENTINEL}) row(s)")

    keep = np.isfinite(values) & ~sentinel
    scrubbed = int(len(frame) - keep.sum())
    dates = dates[keep]
    values = values[keep]
    date_text = date_text[keep]
    if values.size == 0:
        raise IngestError(f"{path}: no valid rows after scrubbing")

    dup = dates.duplicated()
    if dup.any():
        i = int(np.flatnonzero(dup.to_numpy())[0])
        if strict:
            raise IngestError(f"{path}: duplicate date at {_row_name(i, date_text.iloc[i])}")
        _warn(messages, f"{path}: dropped {int(dup.sum())} duplicate date(s), first kept")
        keep_dup = ~dup.to_numpy()
        dates = dates[keep_dup]
        values = values[keep_dup]

    order = np.argsort(dates.to_numpy(), kind="stable")
    if not np.array_equal(order, np.arange(order.size)):
        if strict:
            first = int(np.flatnonzero(np.diff(dates.to_numpy()) < np.timedelta64(0))[0]) + 1
            raise IngestError(
                f"{path}: dates not in chronological order at data row {first + 1}"
            )
        _warn(messages, f"{path}: dates were unsorted, sorted chronologically")
        dates = dates.iloc[order]
        values = values[order]

    big = np.abs(values) > _MAX_ABS_RETURN
    if big.any():
        i = int(np.flatnonzero(big)[0])
        msg = (
            f"{path}: |return| > {_MAX_ABS_RETURN} at data row {i + 1} "
            f"(value={float(values[i])!r}); values must be daily simple returns"
        )
        if strict:
            raise IngestError(msg)
        _warn(messages, msg)

    day_gaps = np.diff(dates.to_numpy()).astype("timedelta64[D]").astype(np.int64)
    gaps = [
        {"after": str(dates.iloc[i].date()), "days": int(g)}
        for i, g in enumerate(day_gaps)
        if g > _GAP_DAYS
    ]

    meta = {
        "source": str(path),
        "n_obs": int(values.size),
        "start": str(dates.iloc[0].date()),
        "end": str(dates.iloc[-1].date()),
        "scrubbed_rows": scrubbed,
        "gaps": gaps,
        "warnings": messages,
        "strict": strict,
    }
    return ReturnPath(values=values, label=f"ingested:{path.name}", seed=None, meta=meta)
