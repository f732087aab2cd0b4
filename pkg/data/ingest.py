"""
CSV ingestion in the canonical semicolon format.
Validates hourly continuity and fills short holes by linear interpolation.
"""

import logging
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd

import sys

sys.path.insert(0, str(Path(__file__).parent.parent))
from config import CSV_HEADER, SIGNAL_COLUMNS
from errors import IngestionError, ParseError

logger = logging.getLogger(__name__)

CSV_COLUMNS = CSV_HEADER.split(";")
NUMERIC_COLUMNS = ["Temperature", "Humidex", "Weather", "Wind", "Load"]
MAX_MISSING_FRACTION = 0.01


@dataclass
class HourlyRecord:
    """One hourly observation."""

    date: date
    hour: int
    temperature: float  # degrees F
    humidex: float
    weather_code: int
    wind: float  # mph
    load: float  # kW or kWh
    interpolated: bool = False


def _check_header(path: Path) -> None:
    try:
        with open(path, "r", encoding="utf-8") as f:
            header = f.readline().strip().lstrip("﻿")
    except UnicodeDecodeError as e:
        raise ParseError(f"file is not UTF-8 text: {e.reason}", line=1) from e
    if header == CSV_HEADER:
        return
    if ";" not in header and "," in header:
        raise ParseError(
            f"expected ';' delimiter with header {CSV_HEADER!r}, got {header!r}", line=1
        )
    raise ParseError(f"header must be {CSV_HEADER!r}, got {header!r}", line=1)


def _parse(path: Path) -> pd.DataFrame:
    try:
        raw = pd.read_csv(path, sep=";", dtype=str, keep_default_na=False)
    except pd.errors.ParserError as e:
        raise ParseError(f"malformed CSV: {e}") from e

    dates = pd.to_datetime(raw["Date"], format="%Y-%m-%d", errors="coerce")
    hours = pd.to_numeric(raw["Heure"], errors="coerce")
    parsed = {col: pd.to_numeric(raw[col], errors="coerce") for col in NUMERIC_COLUMNS}

    bad = dates.isna() | hours.isna() | ~hours.between(0, 23) | (hours % 1 != 0)
    for col in NUMERIC_COLUMNS:
        bad |= parsed[col].isna()
    if bad.any():
        i = int(np.flatnonzero(bad.to_numpy())[0])
        row = ";".join(raw.iloc[i].astype(str))
        raise ParseError(f"malformed row {row!r}", line=i + 2)

    frame = pd.DataFrame(parsed)
    frame.index = pd.DatetimeIndex(dates + pd.to_timedelta(hours.astype(int), unit="h"))
    frame.index.name = "timestamp"
    return frame


def _fill_holes(frame: pd.DataFrame) -> pd.DataFrame:
    """Reindex to a continuous hourly grid and interpolate the holes."""
    steps = frame.index.to_series().diff().dropna()
    if (steps <= pd.Timedelta(0)).any():
        bad_at = steps[steps <= pd.Timedelta(0)].index[0]
        line = int(frame.index.get_loc(bad_at)) + 2
        raise IngestionError(
            f"timestamps must be strictly increasing (line {line}: {bad_at})"
        )

    grid = pd.date_range(frame.index[0], frame.index[-1], freq="h")
    full = frame.reindex(grid)
    missing = full["Load"].isna().to_numpy()
    if not missing.any():
        full["interpolated"] = False
        return full

    n_missing = int(missing.sum())
    if n_missing / len(grid) > MAX_MISSING_FRACTION:
        raise IngestionError(
            f"{n_missing} of {len(grid)} hours missing (limit {MAX_MISSING_FRACTION:.0%})"
        )

    # run lengths of missing hours
    edges = np.diff(np.concatenate([[0], missing.astype(int), [0]]))
    starts, ends = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
    lengths = ends - starts
    in_long_runs = int(lengths[lengths > 1].sum())
    if in_long_runs:
        logger.warning(f"Interpolating {in_long_runs} hours inside multi-hour gaps")

    continuous = [c for c in NUMERIC_COLUMNS if c != "Weather"]
    full[continuous] = full[continuous].interpolate(method="linear")
    full["Weather"] = full["Weather"].ffill()
    full["interpolated"] = missing
    logger.info(f"Interpolated {int(missing.sum())} missing hours")
    return full


def load_csv(path: Path) -> list[HourlyRecord]:
    """Load a semicolon CSV with header Date;Heure;Temperature;Humidex;Weather;Wind;Load.

    Missing hours are interpolated and flagged on the record as long as
    they stay within 1% of all hours.

    Raises:
        ParseError: Wrong header/delimiter, non-UTF-8 bytes or a malformed row (with line number).
        IngestionError: Non-increasing timestamps or too many missing hours.
    """
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"file not found: {path}")
    _check_header(path)
    frame = _parse(path)
    if frame.empty:
        raise IngestionError(f"{path} has no data rows")
    full = _fill_holes(frame)
    return frame_to_records(full)


def frame_to_records(frame: pd.DataFrame) -> list[HourlyRecord]:
    """Convert an hourly DataFrame (timestamp index, signal columns) to records."""
    flags = frame["interpolated"] if "interpolated" in frame else pd.Series(False, frame.index)
    return [
        HourlyRecord(
            date=ts.date(),
            hour=ts.hour,
            temperature=float(row.Temperature),
            humidex=float(row.Humidex),
            weather_code=int(round(row.Weather)),
            wind=float(row.Wind),
            load=float(row.Load),
            interpolated=bool(flag),
        )
        for ts, row, flag in zip(frame.index, frame.itertuples(index=False), flags)
    ]


def records_to_frame(records: Iterable[HourlyRecord]) -> pd.DataFrame:
    """Hourly DataFrame indexed by timestamp with the signal columns."""
    records = list(records)
    index = pd.DatetimeIndex(
        [pd.Timestamp(r.date) + pd.Timedelta(hours=r.hour) for r in records],
        name="timestamp",
    )
    frame = pd.DataFrame(
        {
            "Load": [r.load for r in records],
            "Temperature": [r.temperature for r in records],
            "Humidex": [r.humidex for r in records],
            "Weather": [float(r.weather_code) for r in records],
            "Wind": [r.wind for r in records],
        },
        index=index,
    )
    frame["interpolated"] = [r.interpolated for r in records]
    return frame[SIGNAL_COLUMNS + ["interpolated"]]


def write_csv(records: Iterable[HourlyRecord], path: Path) -> Path:
    """Write records in the canonical semicolon format."""
    frame = records_to_frame(records)
    out = pd.DataFrame(
        {
            "Date": frame.index.strftime("%Y-%m-%d"),
            "Heure": frame.index.hour,
            "Temperature": frame["Temperature"].to_numpy(),
            "Humidex": frame["Humidex"].to_numpy(),
            "Weather": frame["Weather"].astype(int).to_numpy(),
            "Wind": frame["Wind"].to_numpy(),
            "Load": frame["Load"].to_numpy(),
        }
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out[CSV_COLUMNS].to_csv(path, sep=";", index=False)
    return path
