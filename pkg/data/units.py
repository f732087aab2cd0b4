"""
Unit conversions for raw weather exports.

Raw exports carry metric units (Celsius, km/h) and a dew point instead of a
humidex; the canonical CSV stores Fahrenheit, mph and a humidex value.
"""

import logging
from pathlib import Path

import numpy as np
import pandas as pd

import sys

sys.path.insert(0, str(Path(__file__).parent.parent))
from errors import IngestionError
from data.ingest import HourlyRecord, frame_to_records

logger = logging.getLogger(__name__)

KMH_PER_MPH = 1.609344
RAW_COLUMNS = ["time", "temperature_c", "dew_point_c", "weather_code", "wind_kmh", "load"]


def celsius_to_fahrenheit(t_c):
    return np.asarray(t_c, dtype=np.float64) * 9.0 / 5.0 + 32.0


def kmh_to_mph(v_kmh):
    return np.asarray(v_kmh, dtype=np.float64) / KMH_PER_MPH


def humidex(t_c, dew_point_c):
    """Canadian humidex from air temperature and dew point, both in Celsius."""
    t_c = np.asarray(t_c, dtype=np.float64)
    td_k = np.asarray(dew_point_c, dtype=np.float64) + 273.15
    vapour_pressure = 6.11 * np.exp(5417.7530 * (1.0 / 273.16 - 1.0 / td_k))
    return t_c + 0.5555 * (vapour_pressure - 10.0)


def convert_raw_export(path: Path) -> list[HourlyRecord]:
    """Read a comma-separated raw export and convert it to canonical records.

    Expected columns: time, temperature_c, dew_point_c, weather_code,
    wind_kmh, load. Rows must already be hourly.

    Raises:
        IngestionError: Missing columns or unparseable timestamps.
    """
    raw = pd.read_csv(path)
    missing = [c for c in RAW_COLUMNS if c not in raw.columns]
    if missing:
        raise IngestionError(f"{path}: raw export lacks columns {missing}")

    stamps = pd.to_datetime(raw["time"], errors="coerce")
    if stamps.isna().any():
        line = int(np.flatnonzero(stamps.isna().to_numpy())[0]) + 2
        raise IngestionError(f"{path}: unparseable timestamp on line {line}")

    frame = pd.DataFrame(
        {
            "Temperature": celsius_to_fahrenheit(raw["temperature_c"]),
            "Humidex": humidex(raw["temperature_c"], raw["dew_point_c"]),
            "Weather": raw["weather_code"].astype(float),
            "Wind": kmh_to_mph(raw["wind_kmh"]),
            "Load": raw["load"].astype(float),
        }
    )
    frame.index = pd.DatetimeIndex(stamps, name="timestamp")
    logger.info(f"Converted {len(frame)} raw rows from {path}")
    return frame_to_records(frame)
