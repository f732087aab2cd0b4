"""
Daily frames, calendar encodings and normalisation statistics.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

import sys

sys.path.insert(0, str(Path(__file__).parent.parent))
from config import FEATURE_COLUMNS, HOURS_PER_DAY, SIGNAL_COLUMNS
from errors import DimensionError, IngestionError

logger = logging.getLogger(__name__)

DEGENERATE_STD = 1e-12


@dataclass
class DailyFrames:
    """Hourly data reshaped to whole days."""

    values: np.ndarray  # (n_days, 24, d) in physical units
    dates: pd.DatetimeIndex  # midnight of each day
    feature_names: list[str]

    @property
    def n_days(self) -> int:
        return self.values.shape[0]


def calendar_features(index: pd.DatetimeIndex) -> pd.DataFrame:
    """sin/cos encodings of hour of day, day of week and month."""
    hour = index.hour.to_numpy()
    dow = index.dayofweek.to_numpy()
    month = index.month.to_numpy() - 1
    return pd.DataFrame(
        {
            "hour_sin": np.sin(2 * np.pi * hour / 24),
            "hour_cos": np.cos(2 * np.pi * hour / 24),
            "dow_sin": np.sin(2 * np.pi * dow / 7),
            "dow_cos": np.cos(2 * np.pi * dow / 7),
            "month_sin": np.sin(2 * np.pi * month / 12),
            "month_cos": np.cos(2 * np.pi * month / 12),
        },
        index=index,
    )


def build_daily_frames(hourly: pd.DataFrame) -> DailyFrames:
    """Trim an hourly frame to whole days and stack it as (n_days, 24, d).

    Leading hours before the first midnight and a trailing partial day are
    dropped.
    """
    midnights = np.flatnonzero(hourly.index.hour == 0)
    if len(midnights) == 0:
        raise IngestionError("no complete day in the series")
    hourly = hourly.iloc[midnights[0] :]
    n_days = len(hourly) // HOURS_PER_DAY
    if n_days == 0:
        raise IngestionError("no complete day in the series")
    hourly = hourly.iloc[: n_days * HOURS_PER_DAY]

    table = pd.concat([hourly[SIGNAL_COLUMNS], calendar_features(hourly.index)], axis=1)
    table = table[FEATURE_COLUMNS]
    if table.isna().any().any():
        raise IngestionError("missing values remain after preprocessing")

    values = table.to_numpy(dtype=np.float64).reshape(n_days, HOURS_PER_DAY, len(FEATURE_COLUMNS))
    dates = pd.DatetimeIndex(hourly.index[::HOURS_PER_DAY].normalize())
    return DailyFrames(values=values, dates=dates, feature_names=list(FEATURE_COLUMNS))


@dataclass
class NormStats:
    """Per-feature z-score statistics fitted on the training split."""

    mean: np.ndarray
    std: np.ndarray
    degenerate: np.ndarray  # bool per feature: std forced to 1

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "degenerate": self.degenerate.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NormStats":
        return cls(
            mean=np.asarray(data["mean"], dtype=np.float64),
            std=np.asarray(data["std"], dtype=np.float64),
            degenerate=np.asarray(data["degenerate"], dtype=bool),
        )


def zscore_fit(train: np.ndarray, names: Optional[list[str]] = None) -> NormStats:
    """Fit mean/std over every axis but the last. Constant features get std 1."""
    flat = np.asarray(train, dtype=np.float64).reshape(-1, train.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    degenerate = std < DEGENERATE_STD
    if degenerate.any():
        labels = [names[i] if names else str(i) for i in np.flatnonzero(degenerate)]
        logger.warning(f"Constant features in training split, std forced to 1: {labels}")
    std = np.where(degenerate, 1.0, std)
    return NormStats(mean=mean, std=std, degenerate=degenerate)


def zscore_apply(values: np.ndarray, stats: NormStats) -> np.ndarray:
    if values.shape[-1] != stats.mean.shape[0]:
        raise DimensionError(f"expected {stats.mean.shape[0]} features, got {values.shape[-1]}")
    return (values - stats.mean) / stats.std


def zscore_invert(values: np.ndarray, stats: NormStats) -> np.ndarray:
    if values.shape[-1] != stats.mean.shape[0]:
        raise DimensionError(f"expected {stats.mean.shape[0]} features, got {values.shape[-1]}")
    return values * stats.std + stats.mean


@dataclass
class FeatureRange:
    """Per-feature min/max of the training split, for [0, 1] metric scaling."""

    low: np.ndarray
    high: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        span = np.where(self.high > self.low, self.high - self.low, 1.0)
        return (values - self.low) / span


def feature_range_fit(train: np.ndarray) -> FeatureRange:
    flat = np.asarray(train, dtype=np.float64).reshape(-1, train.shape[-1])
    return FeatureRange(low=flat.min(axis=0), high=flat.max(axis=0))
