"""
Dataset preparation: load or generate a series, build daily frames, split,
and fit normalisation on the training days only.
"""

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

import sys

sys.path.insert(0, str(Path(__file__).parent.parent))
from config import CONDITIONING_COLUMNS, LOAD_COLUMN, RunConfig
from data.frames import (
    FeatureRange,
    NormStats,
    build_daily_frames,
    feature_range_fit,
    zscore_apply,
    zscore_fit,
)
from data.ingest import load_csv, records_to_frame
from data.synth import get_preset, synth_frame
from data.windows import GapWindow, make_window, train_val_split

logger = logging.getLogger(__name__)

SYNTH_PREFIX = "synth:"


@dataclass
class PreparedData:
    """A normalised daily series with its split and statistics."""

    name: str
    content_hash: str
    raw: np.ndarray  # (n_days, 24, d) physical units
    days: np.ndarray  # z-scored, same shape
    cond: np.ndarray  # (n_days, 24, c) z-scored conditioning channels
    dates: pd.DatetimeIndex
    feature_names: list[str]
    cond_names: list[str]
    norm: NormStats
    cond_norm: NormStats
    feature_range: FeatureRange  # train min/max of the z-scored features
    n_train: int
    n_val: int

    @property
    def n_days(self) -> int:
        return self.days.shape[0]

    @property
    def n_features(self) -> int:
        return self.days.shape[2]

    @property
    def cond_dim(self) -> int:
        return self.cond.shape[2]

    @property
    def load_index(self) -> int:
        return self.feature_names.index(LOAD_COLUMN)

    @property
    def train_days(self) -> np.ndarray:
        return self.days[: self.n_train]

    def window(self, start: int, context_len: int, gap_len: int) -> GapWindow:
        return make_window(self.days, start, context_len, gap_len)

    def cond_window(self, start: int, context_len: int, gap_len: int) -> np.ndarray:
        return self.cond[start : start + context_len + gap_len]

    def load_physical(self, z_load: np.ndarray) -> np.ndarray:
        """Invert the z-score of Load values."""
        i = self.load_index
        return z_load * self.norm.std[i] + self.norm.mean[i]

    def load_unit(self, z_load: np.ndarray) -> np.ndarray:
        """Map z-scored Load to the training-split [0, 1] range."""
        i = self.load_index
        low, high = self.feature_range.low[i], self.feature_range.high[i]
        return (z_load - low) / (high - low if high > low else 1.0)

    def load_from_unit(self, unit_load: np.ndarray) -> np.ndarray:
        i = self.load_index
        low, high = self.feature_range.low[i], self.feature_range.high[i]
        return unit_load * (high - low if high > low else 1.0) + low


def _hash_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_hourly(dataset: str, n_days: int, data_seed: int) -> tuple[pd.DataFrame, str]:
    """Hourly frame plus a content hash for a CSV path or ``synth:<preset>``."""
    if dataset.startswith(SYNTH_PREFIX):
        preset = get_preset(dataset[len(SYNTH_PREFIX) :], n_days=n_days)
        identity = json.dumps({"preset": repr(preset), "seed": data_seed}, sort_keys=True)
        return synth_frame(preset, data_seed), hashlib.sha256(identity.encode()).hexdigest()
    return records_to_frame(load_csv(Path(dataset))), _hash_file(Path(dataset))


def prepare_from_frame(hourly: pd.DataFrame, name: str, content_hash: str) -> PreparedData:
    """Build a PreparedData from an hourly frame."""
    frames = build_daily_frames(hourly)
    train_idx, val_idx = train_val_split(frames.n_days)
    n_train = len(train_idx)

    norm = zscore_fit(frames.values[:n_train], frames.feature_names)
    days = zscore_apply(frames.values, norm)

    cond_cols = [frames.feature_names.index(c) for c in CONDITIONING_COLUMNS]
    cond_raw = frames.values[..., cond_cols]
    cond_norm = zscore_fit(cond_raw[:n_train], list(CONDITIONING_COLUMNS))
    cond = zscore_apply(cond_raw, cond_norm)

    logger.info(
        f"Prepared {name}: {frames.n_days} days "
        f"({n_train} train / {len(val_idx)} val), d={days.shape[2]}"
    )
    return PreparedData(
        name=name,
        content_hash=content_hash,
        raw=frames.values,
        days=days,
        cond=cond,
        dates=frames.dates,
        feature_names=frames.feature_names,
        cond_names=list(CONDITIONING_COLUMNS),
        norm=norm,
        cond_norm=cond_norm,
        feature_range=feature_range_fit(days[:n_train]),
        n_train=n_train,
        n_val=len(val_idx),
    )


def prepare_dataset(config: RunConfig) -> PreparedData:
    hourly, content_hash = load_hourly(config.dataset, config.n_days, config.data_seed)
    return prepare_from_frame(hourly, config.dataset, content_hash)
