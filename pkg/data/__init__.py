"""Data module: ingestion, synthetic series and the gap-window protocol."""

from data.ingest import HourlyRecord, load_csv, write_csv
from data.synth import PRESETS, SynthConfig, synth_generate
from data.frames import NormStats, zscore_apply, zscore_fit, zscore_invert
from data.windows import (
    GapWindow,
    minmax_truth_range,
    seasonal_naive,
    sliding_windows,
    train_val_split,
)
from data.dataset import PreparedData, prepare_dataset

__all__ = [
    "HourlyRecord",
    "load_csv",
    "write_csv",
    "PRESETS",
    "SynthConfig",
    "synth_generate",
    "NormStats",
    "zscore_apply",
    "zscore_fit",
    "zscore_invert",
    "GapWindow",
    "minmax_truth_range",
    "seasonal_naive",
    "sliding_windows",
    "train_val_split",
    "PreparedData",
    "prepare_dataset",
]
