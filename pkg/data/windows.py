"""
Gap-window protocol: train/validation split, stride-1 evaluation windows,
truth-range normalisation and the seasonal-naive baseline.
"""

import hashlib
import json
import logging
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

import sys

sys.path.insert(0, str(Path(__file__).parent.parent))
from config import CONTEXT_DAYS, SEASONAL_LAG_DAYS, VAL_FRACTION, WINDOW_THRESHOLD
from errors import ConfigurationError, ProtocolError

logger = logging.getLogger(__name__)

MIN_SPLIT_DAYS = 20


@dataclass
class GapWindow:
    """Context days followed by a hidden gap."""

    start: int
    context: np.ndarray  # (context_len, 24, d)
    gap: np.ndarray  # (gap_len, 24, d) ground truth

    @property
    def context_len(self) -> int:
        return self.context.shape[0]

    @property
    def gap_len(self) -> int:
        return self.gap.shape[0]

    @property
    def length(self) -> int:
        return self.context_len + self.gap_len

    @property
    def gap_range(self) -> tuple[int, int]:
        """Absolute [first, last) day indices of the gap."""
        first = self.start + self.context_len
        return first, first + self.gap_len

    @property
    def day_mask(self) -> np.ndarray:
        """True on the gap days."""
        mask = np.zeros(self.length, dtype=bool)
        mask[self.context_len :] = True
        return mask

    def manifest(self, degenerate: bool = False) -> dict:
        first, last = self.gap_range
        return {
            "window_start": self.start,
            "gap_start": first,
            "gap_end": last,
            "degenerate": bool(degenerate),
        }


def make_window(days: np.ndarray, start: int, context_len: int, gap_len: int) -> GapWindow:
    end = start + context_len + gap_len
    if start < 0 or end > len(days):
        raise ProtocolError(f"window [{start}, {end}) exceeds {len(days)} days")
    return GapWindow(
        start=start,
        context=days[start : start + context_len],
        gap=days[start + context_len : end],
    )


def train_val_split(n_days: int, val_fraction: float = VAL_FRACTION) -> tuple[np.ndarray, np.ndarray]:
    """Hold out the most recent ceil(val_fraction * n_days) days."""
    if n_days < MIN_SPLIT_DAYS:
        raise ConfigurationError(f"need at least {MIN_SPLIT_DAYS} days to split, got {n_days}")
    frac = Fraction(str(val_fraction))
    n_val = -(-(frac.numerator * n_days) // frac.denominator)
    n_train = n_days - n_val
    return np.arange(n_train), np.arange(n_train, n_days)


def sliding_windows(
    n_days: int,
    gap_len: int,
    context_len: int = CONTEXT_DAYS,
    threshold: float = WINDOW_THRESHOLD,
) -> list[int]:
    """Stride-1 window starts with start + context >= threshold * n_days
    and start + context + gap <= n_days.

    Raises:
        ProtocolError: If the series is too short or no start qualifies.
    """
    if n_days < context_len + gap_len:
        raise ProtocolError(
            f"{n_days} days cannot hold a {context_len}+{gap_len} day window"
        )
    frac = Fraction(str(threshold))
    starts = [
        s
        for s in range(0, n_days - context_len - gap_len + 1)
        if (s + context_len) * frac.denominator >= frac.numerator * n_days
    ]
    if not starts:
        raise ProtocolError(
            f"no window start satisfies start + {context_len} >= {threshold} * {n_days}"
        )
    return starts


@dataclass
class TruthRange:
    """Prediction and truth mapped to [0, 1] by the truth's own range."""

    pred: Optional[np.ndarray]
    truth: Optional[np.ndarray]
    degenerate: bool
    low: float
    high: float


def minmax_truth_range(pred: np.ndarray, truth: np.ndarray) -> TruthRange:
    """Map both series by (x - min(truth)) / (max(truth) - min(truth))."""
    low, high = float(np.min(truth)), float(np.max(truth))
    if not high > low:
        return TruthRange(pred=None, truth=None, degenerate=True, low=low, high=high)
    span = high - low
    return TruthRange(
        pred=(np.asarray(pred) - low) / span,
        truth=(np.asarray(truth) - low) / span,
        degenerate=False,
        low=low,
        high=high,
    )


@dataclass
class SeasonalNaiveResult:
    imputed: Optional[np.ndarray]
    available: bool


def seasonal_naive(
    window: GapWindow, history: np.ndarray, lag: int = SEASONAL_LAG_DAYS
) -> SeasonalNaiveResult:
    """Fill gap day t with day t - lag from ``history`` (the full day array)."""
    first, last = window.gap_range
    if first - lag < 0 or window.gap_len > lag:
        logger.info(f"Seasonal naive unavailable for window at {window.start}")
        return SeasonalNaiveResult(imputed=None, available=False)
    return SeasonalNaiveResult(imputed=history[first - lag : last - lag].copy(), available=True)


def window_manifest(windows: list[GapWindow], degenerate: list[bool]) -> dict:
    entries = [w.manifest(d) for w, d in zip(windows, degenerate)]
    digest = hashlib.sha256(json.dumps(entries, sort_keys=True).encode()).hexdigest()
    return {"windows": entries, "sha256": digest}


def write_window_manifest(path: Path, windows: list[GapWindow], degenerate: list[bool]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(window_manifest(windows, degenerate), indent=2), encoding="utf-8")
    return path
