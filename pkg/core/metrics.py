"""
Evaluation metrics for gap imputation and prediction bands.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy.special import ndtr
from scipy.stats import rankdata

import sys

sys.path.insert(0, str(Path(__file__).parent.parent))
from config import MAPE_EPS
from data.frames import FeatureRange
from data.windows import minmax_truth_range
from errors import ConfigurationError, DimensionError

logger = logging.getLogger(__name__)

EXACT_WILCOXON_MAX_N = 20
MIN_WILCOXON_PAIRS = 5


def _check_shapes(pred: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction {pred.shape} and truth {truth.shape} differ")
    return pred, truth


def gap_mse_allfeat(pred: np.ndarray, truth: np.ndarray, feature_range: Optional[FeatureRange] = None) -> float:
    """MSE over all features and gap hours, optionally after per-feature [0, 1] scaling."""
    pred, truth = _check_shapes(pred, truth)
    if feature_range is not None:
        pred, truth = feature_range.apply(pred), feature_range.apply(truth)
    return float(np.mean((pred - truth) ** 2))


def load_mse_minmax(pred: np.ndarray, truth: np.ndarray) -> tuple[Optional[float], bool]:
    """Load MSE after min-max scaling by the truth range. Returns (mse, degenerate)."""
    pred, truth = _check_shapes(pred, truth)
    scaled = minmax_truth_range(pred, truth)
    if scaled.degenerate:
        return None, True
    return float(np.mean((scaled.pred - scaled.truth) ** 2)), False


@dataclass
class MapeResult:
    value: float  # percent; nan when every hour was excluded
    excluded: int


def mape(pred: np.ndarray, truth: np.ndarray, eps: float = MAPE_EPS) -> MapeResult:
    """Mean absolute percentage error, skipping hours with |truth| < eps."""
    pred, truth = _check_shapes(pred, truth)
    keep = np.abs(truth) >= eps
    excluded = int((~keep).sum())
    if not keep.any():
        return MapeResult(value=math.nan, excluded=excluded)
    value = 100.0 * float(np.mean(np.abs(pred[keep] - truth[keep]) / np.abs(truth[keep])))
    return MapeResult(value=value, excluded=excluded)


def rmse_physical(mse_unit: float, value_range: float) -> float:
    """sqrt(MSE on [0, 1]) * (max - min)."""
    return math.sqrt(mse_unit) * value_range


def mae_from_rmse(rmse: float) -> float:
    """Gaussian-error MAE: sqrt(2 / pi) * RMSE."""
    return math.sqrt(2.0 / math.pi) * rmse


def crps_energy(ensemble: np.ndarray, y) -> np.ndarray:
    """(1/M) sum |x_i - y| - (1/2M^2) sum_ij |x_i - x_j| over the first axis.

    ``ensemble`` is (M, ...) and ``y`` broadcasts against ensemble[0].
    """
    ens = np.asarray(ensemble, dtype=np.float64)
    m = ens.shape[0]
    y = np.asarray(y, dtype=np.float64)
    spread_to_obs = np.mean(np.abs(ens - y), axis=0)
    # sum_ij |x_i - x_j| = 2 sum_k (2k - M + 1) x_(k) over sorted members
    ordered = np.sort(ens, axis=0)
    coef = (2 * np.arange(m) - m + 1).reshape((m,) + (1,) * (ens.ndim - 1))
    pairwise = 2.0 * np.sum(coef * ordered, axis=0)
    return spread_to_obs - pairwise / (2.0 * m * m)


def crps_integral_oracle(ensemble: Sequence[float], y: float) -> float:
    """Integral of (F(x) - 1{x >= y})^2 for the empirical step CDF, evaluated exactly."""
    members = np.sort(np.asarray(ensemble, dtype=np.float64).reshape(-1))
    m = members.size
    atoms = np.sort(np.append(members, y))
    total = 0.0
    for a, b in zip(atoms[:-1], atoms[1:]):
        if b <= a:
            continue
        cdf = np.searchsorted(members, a, side="right") / m
        step = 1.0 if a >= y else 0.0
        total += (cdf - step) ** 2 * (b - a)
    return float(total)


def coverage_and_width(lo: np.ndarray, hi: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Fraction of hours with lo <= y <= hi, and mean hi - lo."""
    lo, hi, y = (np.asarray(a, dtype=np.float64) for a in (lo, hi, y))
    if not lo.shape == hi.shape == y.shape:
        raise DimensionError(f"band {lo.shape}/{hi.shape} and series {y.shape} differ")
    return float(np.mean((y >= lo) & (y <= hi))), float(np.mean(hi - lo))


def boundary_discontinuity(
    c_prev: float, c_last: float, f_first: float, value_range: float
) -> tuple[Optional[float], bool]:
    """|f_1 - 2 c_last + c_prev| / range. Returns (D, degenerate)."""
    if not value_range > 0:
        return None, True
    return abs(f_first - 2.0 * c_last + c_prev) / value_range, False


# ==================== Wilcoxon ====================


@dataclass
class WilcoxonResult:
    p_value: float
    statistic: float  # W+ = sum of ranks of positive differences (A - B)
    n: int  # non-zero pairs
    method: str  # "exact" | "normal" | "undefined"

    @property
    def undefined(self) -> bool:
        return self.method == "undefined"


def _exact_lower_tail(doubled_ranks: np.ndarray, observed: int) -> float:
    """P(W+ <= observed) under the sign-flip null, on doubled (integer) ranks."""
    counts = np.zeros(int(doubled_ranks.sum()) + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: counts.size - r]
        counts = counts + shifted
    return float(counts[: observed + 1].sum() / counts.sum())


def wilcoxon_one_sided(a: Sequence[float], b: Sequence[float]) -> WilcoxonResult:
    """Signed-rank test of H1: A tends to be smaller than B.

    Zero differences are dropped; tied magnitudes get average ranks. Exact
    null distribution for up to 20 pairs, normal approximation beyond.
    """
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"paired samples differ in length: {a.shape} vs {b.shape}")
    if a.size < MIN_WILCOXON_PAIRS:
        raise ConfigurationError(f"Wilcoxon test needs at least {MIN_WILCOXON_PAIRS} pairs, got {a.size}")
    d = a - b
    d = d[d != 0]
    n = d.size
    if n == 0:
        logger.warning("Wilcoxon test undefined: every pair is tied")
        return WilcoxonResult(p_value=math.nan, statistic=math.nan, n=0, method="undefined")

    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if n <= EXACT_WILCOXON_MAX_N:
        doubled = np.rint(2 * ranks).astype(int)
        observed = int(round(2 * w_plus))
        return WilcoxonResult(_exact_lower_tail(doubled, observed), w_plus, n, "exact")

    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
    z = (w_plus - mean + 0.5) / math.sqrt(var)
    return WilcoxonResult(float(ndtr(z)), w_plus, n, "normal")


# ==================== Reports ====================


@dataclass
class WindowMetrics:
    window_start: int
    variant: str
    seed: int
    all_feature_mse: float
    load_mse_minmax: Optional[float]
    mape_pct: float
    mape_excluded: int
    rmse_physical: Optional[float]
    mae_physical: Optional[float]
    boundary_d: Optional[float]
    degenerate: bool
    crps: Optional[float] = None
    coverage: Optional[float] = None
    mean_width: Optional[float] = None
    load_mae_unit: Optional[float] = None  # point MAE on the training [0, 1] Load scale


METRIC_COLUMNS = [
    "all_feature_mse",
    "load_mse_minmax",
    "mape_pct",
    "rmse_physical",
    "mae_physical",
    "boundary_d",
    "crps",
    "coverage",
    "mean_width",
    "load_mae_unit",
]


@dataclass
class MetricsReport:
    dataset: str
    variant: str
    gap_len: int
    rows: list[WindowMetrics] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.rows])

    def aggregate(self) -> dict:
        """Means over non-degenerate windows; missing metrics are skipped."""
        frame = self.to_frame()
        summary = {
            "dataset": self.dataset,
            "variant": self.variant,
            "gap_len": self.gap_len,
            "n_windows": len(self.rows),
            "n_degenerate": int(frame["degenerate"].sum()) if len(frame) else 0,
        }
        usable = frame[~frame["degenerate"]] if len(frame) else frame
        for column in METRIC_COLUMNS:
            values = pd.to_numeric(usable[column], errors="coerce") if len(usable) else pd.Series(dtype=float)
            summary[column] = float(values.mean()) if values.notna().any() else None
        return summary

    def write(self, directory: Path, stem: str) -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        csv_path = directory / f"{stem}.csv"
        json_path = directory / f"{stem}.json"
        self.to_frame().to_csv(csv_path, index=False)
        json_path.write_text(json.dumps(self.aggregate(), indent=2), encoding="utf-8")
        return csv_path, json_path


def seed_summary(reports: Sequence[MetricsReport]) -> dict:
    """Mean and sample std of each aggregate metric across seeds."""
    aggregates = [r.aggregate() for r in reports]
    summary = {key: aggregates[0][key] for key in ("dataset", "variant", "gap_len")}
    summary["n_seeds"] = len(aggregates)
    summary["n_degenerate"] = sum(a["n_degenerate"] for a in aggregates)
    for column in METRIC_COLUMNS:
        values = np.array([a[column] for a in aggregates if a[column] is not None], dtype=np.float64)
        if values.size == 0:
            summary[f"{column}_mean"] = None
            summary[f"{column}_std"] = None
            continue
        summary[f"{column}_mean"] = float(values.mean())
        summary[f"{column}_std"] = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return summary
