"""
Conformal prediction bands over generative ensembles.

Ensemble quantile bands are widened by a calibration quantile of
nonconformity scores (CQR). Adaptive Conformal Inference (ACI) moves the
quantile level online from observed miscoverage, hour by hour.
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

import sys

sys.path.insert(0, str(Path(__file__).parent.parent))
from config import ACI_CLAMP, ACI_GAMMA, ALPHA, CAL_FRACTION, S_CAL, S_INF
from errors import CalibrationError, ProtocolError

logger = logging.getLogger(__name__)

RANK_TOL = 1e-9
IDENTITY_TOL = 1e-12

# sampler(window_index, n_samples, rng) -> (n_samples, H) trajectories
Sampler = Callable[[int, int, np.random.Generator], np.ndarray]


@dataclass
class EnsembleBand:
    lo: np.ndarray
    hi: np.ndarray
    center: np.ndarray  # per-hour median

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo


@dataclass
class PredictionBand:
    lo: np.ndarray
    hi: np.ndarray
    q_hat: float
    alpha: float
    unbounded: bool = False

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    def covers(self, y: np.ndarray) -> np.ndarray:
        return (y >= self.lo) & (y <= self.hi)


def ensemble_quantiles(samples: np.ndarray, alpha: float) -> EnsembleBand:
    """Pointwise alpha/2 and 1 - alpha/2 quantiles across the first axis."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape[0] < 2:
        raise CalibrationError(f"need at least 2 samples for a band, got {samples.shape[0]}")
    lo, mid, hi = np.quantile(samples, [alpha / 2, 0.5, 1 - alpha / 2], axis=0)
    return EnsembleBand(lo=lo, hi=np.maximum(hi, lo), center=mid)


def nonconformity(band: EnsembleBand, y: np.ndarray, clamp_zero: bool = False) -> np.ndarray:
    """R = max(lo - y, y - hi); negative strictly inside unless clamped at zero."""
    scores = np.maximum(band.lo - y, y - band.hi)
    return np.maximum(scores, 0.0) if clamp_zero else scores


def symmetric_scores(band: EnsembleBand, y: np.ndarray) -> np.ndarray:
    """|y - center| for residual bands centred on the ensemble median."""
    return np.abs(y - band.center)


def _rank(n: int, alpha: float) -> int:
    return max(1, math.ceil((n + 1) * (1 - alpha) - RANK_TOL))


def cqr_quantile(scores: Sequence[float], alpha: float) -> float:
    """The ceil((n + 1)(1 - alpha))-th smallest score; +inf if that rank exceeds n.

    Raises:
        CalibrationError: If there are no scores.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.size == 0:
        raise CalibrationError("no calibration scores")
    rank = _rank(scores.size, alpha)
    if rank > scores.size:
        return math.inf
    return float(np.partition(scores, rank - 1)[rank - 1])


class ScorePool:
    """Sorted calibration scores for repeated quantile lookups."""

    def __init__(self, scores: Sequence[float]):
        self.sorted = np.sort(np.asarray(scores, dtype=np.float64).reshape(-1))
        if self.sorted.size == 0:
            raise CalibrationError("no calibration scores")

    def __len__(self) -> int:
        return self.sorted.size

    def quantile(self, alpha: float) -> float:
        rank = _rank(self.sorted.size, alpha)
        return math.inf if rank > self.sorted.size else float(self.sorted[rank - 1])

    @property
    def max(self) -> float:
        return float(self.sorted[-1])


def cqr_band(band: EnsembleBand, q_hat: float, alpha: float = ALPHA) -> PredictionBand:
    """[lo - q_hat, hi + q_hat] per hour."""
    if not math.isfinite(q_hat):
        raise CalibrationError("calibration quantile is unbounded")
    return PredictionBand(lo=band.lo - q_hat, hi=band.hi + q_hat, q_hat=q_hat, alpha=alpha)


def symmetric_band(band: EnsembleBand, q_hat: float, alpha: float = ALPHA) -> PredictionBand:
    """[center - q_hat, center + q_hat] per hour."""
    if not math.isfinite(q_hat):
        raise CalibrationError("calibration quantile is unbounded")
    return PredictionBand(lo=band.center - q_hat, hi=band.center + q_hat, q_hat=q_hat, alpha=alpha)


# ==================== ACI ====================


@dataclass
class ACIState:
    alpha_t: float
    gamma: float = ACI_GAMMA
    clamp: tuple = ACI_CLAMP
    errs: list = field(default_factory=list)
    alphas: list = field(default_factory=list)  # alpha_1 .. alpha_{t+1}
    clamped: bool = False

    def __post_init__(self):
        if not self.alphas:
            self.alphas.append(self.alpha_t)


def aci_update(state: ACIState, err: int, alpha_target: float) -> ACIState:
    """alpha_{t+1} = clamp(alpha_t + gamma (alpha - err_t))."""
    raw = state.alpha_t + state.gamma * (alpha_target - err)
    low, high = state.clamp
    new = min(max(raw, low), high)
    if new != raw:
        state.clamped = True
    state.errs.append(int(err))
    state.alpha_t = new
    state.alphas.append(new)
    return state


@dataclass
class BoundReport:
    T: int
    mean_err: float
    deviation: float  # mean_err - alpha
    identity_rhs: float  # (alpha_1 - alpha_{T+1}) / (gamma T)
    identity_holds: Optional[bool]  # None when clamping occurred
    bound: float  # (1 - 2 eps) / (gamma T)
    within_bound: bool


def coverage_bound_check(
    errs: Sequence[int],
    alphas: Sequence[float],
    gamma: float,
    eps: float,
    alpha_target: float,
    clamped: bool = False,
) -> BoundReport:
    """Check the long-run miscoverage bound of an ACI trace.

    ``alphas`` holds alpha_1 .. alpha_{T+1}. Unclamped traces must satisfy
    (1/T) sum err - alpha == (alpha_1 - alpha_{T+1}) / (gamma T).
    """
    errs = np.asarray(errs, dtype=np.float64)
    T = len(errs)
    if T == 0 or len(alphas) != T + 1:
        raise CalibrationError(f"need T errs and T + 1 alphas, got {T} and {len(alphas)}")
    mean_err = float(errs.mean())
    deviation = mean_err - alpha_target
    rhs = (alphas[0] - alphas[-1]) / (gamma * T)
    bound = (1 - 2 * eps) / (gamma * T)
    holds = None if clamped else abs(deviation - rhs) <= IDENTITY_TOL
    return BoundReport(
        T=T,
        mean_err=mean_err,
        deviation=deviation,
        identity_rhs=rhs,
        identity_holds=holds,
        bound=bound,
        within_bound=abs(deviation) <= bound + IDENTITY_TOL,
    )


@dataclass
class ACIReport:
    """Online-phase results of ACI and of static CQR on the same windows."""

    aci_coverage: float
    aci_width: float
    alpha_T: float
    cqr_coverage: float
    cqr_width: float
    n_cal: int
    n_online: int
    n_scores: int
    saturated: int
    trace: list[dict]
    window_coverage: list[float]
    bound: BoundReport

    def summary(self) -> dict:
        return {
            "cqr_cov": self.cqr_coverage,
            "cqr_width": self.cqr_width,
            "aci_cov": self.aci_coverage,
            "aci_width": self.aci_width,
            "alpha_T": self.alpha_T,
            "n_cal": self.n_cal,
            "n_online": self.n_online,
            "saturated": self.saturated,
        }


def _scores(band: EnsembleBand, y: np.ndarray, symmetric: bool, clamp_zero: bool) -> np.ndarray:
    return symmetric_scores(band, y) if symmetric else nonconformity(band, y, clamp_zero)


def calibration_scores(
    sampler: Sampler,
    truths: Sequence[np.ndarray],
    indices: Sequence[int],
    rngs: Sequence[np.random.Generator],
    n_samples: int,
    alpha: float,
    symmetric: bool = False,
    clamp_zero: bool = False,
) -> np.ndarray:
    scores = []
    for i in indices:
        band = ensemble_quantiles(sampler(i, n_samples, rngs[i]), alpha)
        scores.append(_scores(band, truths[i], symmetric, clamp_zero))
    return np.concatenate(scores)


def aci_run(
    sampler: Sampler,
    truths: Sequence[np.ndarray],
    alpha: float = ALPHA,
    gamma: float = ACI_GAMMA,
    s_cal: int = S_CAL,
    s_inf: int = S_INF,
    cal_fraction: float = CAL_FRACTION,
    seed: int = 0,
    clamp_zero: bool = False,
    symmetric: bool = False,
    clamp: tuple = ACI_CLAMP,
) -> ACIReport:
    """Calibrate on the first windows, then run ACI hour by hour on the rest.

    Args:
        sampler: Draws (n_samples, H) trajectories for window i.
        truths: Per-window (H,) ground truth, in temporal order.

    Raises:
        ProtocolError: If fewer than 2 windows remain for the online phase.
    """
    n = len(truths)
    n_cal = max(1, int(n * cal_fraction))
    n_online = n - n_cal
    if n_online < 2:
        raise ProtocolError(f"{n} windows leave {n_online} for the online phase; need >= 2")
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]

    pool = ScorePool(
        calibration_scores(sampler, truths, range(n_cal), rngs, s_cal, alpha, symmetric, clamp_zero)
    )
    logger.info(f"Calibrated on {n_cal} windows ({len(pool)} scores)")

    def bounded(q: float) -> tuple[float, bool]:
        return (pool.max, True) if math.isinf(q) else (q, False)

    q_static, static_saturated = bounded(pool.quantile(alpha))
    state = ACIState(alpha_t=alpha, gamma=gamma, clamp=clamp)
    trace, window_coverage = [], []
    saturated = int(static_saturated)
    static_hits, static_widths, aci_widths = [], [], []

    step = 0
    for i in range(n_cal, n):
        band = ensemble_quantiles(sampler(i, s_inf, rngs[i]), alpha)
        y = truths[i]
        lo_edge = band.center if symmetric else band.lo
        hi_edge = band.center if symmetric else band.hi

        static_hits.append((y >= lo_edge - q_static) & (y <= hi_edge + q_static))
        static_widths.append(hi_edge - lo_edge + 2 * q_static)

        hits = []
        for h in range(len(y)):
            q, capped = bounded(pool.quantile(state.alpha_t))
            saturated += capped
            lo, hi = lo_edge[h] - q, hi_edge[h] + q
            err = int(not (lo <= y[h] <= hi))
            trace.append(
                {"t": step, "alpha_t": state.alpha_t, "lo": lo, "hi": hi, "y": float(y[h]), "err": err}
            )
            hits.append(1 - err)
            aci_widths.append(hi - lo)
            aci_update(state, err, alpha)
            step += 1
        window_coverage.append(float(np.mean(hits)))

    if saturated:
        logger.warning(f"Calibration quantile unbounded {saturated} times; capped at the largest score")

    bound = coverage_bound_check(state.errs, state.alphas, gamma, clamp[0], alpha, state.clamped)
    return ACIReport(
        aci_coverage=1.0 - float(np.mean(state.errs)),
        aci_width=float(np.mean(aci_widths)),
        alpha_T=state.alpha_t,
        cqr_coverage=float(np.mean(np.concatenate(static_hits))),
        cqr_width=float(np.mean(np.concatenate(static_widths))),
        n_cal=n_cal,
        n_online=n_online,
        n_scores=len(pool),
        saturated=saturated,
        trace=trace,
        window_coverage=window_coverage,
        bound=bound,
    )


@dataclass
class HoldoutReport:
    coverage: float
    width: float
    q_hat: float
    n_cal: int
    unbounded: bool
    band: Optional[PredictionBand] = None


def cqr_holdout(
    sampler: Sampler,
    truths: Sequence[np.ndarray],
    alpha: float = ALPHA,
    s_cal: int = S_CAL,
    s_inf: int = S_INF,
    seed: int = 0,
    clamp_zero: bool = False,
    symmetric: bool = False,
) -> HoldoutReport:
    """Static CQR: every window but the last calibrates, the last is scored."""
    n = len(truths)
    if n < 2:
        raise ProtocolError(f"holdout calibration needs at least 2 windows, got {n}")
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]
    pool = ScorePool(
        calibration_scores(sampler, truths, range(n - 1), rngs, s_cal, alpha, symmetric, clamp_zero)
    )
    q = pool.quantile(alpha)
    unbounded = math.isinf(q)
    if unbounded:
        logger.warning("Holdout calibration quantile unbounded; capped at the largest score")
        q = pool.max
    band = ensemble_quantiles(sampler(n - 1, s_inf, rngs[n - 1]), alpha)
    final = symmetric_band(band, q, alpha) if symmetric else cqr_band(band, q, alpha)
    return HoldoutReport(
        coverage=float(np.mean(final.covers(truths[n - 1]))),
        width=float(np.mean(final.width)),
        q_hat=q,
        n_cal=n - 1,
        unbounded=unbounded,
        band=final,
    )
