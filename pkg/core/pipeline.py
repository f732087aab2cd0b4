"""
Inference pipeline: run directories, checkpoint loading, gap imputation per
variant, per-window evaluation and conformal calibration.

Imputation follows encode -> bridge -> decode:
1. Embed every day of the series with the frozen JEPA encoder
2. Fill the gap embeddings from the context (deterministic, perturbed or sampled)
3. Decode each gap day hour by hour with the weather/calendar conditioning
4. Optionally wrap the Load trajectories in a conformal band
"""

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

import sys

sys.path.insert(0, str(Path(__file__).parent.parent))
from config import RUNS_DIR, RunConfig
from core.bridge import BridgeBundle, BridgeConfig, bridge_dataset, guidance_sweep, load_bridge
from core.conformal import (
    ACIReport,
    HoldoutReport,
    Sampler,
    aci_run,
    cqr_holdout,
    ensemble_quantiles,
)
from core.decoder import HourlyDecoder, decode_hourly, load_decoder
from core.jepa import JepaModel, daily_decode, encode, jepa_rollout, load_jepa
from core.metrics import (
    MetricsReport,
    WindowMetrics,
    boundary_discontinuity,
    coverage_and_width,
    crps_energy,
    gap_mse_allfeat,
    load_mse_minmax,
    mae_from_rmse,
    mape,
    rmse_physical,
)
from data.dataset import PreparedData, prepare_dataset
from data.frames import zscore_invert
from data.windows import seasonal_naive, sliding_windows
from errors import ConfigurationError, ProtocolError, StageError

logger = logging.getLogger(__name__)

# Settings that change how trained models are used, not how they are trained.
# They stay out of the run hash so every variant shares one set of checkpoints.
EVAL_ONLY_KEYS = {
    "variant",
    "conformal",
    "decoder",
    "generative_heads",
    "guidance",
    "ddim_steps",
    "ddim_eta",
    "fm_steps",
    "fm_c_sigma",
    "ensemble_m",
    "ensemble_sigma",
    "alpha",
    "aci_gamma",
    "s_cal",
    "s_inf",
    "cal_fraction",
    "conformal_sampler",
    "score_clamp_zero",
    "symmetric_band",
    "workers",
}

VARIANT_SAMPLERS = {
    "bridge": "perturb",
    "bridge+ddim": "ddim",
    "bridge+fm-a": "fm-a",
    "bridge+fm-c": "fm-c",
}
DAY_DECODERS = ("daily", "base", "enhanced")


def _digest(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()


def manifest_hash(config: RunConfig, content_hash: str) -> str:
    """Hash of the training-relevant settings and the input data."""
    settings = {k: v for k, v in config.to_dict().items() if k not in EVAL_ONLY_KEYS}
    return _digest({"config": settings, "input": content_hash})


def results_hash(config: RunConfig, content_hash: str, exclude: tuple = ("seed", "workers")) -> str:
    """Hash naming an output directory that spans several training runs."""
    settings = {k: v for k, v in config.to_dict().items() if k not in exclude}
    return _digest({"config": settings, "input": content_hash})


@dataclass
class RunPaths:
    root: Path

    @property
    def jepa(self) -> Path:
        return self.root / "jepa.ckpt"

    def decoder(self, name: str) -> Path:
        return self.root / f"decoder_{name}.ckpt"

    @property
    def bridge(self) -> Path:
        return self.root / "bridge.ckpt"

    @property
    def diffusion(self) -> Path:
        return self.root / "diffusion.ckpt"

    @property
    def fm(self) -> Path:
        return self.root / "fm.ckpt"

    @property
    def manifest(self) -> Path:
        return self.root / "manifest.json"

    @property
    def results(self) -> Path:
        return self.root / "results"


@dataclass
class RunManifest:
    """Resolved config, input hash, checkpoints and stage timings of one run."""

    run_hash: str
    content_hash: str
    seed: int
    config: dict
    checkpoints: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    history: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "run_hash": self.run_hash,
            "content_hash": self.content_hash,
            "seed": self.seed,
            "config": self.config,
            "checkpoints": self.checkpoints,
            "timings": self.timings,
            "history": self.history,
        }

    def write(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, default=float), encoding="utf-8")
        return path

    @classmethod
    def read(cls, path: Path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


class Pipeline:
    """Prepared data plus lazily loaded checkpoints of one training run."""

    def __init__(
        self,
        config: RunConfig,
        data: Optional[PreparedData] = None,
        runs_dir: Optional[Path] = None,
    ):
        self.config = config
        self.data = data if data is not None else prepare_dataset(config)
        self.run_hash = manifest_hash(config, self.data.content_hash)
        self.runs_dir = Path(runs_dir) if runs_dir is not None else RUNS_DIR
        self.paths = RunPaths(self.runs_dir / self.run_hash[:16])
        self._jepa: Optional[JepaModel] = None
        self._decoders: dict[str, HourlyDecoder] = {}
        self._bundle: Optional[BridgeBundle] = None
        self._embeddings: Optional[np.ndarray] = None

    def require(self, path: Path, stage: str) -> Path:
        if not path.exists():
            raise StageError(f"checkpoint {path.name} not found in {path.parent}; run train first", stage)
        return path

    def manifest(self) -> RunManifest:
        if self.paths.manifest.exists():
            return RunManifest.read(self.paths.manifest)
        return RunManifest(
            run_hash=self.run_hash,
            content_hash=self.data.content_hash,
            seed=self.config.seed,
            config=self.config.to_dict(),
        )

    def attach(self, jepa: Optional[JepaModel] = None, decoders: Optional[dict] = None) -> None:
        """Use freshly trained models instead of reloading their checkpoints."""
        if jepa is not None:
            self._jepa = jepa
            self._embeddings = None
        self._decoders.update(decoders or {})
        self._bundle = None

    @property
    def jepa(self) -> JepaModel:
        if self._jepa is None:
            self._jepa = load_jepa(self.require(self.paths.jepa, "jepa"))
        return self._jepa

    def decoder(self, name: Optional[str] = None) -> HourlyDecoder:
        name = name or self.config.decoder
        if name not in self._decoders:
            self._decoders[name], _ = load_decoder(self.require(self.paths.decoder(name), "decoder"))
        return self._decoders[name]

    @property
    def bundle(self) -> BridgeBundle:
        if self._bundle is None:
            deterministic, bridge_config, _ = load_bridge(self.require(self.paths.bridge, "bridge"))
            # sampling settings come from the run, architecture from the checkpoint
            bridge_config = replace(
                bridge_config,
                guidance=self.config.guidance,
                ddim_steps=self.config.ddim_steps,
                fm_steps=self.config.fm_steps,
                fm_c_sigma=self.config.fm_c_sigma,
            )
            heads = {}
            for kind, path in (("diffusion", self.paths.diffusion), ("fm", self.paths.fm)):
                if path.exists():
                    heads[kind], _, _ = load_bridge(path)
            self._bundle = BridgeBundle(config=bridge_config, deterministic=deterministic, **heads)
        return self._bundle

    @property
    def embeddings(self) -> np.ndarray:
        """JEPA embeddings of every day of the series."""
        if self._embeddings is None:
            self._embeddings = encode(self.data.days, self.jepa, self.data.feature_names)
        return self._embeddings

    def window_starts(self) -> list[int]:
        return sliding_windows(self.data.n_days, self.config.gap_len, self.config.context_len)


# ==================== Imputation ====================


@dataclass
class Imputation:
    start: int
    variant: str
    gap: np.ndarray  # (G, 24, d) z-scored point imputation
    members: Optional[np.ndarray] = None  # (M, G, 24, d)

    @property
    def gap_len(self) -> int:
        return self.gap.shape[0]


class Imputer:
    """Fills the gap of any evaluation window with one pipeline variant.

    Args:
        pipeline: Loaded run.
        variant: One of config.VARIANTS.
        decoder: "daily" (JEPA daily MLP), "base" or "enhanced" hourly
            decoder; defaults to the run's decoder. Ignored by the
            seasonal-naive and JEPA-only variants.
    """

    def __init__(self, pipeline: Pipeline, variant: str, decoder: Optional[str] = None):
        self.pipeline = pipeline
        self.data = pipeline.data
        self.config = pipeline.config
        self.variant = variant
        self.decoder_name = decoder or self.config.decoder
        if self.decoder_name not in DAY_DECODERS:
            raise ConfigurationError(f"decoder must be one of {DAY_DECODERS}, got {self.decoder_name!r}")
        self.mode = VARIANT_SAMPLERS.get(variant)
        if variant != "seasonal-naive":
            # load everything up front so worker threads only read
            _ = pipeline.embeddings
        if self.mode is not None:
            _ = pipeline.bundle
            if self.decoder_name != "daily":
                self._hourly = pipeline.decoder(self.decoder_name)

    @property
    def supports_ensemble(self) -> bool:
        return self.mode is not None

    def _bounds(self, start: int) -> tuple[int, int]:
        first = start + self.config.context_len
        return first, first + self.config.gap_len

    def _context(self, start: int) -> np.ndarray:
        return self.pipeline.embeddings[start : start + self.config.context_len]

    def decode(self, z: np.ndarray, start: int) -> np.ndarray:
        """Gap embeddings (..., G, p) -> days (..., G, 24, d)."""
        if self.decoder_name == "daily":
            return daily_decode(z, self.pipeline.jepa)
        first, last = self._bounds(start)
        cond = np.broadcast_to(self.data.cond[first:last], (*z.shape[:-1], *self.data.cond.shape[1:]))
        return decode_hourly(z, cond, self._hourly)

    def sample_embeddings(self, start: int, mode: str, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.pipeline.bundle.sample(mode, self._context(start), n, rng, sigma=self.config.ensemble_sigma)

    def members(self, start: int, n: int, rng: np.random.Generator, mode: Optional[str] = None) -> np.ndarray:
        """(n, G, 24, d) decoded ensemble members."""
        mode = mode or self.mode
        if mode is None:
            raise ConfigurationError(f"variant {self.variant!r} has no stochastic sampler")
        return self.decode(self.sample_embeddings(start, mode, n, rng), start)

    def point(self, start: int, rng: np.random.Generator) -> np.ndarray:
        """Point imputation (G, 24, d) of the gap of the window at ``start``."""
        if self.variant == "seasonal-naive":
            window = self.data.window(start, self.config.context_len, self.config.gap_len)
            result = seasonal_naive(window, self.data.days)
            if not result.available:
                raise ProtocolError(f"no seasonal history for the window at day {start}")
            return result.imputed
        if self.variant == "jepa-only":
            z_gap = jepa_rollout(self.pipeline.jepa, self._context(start), self.config.gap_len)
            return daily_decode(z_gap, self.pipeline.jepa)
        if self.mode is None:
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if self.mode == "perturb":
            return self.decode(self.pipeline.bundle.predict(self._context(start)), start)
        # generative variants: a single draw is the point imputation
        return self.decode(self.sample_embeddings(start, self.mode, 1, rng)[0], start)

    def impute(self, start: int, rng: np.random.Generator, n_members: int = 0) -> Imputation:
        gap = self.point(start, rng)
        members = self.members(start, n_members, rng) if n_members > 0 and self.supports_ensemble else None
        return Imputation(start=start, variant=self.variant, gap=gap, members=members)


# ==================== Evaluation ====================


def window_metrics(data: PreparedData, config: RunConfig, imputation: Imputation, seed: int) -> WindowMetrics:
    """Score one imputed window against the held-out truth."""
    first = imputation.start + config.context_len
    last = first + imputation.gap_len
    truth = data.days[first:last]
    pred = imputation.gap
    li = data.load_index

    pred_load = data.load_physical(pred[..., li].reshape(-1))
    truth_load = data.load_physical(truth[..., li].reshape(-1))
    load_mse, degenerate = load_mse_minmax(pred_load, truth_load)
    span = float(truth_load.max() - truth_load.min())
    rmse = rmse_physical(load_mse, span) if load_mse is not None else None
    tail = data.load_physical(data.days[first - 1, -2:, li])
    boundary, _ = boundary_discontinuity(tail[0], tail[1], pred_load[0], span)
    mape_result = mape(pred_load, truth_load)

    y_unit = data.load_unit(truth[..., li].reshape(-1))
    pred_unit = data.load_unit(pred[..., li].reshape(-1))
    row = WindowMetrics(
        window_start=imputation.start,
        variant=imputation.variant,
        seed=seed,
        all_feature_mse=gap_mse_allfeat(pred, truth, data.feature_range),
        load_mse_minmax=load_mse,
        mape_pct=mape_result.value,
        mape_excluded=mape_result.excluded,
        rmse_physical=rmse,
        mae_physical=mae_from_rmse(rmse) if rmse is not None else None,
        boundary_d=boundary,
        degenerate=degenerate,
        load_mae_unit=float(np.mean(np.abs(pred_unit - y_unit))),
    )
    if imputation.members is not None:
        m = imputation.members.shape[0]
        members_unit = data.load_unit(imputation.members[..., li].reshape(m, -1))
        row.crps = float(np.mean(crps_energy(members_unit, y_unit)))
        if m >= 2:
            band = ensemble_quantiles(members_unit, config.alpha)
            row.coverage, row.mean_width = coverage_and_width(band.lo, band.hi, y_unit)
    if degenerate:
        logger.warning(f"Window at day {imputation.start}: constant Load truth, excluded from means")
    return row


def evaluate_variant(
    pipeline: Pipeline,
    variant: str,
    seed: Optional[int] = None,
    n_members: Optional[int] = None,
    decoder: Optional[str] = None,
    starts: Optional[list[int]] = None,
) -> MetricsReport:
    """Impute and score every protocol window of the series.

    Windows run on ``config.workers`` threads; each has its own RNG stream so
    results do not depend on scheduling.

    Raises:
        ProtocolError: If no window can be built.
    """
    config = pipeline.config
    seed = config.seed if seed is None else seed
    starts = pipeline.window_starts() if starts is None else starts
    imputer = Imputer(pipeline, variant, decoder)
    if n_members is None:
        n_members = config.ensemble_m if imputer.supports_ensemble else 0
    streams = np.random.SeedSequence(seed).spawn(len(starts))

    def run(i: int) -> WindowMetrics:
        imputation = imputer.impute(starts[i], np.random.default_rng(streams[i]), n_members)
        return window_metrics(pipeline.data, config, imputation, seed)

    label = variant if decoder is None else f"{variant}/{decoder}"
    began = time.perf_counter()
    rows: list[Optional[WindowMetrics]] = [None] * len(starts)
    with ThreadPoolExecutor(max_workers=max(1, config.workers)) as pool:
        futures = {pool.submit(run, i): i for i in range(len(starts))}
        for future in as_completed(futures):
            rows[futures[future]] = future.result()
    logger.info(f"Evaluated {label} on {len(starts)} windows in {time.perf_counter() - began:.1f}s")
    return MetricsReport(dataset=pipeline.data.name, variant=label, gap_len=config.gap_len, rows=rows)


# ==================== Conformal ====================


def load_truths(pipeline: Pipeline, starts: list[int]) -> list[np.ndarray]:
    """Hourly gap Load of each window on the training [0, 1] scale."""
    data, config = pipeline.data, pipeline.config
    li = data.load_index
    truths = []
    for start in starts:
        first = start + config.context_len
        truths.append(data.load_unit(data.days[first : first + config.gap_len, :, li].reshape(-1)))
    return truths


def load_sampler(pipeline: Pipeline, starts: list[int], mode: Optional[str] = None, decoder: Optional[str] = None) -> Sampler:
    """Sampler drawing decoded Load trajectories on the [0, 1] scale for window i."""
    mode = mode or pipeline.config.conformal_sampler
    imputer = Imputer(pipeline, "bridge", decoder)
    li = pipeline.data.load_index

    def sampler(i: int, n: int, rng: np.random.Generator) -> np.ndarray:
        members = imputer.members(starts[i], n, rng, mode=mode)
        return pipeline.data.load_unit(members[..., li].reshape(n, -1))

    return sampler


def run_calibration(
    pipeline: Pipeline,
    protocol: str = "online",
    starts: Optional[list[int]] = None,
    decoder: Optional[str] = None,
) -> Union[ACIReport, HoldoutReport]:
    """Conformal bands over the protocol windows.

    ``online`` calibrates on the first cal_fraction of windows and runs ACI
    (plus static CQR for comparison) on the rest; ``holdout`` calibrates on
    every window but the last and scores the last.
    """
    config = pipeline.config
    starts = pipeline.window_starts() if starts is None else starts
    sampler = load_sampler(pipeline, starts, decoder=decoder)
    truths = load_truths(pipeline, starts)
    common = dict(
        alpha=config.alpha,
        s_cal=config.s_cal,
        s_inf=config.s_inf,
        seed=config.seed,
        clamp_zero=config.score_clamp_zero,
        symmetric=config.symmetric_band,
    )
    if protocol == "online":
        return aci_run(sampler, truths, gamma=config.aci_gamma, cal_fraction=config.cal_fraction, **common)
    if protocol == "holdout":
        return cqr_holdout(sampler, truths, **common)
    raise ConfigurationError(f"protocol must be 'online' or 'holdout', got {protocol!r}")


# ==================== Guidance ====================


@dataclass
class SweepResult:
    mode: str
    rows: list[dict]  # {"w": scale, "val_mse": mse}
    selected: float
    relative_spread: float  # (worst - best) / best


def sweep_guidance(pipeline: Pipeline, scales: Optional[tuple] = None) -> SweepResult:
    """Validation gap-embedding MSE for each guidance scale; selects the minimum.

    Raises:
        ConfigurationError: For the deterministic bridge, which has nothing to guide.
    """
    mode = VARIANT_SAMPLERS.get(pipeline.config.variant)
    if mode in (None, "perturb"):
        raise ConfigurationError(
            f"variant {pipeline.config.variant!r} has no guided sampler; use bridge+ddim or bridge+fm-*"
        )
    dataset = bridge_dataset(pipeline.data, pipeline.jepa, BridgeConfig.from_run(pipeline.config))
    kwargs = {} if scales is None else {"scales": scales}
    results = guidance_sweep(pipeline.bundle, dataset, mode, pipeline.config.seed, **kwargs)
    rows = [{"w": w, "val_mse": mse} for w, mse in results.items()]
    best = min(results.values())
    selected = min(results, key=results.get)
    spread = (max(results.values()) - best) / best if best > 0 else 0.0
    logger.info(f"Guidance sweep ({mode}): selected w={selected}, spread {spread:.1%}")
    return SweepResult(mode=mode, rows=rows, selected=selected, relative_spread=spread)


# ==================== Output ====================


def imputation_frame(
    data: PreparedData,
    imputation: Imputation,
    context_len: int,
    band: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> pd.DataFrame:
    """Hourly gap rows in physical units, with the Load band when given."""
    first = imputation.start + context_len
    dates = data.dates[first : first + imputation.gap_len]
    values = zscore_invert(imputation.gap, data.norm).reshape(-1, data.n_features)
    frame = pd.DataFrame(values, columns=data.feature_names)
    frame.insert(0, "hour", np.tile(np.arange(imputation.gap.shape[1]), imputation.gap_len))
    frame.insert(0, "date", np.repeat(np.asarray(dates.strftime("%Y-%m-%d")), imputation.gap.shape[1]))
    if band is not None:
        lo, hi = band
        frame["Load_lo"] = data.load_physical(data.load_from_unit(np.asarray(lo)))
        frame["Load_hi"] = data.load_physical(data.load_from_unit(np.asarray(hi)))
    return frame
