"""
Ablation suites.

    incremental  bridge + daily decoder, then hourly conditioning, the
                 enhanced decoder, an ensemble for CRPS and finally ACI
    backend      deterministic bridge vs DDIM / FM-A / FM-C samplers
    decoder      base vs enhanced hourly decoder
    gap-length   seasonal-naive / JEPA-only / bridge retrained per gap length

Every suite carries a seasonal-naive reference row and summarises win
counts and mean ranks of the point imputers.
"""

import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import pandas as pd

import sys

sys.path.insert(0, str(Path(__file__).parent.parent))
from config import GAP_LENGTHS, RunConfig
from core.metrics import MIN_WILCOXON_PAIRS, MetricsReport, wilcoxon_one_sided
from core.pipeline import Pipeline, evaluate_variant, run_calibration
from core.training import train_all
from data.dataset import PreparedData
from errors import ConfigurationError

logger = logging.getLogger(__name__)

SUITES = ("incremental", "backend", "decoder", "gap-length")
REFERENCE_ROW = "seasonal-naive"


@dataclass
class AblationResult:
    suite: str
    dataset: str
    rows: list[dict]
    windows: pd.DataFrame  # columns: unit, row, score
    summary: list[dict] = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def write(self, directory: Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.windows.to_csv(directory / f"ablation_{self.suite}_windows.csv", index=False)
        path = directory / f"ablation_{self.suite}.json"
        payload = {"suite": self.suite, "dataset": self.dataset, "rows": self.rows, "summary": self.summary}
        payload.update(self.extras)
        path.write_text(json.dumps(payload, indent=2, default=float), encoding="utf-8")
        return path


def rank_summary(scores: pd.DataFrame) -> list[dict]:
    """Win counts and mean ranks of each row across units (lower score wins).

    Tied best scores count as a win for every tied row; ranks are averaged.
    """
    if scores.empty:
        return []
    scores = scores.copy()
    scores["rank"] = scores.groupby("unit")["score"].rank(method="average")
    best = scores.groupby("unit")["score"].transform("min")
    scores["win"] = scores["score"] == best
    table = scores.groupby("row", sort=False).agg(wins=("win", "sum"), mean_rank=("rank", "mean"))
    return [
        {"row": row, "wins": int(r.wins), "mean_rank": float(r.mean_rank)}
        for row, r in table.sort_values("mean_rank").iterrows()
    ]


def _row(label: str, report: MetricsReport, **extra) -> dict:
    agg = report.aggregate()
    row = {
        "row": label,
        "all_feature_mse": agg["all_feature_mse"],
        "load_mse_minmax": agg["load_mse_minmax"],
        "load_mae_unit": agg["load_mae_unit"],
        "rmse_physical": agg["rmse_physical"],
        "mae_physical": agg["mae_physical"],
        "boundary_d": agg["boundary_d"],
        "crps": agg["crps"],
        "n_windows": agg["n_windows"],
        "n_degenerate": agg["n_degenerate"],
    }
    row.update(extra)
    return row


def _window_scores(label: str, report: MetricsReport) -> pd.DataFrame:
    return pd.DataFrame(
        {"unit": [r.window_start for r in report.rows], "row": label, "score": [r.all_feature_mse for r in report.rows]}
    )


def _versus_reference(rows: list[dict], windows: pd.DataFrame) -> None:
    """Attach the one-sided Wilcoxon p-value of each row beating seasonal-naive."""
    wide = windows.pivot(index="unit", columns="row", values="score")
    if REFERENCE_ROW not in wide or len(wide) < MIN_WILCOXON_PAIRS:
        return
    for row in rows:
        if row["row"] == REFERENCE_ROW or row["row"] not in wide:
            continue
        paired = wide[[row["row"], REFERENCE_ROW]].dropna()
        if len(paired) < MIN_WILCOXON_PAIRS:
            continue
        test = wilcoxon_one_sided(paired[row["row"]].to_numpy(), paired[REFERENCE_ROW].to_numpy())
        row["p_vs_naive"] = test.p_value


class _Suite:
    """Collects rows and window scores of one suite run."""

    def __init__(self, name: str, pipeline: Pipeline):
        self.name = name
        self.pipeline = pipeline
        self.rows: list[dict] = []
        self.frames: list[pd.DataFrame] = []

    def add(self, label: str, report: MetricsReport, ranked: bool = True, **extra) -> MetricsReport:
        self.rows.append(_row(label, report, **extra))
        if ranked:
            self.frames.append(_window_scores(label, report))
        return report

    def timed(self, label: str, run: Callable[[], MetricsReport], ranked: bool = True) -> MetricsReport:
        began = time.perf_counter()
        report = run()
        return self.add(label, report, ranked, seconds=time.perf_counter() - began)

    def result(self) -> AblationResult:
        windows = pd.concat(self.frames, ignore_index=True) if self.frames else pd.DataFrame(columns=["unit", "row", "score"])
        _versus_reference(self.rows, windows)
        return AblationResult(
            suite=self.name,
            dataset=self.pipeline.data.name,
            rows=self.rows,
            windows=windows,
            summary=rank_summary(windows),
        )


def incremental_suite(config: RunConfig, data: PreparedData, runs_dir: Optional[Path] = None) -> AblationResult:
    """Rows that each add one component; all share the JEPA and decoder checkpoints."""
    pipeline = Pipeline(config, data, runs_dir)
    train_all(pipeline, decoders=["base", "enhanced"])
    suite = _Suite("incremental", pipeline)
    suite.add(REFERENCE_ROW, evaluate_variant(pipeline, "seasonal-naive"))
    suite.add("bridge+daily-decoder", evaluate_variant(pipeline, "bridge", n_members=0, decoder="daily"))
    suite.add("+hourly-conditioning", evaluate_variant(pipeline, "bridge", n_members=0, decoder="base"))
    suite.add("+enhanced-decoder", evaluate_variant(pipeline, "bridge", n_members=0, decoder="enhanced"))
    ensemble = evaluate_variant(pipeline, "bridge", n_members=config.ensemble_m, decoder="enhanced")
    suite.add(f"+ensemble-{config.ensemble_m}", ensemble, ranked=False)
    aci = run_calibration(pipeline, "online", decoder="enhanced")
    suite.rows.append(
        {
            "row": "+aci",
            "coverage": aci.aci_coverage,
            "width": aci.aci_width,
            "cqr_coverage": aci.cqr_coverage,
            "alpha_T": aci.alpha_T,
        }
    )
    return suite.result()


def backend_suite(config: RunConfig, data: PreparedData, runs_dir: Optional[Path] = None) -> AblationResult:
    """Deterministic bridge against each generative sampler on the same checkpoints."""
    config = replace(config, generative_heads="ddim,fm")
    pipeline = Pipeline(config, data, runs_dir)
    train_all(pipeline)
    suite = _Suite("backend", pipeline)
    suite.add(REFERENCE_ROW, evaluate_variant(pipeline, "seasonal-naive"))
    suite.timed("bridge", lambda: evaluate_variant(pipeline, "bridge", n_members=0))
    for variant, label in (
        ("bridge+ddim", f"ddim-{config.ddim_steps}"),
        ("bridge+fm-a", "fm-a"),
        ("bridge+fm-c", "fm-c"),
    ):
        suite.timed(label, lambda v=variant: evaluate_variant(pipeline, v, n_members=config.ensemble_m))
    return suite.result()


def decoder_suite(config: RunConfig, data: PreparedData, runs_dir: Optional[Path] = None) -> AblationResult:
    pipeline = Pipeline(config, data, runs_dir)
    train_all(pipeline, decoders=["base", "enhanced"])
    suite = _Suite("decoder", pipeline)
    suite.add(REFERENCE_ROW, evaluate_variant(pipeline, "seasonal-naive"))
    for name in ("base", "enhanced"):
        suite.add(f"decoder-{name}", evaluate_variant(pipeline, "bridge", n_members=0, decoder=name))
    return suite.result()


def gap_length_suite(
    config: RunConfig,
    data: PreparedData,
    runs_dir: Optional[Path] = None,
    gap_lengths: tuple = GAP_LENGTHS,
) -> AblationResult:
    """Retrain every stage per gap length; rank variants by mean MSE per length."""
    rows, frames = [], []
    for gap_len in gap_lengths:
        pipeline = Pipeline(replace(config, gap_len=gap_len), data, runs_dir)
        train_all(pipeline)
        for variant in (REFERENCE_ROW, "jepa-only", "bridge"):
            report = evaluate_variant(pipeline, variant, n_members=0)
            rows.append(_row(variant, report, gap_len=gap_len))
            frames.append(pd.DataFrame({"unit": [gap_len], "row": [variant], "score": [rows[-1]["all_feature_mse"]]}))
        logger.info(f"Gap length {gap_len}: done")
    windows = pd.concat(frames, ignore_index=True)
    return AblationResult(
        suite="gap-length",
        dataset=data.name,
        rows=rows,
        windows=windows,
        summary=rank_summary(windows),
    )


SUITE_RUNNERS = {
    "incremental": incremental_suite,
    "backend": backend_suite,
    "decoder": decoder_suite,
    "gap-length": gap_length_suite,
}


def run_suite(suite: str, config: RunConfig, data: PreparedData, runs_dir: Optional[Path] = None) -> AblationResult:
    """Run a named ablation suite.

    Raises:
        ConfigurationError: If the suite name is unknown.
    """
    if suite not in SUITE_RUNNERS:
        raise ConfigurationError(f"unknown ablation suite {suite!r}; choose from {SUITES}")
    logger.info(f"Ablation suite {suite} on {data.name}")
    result = SUITE_RUNNERS[suite](config, data, runs_dir)
    if suite == "backend":
        result.extras["accuracy_diversity"] = accuracy_diversity(result)
    for entry in result.summary:
        logger.info(f"  {entry['row']}: {entry['wins']} wins, mean rank {entry['mean_rank']:.2f}")
    return result


def accuracy_diversity(result: AblationResult) -> Optional[dict]:
    """Deterministic vs FM-A gap MSE with the relative change, from a backend run."""
    by_label = {r["row"]: r for r in result.rows}
    if "bridge" not in by_label or "fm-a" not in by_label:
        return None
    det, fm = by_label["bridge"]["all_feature_mse"], by_label["fm-a"]["all_feature_mse"]
    delta = 100.0 * (fm - det) / det if det > 0 else math.nan
    return {"dataset": result.dataset, "deterministic_mse": det, "fm_a_mse": fm, "delta_pct": delta}
