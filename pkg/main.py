#!/usr/bin/env python3
"""
gapbridge - long-gap imputation for hourly load series

Commands:
    gen-data        write a synthetic preset (or a converted raw export) as CSV
    train           JEPA -> hourly decoder -> bridge (+ DDIM / FM heads)
    impute          fill one window's gap, optionally with members and a band
    calibrate       conformal bands: online ACI vs static CQR, or holdout CQR
    evaluate        per-window and aggregate metrics, optionally over 3 seeds
    sweep-guidance  validation MSE per guidance scale
    ablate          incremental / backend / decoder / gap-length suites
    report          table CSVs and an HTML summary from a results directory
"""
import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path
from typing import Optional

import numpy as np

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent))

from config import (
    DATABASE_PATH,
    EVAL_SEEDS,
    LOG_FILE,
    LOG_LEVEL,
    RUNS_DIR,
    VARIANTS,
    RunConfig,
    load_run_config,
    parse_overrides,
    validate_config,
)
from core.ablation import SUITES, run_suite
from core.pipeline import (
    Imputer,
    Pipeline,
    evaluate_variant,
    imputation_frame,
    results_hash,
    run_calibration,
    sweep_guidance,
)
from core.metrics import seed_summary
from core.reporter import write_band_trace, write_report
from core.training import STAGES, train_all
from data.dataset import prepare_dataset
from data.ingest import write_csv
from data.synth import get_preset, synth_generate
from data.units import convert_raw_export
from database import ResultWriter
from errors import (
    GapBridgeError,
    IngestionError,
    ParseError,
    ProtocolError,
    StageError,
    TrainingError,
)

logger = logging.getLogger(__name__)

EXIT_CODES = (
    (ProtocolError, 2),
    (IngestionError, 2),
    (ParseError, 2),
    (TrainingError, 3),
    (StageError, 3),
    (GapBridgeError, 1),
)


def configure_logging(level: str = LOG_LEVEL, log_file: Optional[str] = LOG_FILE) -> None:
    handlers = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s - %(levelname)s - %(message)s",
        handlers=handlers,
    )


def banner(title: str) -> None:
    logger.info("=" * 50)
    logger.info(title)
    logger.info("=" * 50)


def _write_json(path: Path, payload: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, default=float), encoding="utf-8")
    return path


# ==================== Commands ====================


def cmd_gen_data(preset: str, n_days: int, seed: int, out: Path, from_raw: Optional[Path] = None) -> Path:
    """Write a synthetic preset, or a converted raw export, in the canonical CSV schema."""
    if from_raw is not None:
        records = convert_raw_export(from_raw)
        logger.info(f"Converted {len(records)} hours from {from_raw}")
    else:
        records = synth_generate(get_preset(preset, n_days=n_days), seed)
        logger.info(f"Generated {len(records)} hours of {preset} (seed {seed})")
    path = write_csv(records, out)
    logger.info(f"Wrote {path}")
    return path


def cmd_train(config: RunConfig, runs_dir: Path, stages: Optional[list[str]] = None, force: bool = False) -> Path:
    pipeline = Pipeline(config, runs_dir=runs_dir)
    summary = train_all(pipeline, stages=stages, force=force)
    logger.info(f"Trained: {summary.trained or '-'}; already present: {summary.skipped or '-'}")
    return summary.run_dir


def cmd_impute(
    config: RunConfig,
    runs_dir: Path,
    start: Optional[int] = None,
    members: bool = False,
    out_dir: Optional[Path] = None,
) -> Path:
    """Impute one window; writes the hourly gap (physical units) and, on request, members and band."""
    pipeline = Pipeline(config, runs_dir=runs_dir)
    starts = pipeline.window_starts()
    start = starts[-1] if start is None else start
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, start]))
    imputer = Imputer(pipeline, config.variant)
    imputation = imputer.impute(start, rng, config.ensemble_m if members else 0)
    logger.info(f"Imputed {imputation.gap_len} days ({imputation.gap_len * 24} hours) from day {start}")

    band = None
    if config.conformal != "none":
        history = [s for s in starts if s < start] + [start]
        if config.conformal == "cqr":
            report = run_calibration(pipeline, "holdout", starts=history)
            band = (report.band.lo, report.band.hi)
        else:
            report = run_calibration(pipeline, "online", starts=history)
            tail = report.trace[-imputation.gap_len * 24 :]
            band = (np.array([r["lo"] for r in tail]), np.array([r["hi"] for r in tail]))

    out_dir = Path(out_dir) if out_dir is not None else pipeline.paths.results
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"imputation_{config.variant}_{start}.csv"
    imputation_frame(pipeline.data, imputation, config.context_len, band).to_csv(path, index=False)
    if imputation.members is not None:
        np.savez_compressed(out_dir / f"members_{config.variant}_{start}.npz", members=imputation.members)
    logger.info(f"Wrote {path}")
    return path


def cmd_calibrate(config: RunConfig, runs_dir: Path, db_path: Path, protocol: str = "online") -> dict:
    pipeline = Pipeline(config, runs_dir=runs_dir)
    report = run_calibration(pipeline, protocol)
    out = pipeline.paths.results
    with ResultWriter(db_path) as writer:
        if protocol == "online":
            summary = report.summary()
            payload = {
                "dataset": pipeline.data.name,
                "protocol": protocol,
                "summary": summary,
                "window_coverage": report.window_coverage,
                "bound": asdict(report.bound),
            }
            write_band_trace(out / "band_trace.csv", report.trace)
            writer.add_calibration(
                pipeline.run_hash,
                protocol,
                config.alpha,
                report.aci_coverage,
                report.aci_width,
                report.cqr_coverage,
                report.cqr_width,
                report.alpha_T,
                report.saturated,
            )
        else:
            summary = {
                "coverage": report.coverage,
                "width": report.width,
                "q_hat": report.q_hat,
                "n_cal": report.n_cal,
                "unbounded": report.unbounded,
            }
            payload = {"dataset": pipeline.data.name, "protocol": protocol, "summary": summary}
            writer.add_calibration(pipeline.run_hash, protocol, config.alpha, report.coverage, report.width)
    _write_json(out / f"calibration_{protocol}.json", payload)
    for key, value in summary.items():
        logger.info(f"  {key}: {value}")
    return summary


def cmd_evaluate(
    config: RunConfig,
    runs_dir: Path,
    db_path: Path,
    variants: Optional[list[str]] = None,
    multi_seed: bool = False,
    train: bool = True,
) -> list[dict]:
    """Evaluate variants over every protocol window; with ``multi_seed`` over seeds 42, 43, 44.

    Raises:
        ProtocolError: If the series yields no evaluation window.
    """
    variants = variants or [config.variant]
    seeds = list(EVAL_SEEDS) if multi_seed else [config.seed]
    data = prepare_dataset(config)
    exclude = ("seed", "workers", "variant") if multi_seed else ("workers", "variant")
    out = Path(runs_dir) / f"results-{results_hash(config, data.content_hash, exclude)[:16]}"

    reports: dict[str, list] = {v: [] for v in variants}
    with ResultWriter(db_path) as writer:
        for seed in seeds:
            pipeline = Pipeline(replace(config, seed=seed), data, runs_dir)
            if train and any(v != "seasonal-naive" for v in variants):
                train_all(pipeline)
            writer.record_run(pipeline.run_hash, data.name, seed, config.gap_len, pipeline.config.to_dict())
            for variant in variants:
                report = evaluate_variant(pipeline, variant, seed=seed)
                report.write(out, f"{variant}_seed{seed}")
                writer.add_window_metrics(pipeline.run_hash, report.rows)
                reports[variant].append(report)

    summaries = [seed_summary(reports[v]) for v in variants]
    _write_json(out / "evaluation.json", {"dataset": data.name, "gap_len": config.gap_len, "seeds": seeds, "variants": summaries})
    for s in summaries:
        logger.info(
            f"{s['variant']}: MSE {s['all_feature_mse_mean']:.4f} ± {s['all_feature_mse_std']:.4f} "
            f"over {s['n_seeds']} seed(s)"
        )
    logger.info(f"Results in {out}")
    return summaries


def cmd_sweep_guidance(config: RunConfig, runs_dir: Path) -> dict:
    pipeline = Pipeline(config, runs_dir=runs_dir)
    result = sweep_guidance(pipeline)
    payload = {
        "dataset": pipeline.data.name,
        "mode": result.mode,
        "rows": result.rows,
        "selected": result.selected,
        "relative_spread": result.relative_spread,
    }
    _write_json(pipeline.paths.results / "sweep_guidance.json", payload)
    return payload


def cmd_ablate(config: RunConfig, runs_dir: Path, suite: str) -> Path:
    data = prepare_dataset(config)
    result = run_suite(suite, config, data, runs_dir)
    out = Path(runs_dir) / f"ablate-{results_hash(config, data.content_hash)[:16]}"
    return result.write(out)


def cmd_report(results_dir: Path) -> dict:
    return write_report(results_dir)


# ==================== CLI ====================


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="gapbridge - long-gap imputation for hourly load series")
    parser.add_argument("--config", type=Path, help="Run file with key = value lines")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="Override one setting"
    )
    parser.add_argument("--runs-dir", type=Path, default=RUNS_DIR, help="Checkpoint and results root")
    parser.add_argument("--db", type=Path, default=DATABASE_PATH, help="SQLite result store")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="Write a synthetic or converted CSV")
    gen.add_argument("--preset", default="stable-commercial")
    gen.add_argument("--days", type=int, default=730)
    gen.add_argument("--seed", type=int, default=7)
    gen.add_argument("--from-raw", type=Path, help="Hourly export in metric units to convert")
    gen.add_argument("--out", type=Path, required=True)

    train = sub.add_parser("train", help="Run the training stages")
    train.add_argument("--stages", default=",".join(STAGES), help="Comma-separated subset of stages")
    train.add_argument("--force", action="store_true", help="Retrain stages that already have checkpoints")

    impute = sub.add_parser("impute", help="Impute one window")
    impute.add_argument("--start", type=int, help="Window start day; defaults to the last protocol window")
    impute.add_argument("--members", action="store_true", help="Also write ensemble members")
    impute.add_argument("--out", type=Path)

    calibrate = sub.add_parser("calibrate", help="Conformal calibration")
    calibrate.add_argument("--protocol", choices=("online", "holdout"), default="online")

    evaluate = sub.add_parser("evaluate", help="Evaluate variants")
    evaluate.add_argument("--variants", help=f"Comma-separated subset of {', '.join(VARIANTS)}")
    evaluate.add_argument("--multi-seed", action="store_true", help="Evaluate seeds 42, 43, 44")
    evaluate.add_argument("--no-train", action="store_true", help="Fail instead of training missing stages")

    sub.add_parser("sweep-guidance", help="Guidance-scale sweep")

    ablate = sub.add_parser("ablate", help="Run an ablation suite")
    ablate.add_argument("--suite", choices=SUITES, required=True)

    report = sub.add_parser("report", help="Render tables and HTML")
    report.add_argument("--results", type=Path, help="Results directory; defaults to --runs-dir")
    return parser


def run(args: argparse.Namespace) -> None:
    if args.command == "gen-data":
        cmd_gen_data(args.preset, args.days, args.seed, args.out, args.from_raw)
        return
    if args.command == "report":
        cmd_report(args.results or args.runs_dir)
        return

    config = load_run_config(args.config, parse_overrides(args.overrides))
    errors = validate_config(config)
    if errors:
        for error in errors:
            logger.error(f"Configuration error: {error}")
        raise GapBridgeError("invalid configuration")

    if args.command == "train":
        cmd_train(config, args.runs_dir, [s.strip() for s in args.stages.split(",") if s.strip()], args.force)
    elif args.command == "impute":
        cmd_impute(config, args.runs_dir, args.start, args.members, args.out)
    elif args.command == "calibrate":
        cmd_calibrate(config, args.runs_dir, args.db, args.protocol)
    elif args.command == "evaluate":
        variants = [v.strip() for v in args.variants.split(",")] if args.variants else None
        cmd_evaluate(config, args.runs_dir, args.db, variants, args.multi_seed, not args.no_train)
    elif args.command == "sweep-guidance":
        cmd_sweep_guidance(config, args.runs_dir)
    elif args.command == "ablate":
        cmd_ablate(config, args.runs_dir, args.suite)


def exit_code(error: BaseException) -> int:
    for kind, code in EXIT_CODES:
        if isinstance(error, kind):
            return code
    return 1


def main(argv: Optional[list[str]] = None) -> int:
    """Main entry point with CLI arguments."""
    args = build_parser().parse_args(argv)
    configure_logging()
    banner(f"gapbridge {args.command}")
    began = time.perf_counter()
    try:
        run(args)
    except GapBridgeError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return exit_code(e)
    logger.info(f"{args.command} completed in {time.perf_counter() - began:.1f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
