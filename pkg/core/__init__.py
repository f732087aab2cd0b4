"""Core module for gapbridge: models, imputation pipeline, metrics and reporting."""

from core.jepa import JepaConfig, JepaModel, encode, jepa_rollout, predict_masked, train_jepa
from core.bridge import BridgeBundle, BridgeConfig, bridge_predict, perturb_ensemble, train_bridge
from core.decoder import DecoderConfig, HourlyDecoder, decode_hourly, train_decoder
from core.conformal import ACIReport, HoldoutReport, aci_run, cqr_holdout, cqr_quantile
from core.metrics import MetricsReport, WindowMetrics, crps_energy, gap_mse_allfeat, wilcoxon_one_sided
from core.pipeline import Imputer, Pipeline, evaluate_variant, run_calibration, sweep_guidance
from core.training import train_all
from core.ablation import run_suite
from core.reporter import write_report

__all__ = [
    "JepaConfig",
    "JepaModel",
    "encode",
    "jepa_rollout",
    "predict_masked",
    "train_jepa",
    "BridgeBundle",
    "BridgeConfig",
    "bridge_predict",
    "perturb_ensemble",
    "train_bridge",
    "DecoderConfig",
    "HourlyDecoder",
    "decode_hourly",
    "train_decoder",
    "ACIReport",
    "HoldoutReport",
    "aci_run",
    "cqr_holdout",
    "cqr_quantile",
    "MetricsReport",
    "WindowMetrics",
    "crps_energy",
    "gap_mse_allfeat",
    "wilcoxon_one_sided",
    "Imputer",
    "Pipeline",
    "evaluate_variant",
    "run_calibration",
    "sweep_guidance",
    "train_all",
    "run_suite",
    "write_report",
]
