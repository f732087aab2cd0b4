"""
Configuration management for the gapbridge system.
Environment variables cover paths and global overrides; run files cover
experiment settings. Hyperparameter defaults follow the published table.
"""

import os
from dataclasses import dataclass, fields, asdict
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

from errors import ConfigurationError

# Load environment variables from .env file
load_dotenv()

# ==================== Path Configuration ====================
BASE_DIR = Path(__file__).parent
RUNS_DIR = Path(os.getenv("GAPBRIDGE_RUNS_DIR", str(BASE_DIR / "runs")))
DATABASE_PATH = Path(
    os.getenv("GAPBRIDGE_DATABASE_PATH", str(BASE_DIR / "database" / "results.db"))
)

# ==================== Logging ====================
LOG_LEVEL = os.getenv("GAPBRIDGE_LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("GAPBRIDGE_LOG_FILE", "gapbridge.log")

# Global seed override, applied after run files and --set flags
SEED_OVERRIDE_ENV = "GAPBRIDGE_SEED"

# ==================== Data Protocol ====================
HOURS_PER_DAY = 24
CONTEXT_DAYS = 365
GAP_DAYS = 91
GAP_LENGTHS = (7, 30, 91)
WINDOW_THRESHOLD = 0.85  # start + 365 >= 0.85 * n_days
VAL_FRACTION = 0.15
SEASONAL_LAG_DAYS = 364  # 52 whole weeks
CSV_HEADER = "Date;Heure;Temperature;Humidex;Weather;Wind;Load"
SIGNAL_COLUMNS = ["Load", "Temperature", "Humidex", "Weather", "Wind"]
CALENDAR_COLUMNS = [
    "hour_sin",
    "hour_cos",
    "dow_sin",
    "dow_cos",
    "month_sin",
    "month_cos",
]
FEATURE_COLUMNS = SIGNAL_COLUMNS + CALENDAR_COLUMNS
CONDITIONING_COLUMNS = ["Temperature", "Humidex", "Weather", "Wind"] + CALENDAR_COLUMNS
LOAD_COLUMN = "Load"

# ==================== JEPA Encoder ====================
REPR_DIM = 64
JEPA_ENCODER_HIDDEN = (256, 128)
JEPA_D_MODEL = 128
JEPA_HEADS = 4
JEPA_LAYERS = 4
JEPA_LR = 3e-4
JEPA_WEIGHT_DECAY = 1e-4
JEPA_PATIENCE = 50
EMA_DECAY = 0.996
LAMBDA_VAR = 0.05
LAMBDA_COV = 0.001
VAR_EPS = 1e-4
DAILY_DECODER_HIDDEN = (128, 256)

# ==================== Bridge / Diffusion / Flow Matching ====================
BRIDGE_D_MODEL = 128
BRIDGE_HEADS = 4
BRIDGE_LAYERS = 6
BRIDGE_LR = 2e-4
BRIDGE_PATIENCE = 40
DIFFUSION_TIMESTEPS = 1000
COSINE_SCHEDULE_S = 0.008
DDIM_STEPS = 50
DDIM_ETA = 0.0
MIN_SNR_GAMMA = 5.0
P_UNCOND = 0.15
FM_EULER_STEPS = 5
FM_C_SIGMA = 0.15
GUIDANCE_SCALES = (1.0, 2.0, 3.0, 4.0, 5.0)

# ==================== Hourly Decoder ====================
DECODER_PROJ_DIM = 256
DECODER_HIDDEN = (256, 128)
BASE_DECODER_PROJ_DIM = 128
BASE_DECODER_HIDDEN = (128, 64)
LOAD_WEIGHT = 5.0
NOISE_SIGMA = 0.15
NOISE_PROB = 0.5
DECODER_LR = 1e-3
DECODER_PATIENCE = 20

# ==================== Conformal ====================
ALPHA = 0.05
ACI_GAMMA = 0.01
ACI_CLAMP = (0.001, 0.999)
CAL_FRACTION = 0.5
S_CAL = 50
S_INF = 20
ENSEMBLE_M = 20
ENSEMBLE_SIGMA = 0.15

# ==================== Evaluation ====================
EVAL_SEEDS = (42, 43, 44)
MAPE_EPS = 1e-6

VARIANTS = (
    "seasonal-naive",
    "jepa-only",
    "bridge",
    "bridge+ddim",
    "bridge+fm-a",
    "bridge+fm-c",
)
CONFORMAL_MODES = ("none", "cqr", "aci")


@dataclass
class RunConfig:
    """Resolved settings for one run."""

    # data
    dataset: str = "synth:stable-commercial"
    n_days: int = 730
    gap_len: int = GAP_DAYS
    context_len: int = CONTEXT_DAYS
    seed: int = 42
    data_seed: int = 7  # synthetic generator only; fixed across training seeds
    variant: str = "bridge"
    conformal: str = "none"
    decoder: str = "enhanced"

    # stage 1: JEPA
    jepa_d_model: int = JEPA_D_MODEL
    jepa_heads: int = JEPA_HEADS
    jepa_layers: int = JEPA_LAYERS
    jepa_seq_len: int = 28
    jepa_mask_max: int = 7
    jepa_lr: float = JEPA_LR
    jepa_weight_decay: float = JEPA_WEIGHT_DECAY
    jepa_patience: int = JEPA_PATIENCE
    jepa_epochs: int = 60
    jepa_steps: int = 20
    jepa_batch: int = 16
    ema_decay: float = EMA_DECAY
    lambda_var: float = LAMBDA_VAR
    lambda_cov: float = LAMBDA_COV

    # stage 2: decoder
    decoder_lr: float = DECODER_LR
    decoder_patience: int = DECODER_PATIENCE
    decoder_epochs: int = 80
    decoder_batch: int = 64
    load_weight: float = LOAD_WEIGHT
    noise_sigma: float = NOISE_SIGMA
    noise_p: float = NOISE_PROB

    # stage 3: bridge and generative heads
    bridge_d_model: int = BRIDGE_D_MODEL
    bridge_heads: int = BRIDGE_HEADS
    bridge_layers: int = BRIDGE_LAYERS
    bridge_lr: float = BRIDGE_LR
    bridge_patience: int = BRIDGE_PATIENCE
    bridge_epochs: int = 60
    bridge_steps: int = 8
    bridge_batch: int = 4
    generative_heads: str = "ddim,fm"
    p_uncond: float = P_UNCOND
    timesteps: int = DIFFUSION_TIMESTEPS
    ddim_steps: int = DDIM_STEPS
    ddim_eta: float = DDIM_ETA
    min_snr_gamma: float = MIN_SNR_GAMMA
    fm_steps: int = FM_EULER_STEPS
    fm_c_sigma: float = FM_C_SIGMA
    guidance: float = 1.0

    # ensembles and conformal
    ensemble_m: int = ENSEMBLE_M
    ensemble_sigma: float = ENSEMBLE_SIGMA
    alpha: float = ALPHA
    aci_gamma: float = ACI_GAMMA
    s_cal: int = S_CAL
    s_inf: int = S_INF
    cal_fraction: float = CAL_FRACTION
    conformal_sampler: str = "perturb"
    score_clamp_zero: bool = False
    symmetric_band: bool = False

    # execution
    workers: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    def heads(self) -> list[str]:
        return [h.strip() for h in self.generative_heads.split(",") if h.strip()]


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _cast(key: str, raw: str, kind: type):
    raw = raw.strip()
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigurationError(
            f"{key}: cannot parse {raw!r} as {kind.__name__}"
        ) from None


def _field_types() -> dict[str, type]:
    types = {"int": int, "float": float, "bool": bool, "str": str}
    return {
        f.name: (f.type if isinstance(f.type, type) else types[str(f.type)])
        for f in fields(RunConfig)
    }


def parse_overrides(pairs: list[str]) -> dict[str, str]:
    """Split ``key=value`` strings into a dict."""
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigurationError(f"override {pair!r} is not key=value")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def read_config_file(path: Path) -> dict[str, str]:
    """Read a flat ``key = value`` file. ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def load_run_config(
    path: Optional[Path] = None,
    overrides: Optional[dict[str, str]] = None,
    env: Optional[dict[str, str]] = None,
) -> RunConfig:
    """Resolve a RunConfig from defaults, a run file, overrides and the env seed.

    Args:
        path: Optional run file in key = value format.
        overrides: ``--set`` values, applied after the file.
        env: Environment mapping; defaults to ``os.environ``.

    Returns:
        The resolved RunConfig.

    Raises:
        ConfigurationError: On unknown keys or unparseable values.
    """
    env = os.environ if env is None else env
    raw: dict[str, str] = {}
    if path is not None:
        raw.update(read_config_file(path))
    raw.update(overrides or {})
    if env.get(SEED_OVERRIDE_ENV):
        raw["seed"] = env[SEED_OVERRIDE_ENV]

    types = _field_types()
    unknown = sorted(set(raw) - set(types))
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")

    values = {key: _cast(key, value, types[key]) for key, value in raw.items()}
    return RunConfig(**values)


def validate_config(config: RunConfig) -> list[str]:
    """Validate a run configuration.

    Returns:
        List of problems; empty when the config is usable.
    """
    errors = []

    if config.gap_len < 1 or config.context_len < 1:
        errors.append("gap_len and context_len must be positive")
    if config.variant not in VARIANTS:
        errors.append(f"variant must be one of {VARIANTS}, got {config.variant!r}")
    if config.conformal not in CONFORMAL_MODES:
        errors.append(f"conformal must be one of {CONFORMAL_MODES}")
    if config.decoder not in ("base", "enhanced"):
        errors.append("decoder must be 'base' or 'enhanced'")
    if not 0.0 < config.alpha < 1.0:
        errors.append("alpha must lie in (0, 1)")
    if config.aci_gamma <= 0:
        errors.append("aci_gamma must be positive")
    if not 0.0 < config.cal_fraction < 1.0:
        errors.append("cal_fraction must lie in (0, 1)")
    if config.s_cal < 2 or config.s_inf < 2:
        errors.append("s_cal and s_inf need at least 2 samples")
    if config.ensemble_sigma < 0 or config.noise_sigma < 0:
        errors.append("noise scales must be non-negative")
    if not 0.0 < config.ema_decay < 1.0:
        errors.append("ema_decay must lie in (0, 1)")
    if config.ddim_eta != 0.0:
        errors.append("only deterministic DDIM sampling (ddim_eta = 0) is supported")
    if config.workers < 1:
        errors.append("workers must be >= 1")
    if config.conformal_sampler not in ("perturb", "ddim", "fm-a", "fm-c"):
        errors.append("conformal_sampler must be perturb, ddim, fm-a or fm-c")
    unknown_heads = set(config.heads()) - {"ddim", "fm"}
    if unknown_heads:
        errors.append(f"unknown generative heads: {sorted(unknown_heads)}")
    if config.dataset.startswith("synth:"):
        if config.n_days < 500:
            errors.append("synthetic datasets need n_days >= 500")
    elif not Path(config.dataset).exists():
        errors.append(f"dataset file not found: {config.dataset}")

    return errors
