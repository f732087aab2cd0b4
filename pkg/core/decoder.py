"""
Hourly-conditioned decoder.

Projects a day embedding once, then decodes every hour independently from
[projection, weather_h, calendar_h] through a shared MLP.
"""

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

import sys

sys.path.insert(0, str(Path(__file__).parent.parent))
from config import (
    BASE_DECODER_HIDDEN,
    BASE_DECODER_PROJ_DIM,
    DECODER_HIDDEN,
    DECODER_PROJ_DIM,
    HOURS_PER_DAY,
    REPR_DIM,
    RunConfig,
)
from core.jepa import JepaModel, encode
from data.dataset import PreparedData
from errors import ConfigurationError, DimensionError, TrainingError
from numcore import (
    MLP,
    AdamState,
    EarlyStopping,
    Linear,
    Module,
    Tensor,
    concat,
    cosine_lr,
    expand,
    load_checkpoint,
    module_step,
    no_grad,
    save_checkpoint,
)

logger = logging.getLogger(__name__)


@dataclass
class DecoderConfig:
    name: str
    n_features: int
    cond_dim: int
    load_index: int
    repr_dim: int = REPR_DIM
    proj_dim: int = DECODER_PROJ_DIM
    hidden: tuple = DECODER_HIDDEN
    load_weight: float = 5.0
    noise_sigma: float = 0.15
    noise_p: float = 0.5
    lr: float = 1e-3
    patience: int = 20
    epochs: int = 80
    batch: int = 64

    @classmethod
    def from_run(cls, run: RunConfig, n_features: int, cond_dim: int, load_index: int) -> "DecoderConfig":
        """Enhanced or base decoder as selected by ``run.decoder``."""
        common = dict(
            n_features=n_features,
            cond_dim=cond_dim,
            load_index=load_index,
            lr=run.decoder_lr,
            patience=run.decoder_patience,
            epochs=run.decoder_epochs,
            batch=run.decoder_batch,
        )
        if run.decoder == "base":
            return cls(
                name="base",
                proj_dim=BASE_DECODER_PROJ_DIM,
                hidden=BASE_DECODER_HIDDEN,
                load_weight=1.0,
                noise_sigma=0.0,
                noise_p=0.0,
                **common,
            )
        if run.decoder != "enhanced":
            raise ConfigurationError(f"unknown decoder config {run.decoder!r}")
        return cls(
            name="enhanced",
            load_weight=run.load_weight,
            noise_sigma=run.noise_sigma,
            noise_p=run.noise_p,
            **common,
        )

    def to_dict(self) -> dict:
        return asdict(self)


class HourlyDecoder(Module):
    def __init__(self, config: DecoderConfig, rng: np.random.Generator):
        self.config = config
        self.proj = Linear(config.repr_dim, config.proj_dim, rng)
        dims = [config.proj_dim + config.cond_dim, *config.hidden, config.n_features]
        self.mlp = MLP(dims, rng, norm=True)

    def forward(self, z: Tensor, cond: Tensor) -> Tensor:
        """z: (B, p); cond: (B, 24, c) -> (B, 24, d)."""
        batch = z.shape[0]
        hidden = self.proj(z).reshape((batch, 1, self.config.proj_dim))
        hidden = expand(hidden, (batch, cond.shape[1], self.config.proj_dim))
        return self.mlp(concat([hidden, cond], axis=-1))


def decode_hourly(z: np.ndarray, cond: np.ndarray, decoder: HourlyDecoder) -> np.ndarray:
    """Decode embeddings (..., p) with conditioning (..., 24, c) to (..., 24, d).

    Raises:
        DimensionError: If the conditioning does not have 24 rows per day.
    """
    z = np.asarray(z, dtype=np.float64)
    cond = np.asarray(cond, dtype=np.float64)
    if cond.ndim < 2 or cond.shape[-2] != HOURS_PER_DAY:
        raise DimensionError(f"conditioning needs {HOURS_PER_DAY} rows per day, got {cond.shape}")
    if cond.shape[-1] != decoder.config.cond_dim:
        raise DimensionError(f"conditioning has {cond.shape[-1]} columns, decoder expects {decoder.config.cond_dim}")
    lead = z.shape[:-1]
    if cond.shape[:-2] != lead:
        raise DimensionError(f"embeddings {z.shape} and conditioning {cond.shape} disagree")
    with no_grad():
        out = decoder(
            Tensor(z.reshape(-1, z.shape[-1])),
            Tensor(cond.reshape(-1, HOURS_PER_DAY, cond.shape[-1])),
        ).data
    return out.reshape(*lead, HOURS_PER_DAY, decoder.config.n_features)


def feature_weights(n_features: int, load_index: Optional[int], w_load: float) -> np.ndarray:
    if load_index is None or not 0 <= load_index < n_features:
        raise ConfigurationError(f"Load feature index {load_index} is not among {n_features} features")
    weights = np.ones(n_features)
    weights[load_index] = w_load
    return weights


def load_weighted_mse(pred, target, load_index: Optional[int], w_load: float = 5.0) -> Tensor:
    """sum_f w_f (pred_f - target_f)^2 / sum_f w_f over all feature-hours, w_Load = w_load."""
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    target = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DimensionError(f"pred {pred.shape} vs target {target.shape}")
    weights = feature_weights(pred.shape[-1], load_index, w_load)
    n_rows = pred.size // pred.shape[-1]
    diff = pred - Tensor(target)
    return (diff * diff * Tensor(weights)).sum() * (1.0 / (n_rows * weights.sum()))


def noise_augment(
    z: np.ndarray, sigma: float, p: float, rng: np.random.Generator
) -> tuple[np.ndarray, bool]:
    """With probability p, add N(0, sigma^2) noise to every embedding in the batch.

    Returns:
        (batch, whether noise was applied).
    """
    if rng.random() >= p:
        return z, False
    return z + sigma * rng.standard_normal(z.shape), True


@dataclass
class DecoderTrainResult:
    decoder: HourlyDecoder
    history: list[dict]
    best_val_loss: float


def decoder_examples(data: PreparedData, jepa: JepaModel, days: slice) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(embeddings, conditioning, target days) for a range of days."""
    return encode(data.days[days], jepa), data.cond[days], data.days[days]


def train_decoder(data: PreparedData, jepa: JepaModel, config: DecoderConfig, seed: int) -> DecoderTrainResult:
    """Fit the hourly decoder on frozen JEPA embeddings of the training split."""
    init_seq, sample_seq = np.random.SeedSequence(seed).spawn(2)
    decoder = HourlyDecoder(config, np.random.default_rng(init_seq))
    rng = np.random.default_rng(sample_seq)

    z_train, c_train, y_train = decoder_examples(data, jepa, slice(0, data.n_train))
    z_val, c_val, y_val = decoder_examples(data, jepa, slice(data.n_train, data.n_days))

    def loss_on(z, c, y) -> Tensor:
        return load_weighted_mse(decoder(Tensor(z), Tensor(c)), y, config.load_index, config.load_weight)

    state = AdamState(lr=config.lr)
    stopper = EarlyStopping(config.patience)
    n_batches = max(1, math.ceil(len(z_train) / config.batch))
    total_steps = config.epochs * n_batches
    history = []
    logger.info(f"Decoder ({config.name}): {decoder.num_parameters()} parameters")

    for epoch in range(config.epochs):
        order = rng.permutation(len(z_train))
        train_loss, n_augmented = 0.0, 0
        for b in range(n_batches):
            state.lr = cosine_lr(epoch * n_batches + b, total_steps, config.lr, 0.0)
            idx = order[b * config.batch : (b + 1) * config.batch]
            z_batch, applied = noise_augment(z_train[idx], config.noise_sigma, config.noise_p, rng)
            n_augmented += applied
            loss = loss_on(z_batch, c_train[idx], y_train[idx])
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"decoder loss diverged at epoch {epoch}", stage="decoder")
            loss.backward()
            module_step(decoder, state)
            train_loss += value / n_batches
        with no_grad():
            val_loss = float(loss_on(z_val, c_val, y_val).data)
        history.append(
            {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "augmented": n_augmented}
        )
        logger.info(f"Decoder epoch {epoch}: train={train_loss:.5f} val={val_loss:.5f} lr={state.lr:.2e}")
        stopper.update(val_loss, decoder, epoch)
        if stopper.should_stop:
            logger.info(f"Decoder early stop at epoch {epoch}")
            break
    stopper.restore(decoder)
    decoder.freeze()
    return DecoderTrainResult(decoder=decoder, history=history, best_val_loss=stopper.best_loss)


def save_decoder(path: Path, decoder: HourlyDecoder, cond_names: list[str], feature_names: list[str]) -> Path:
    metadata = {
        "kind": "decoder",
        "config": decoder.config.to_dict(),
        "cond_names": list(cond_names),
        "feature_names": list(feature_names),
    }
    return save_checkpoint(path, decoder.state_dict(), metadata)


def load_decoder(path: Path) -> tuple[HourlyDecoder, dict]:
    tensors, metadata = load_checkpoint(path)
    if metadata.get("kind") != "decoder":
        raise ConfigurationError(f"{path} is not a decoder checkpoint")
    config_dict = dict(metadata["config"])
    config_dict["hidden"] = tuple(config_dict["hidden"])
    decoder = HourlyDecoder(DecoderConfig(**config_dict), np.random.default_rng(0))
    decoder.load_state_dict(tensors)
    decoder.freeze()
    return decoder, metadata
