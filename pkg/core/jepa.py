"""
JEPA representation stage.

An MLP encoder maps each day (24 x d) to a 64-dim embedding. A masked
Transformer predictor reconstructs the embeddings of hidden days from the
visible ones, against targets from an EMA copy of the encoder. A variance
hinge and an off-diagonal covariance penalty keep the embeddings spread out.
A small MLP decodes embeddings straight back to days for the JEPA-only path.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

import sys

sys.path.insert(0, str(Path(__file__).parent.parent))
from config import (
    DAILY_DECODER_HIDDEN,
    FEATURE_COLUMNS,
    HOURS_PER_DAY,
    JEPA_ENCODER_HIDDEN,
    REPR_DIM,
    VAR_EPS,
    RunConfig,
)
from data.dataset import PreparedData
from errors import (
    ConfigurationError,
    DimensionError,
    EncodingError,
    PredictionError,
    TrainingError,
)
from numcore import (
    MLP,
    AdamState,
    EarlyStopping,
    Linear,
    Module,
    Parameter,
    Tensor,
    TransformerEncoder,
    cosine_lr,
    load_checkpoint,
    module_step,
    no_grad,
    relu,
    save_checkpoint,
)

logger = logging.getLogger(__name__)

COLLAPSE_STD = 0.1
COSINE_EPS = 1e-8


@dataclass
class JepaConfig:
    n_features: int
    repr_dim: int = REPR_DIM
    encoder_hidden: tuple = JEPA_ENCODER_HIDDEN
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 4
    seq_len: int = 28
    mask_max: int = 7
    decoder_hidden: tuple = DAILY_DECODER_HIDDEN
    ema_decay: float = 0.996
    lambda_var: float = 0.05
    lambda_cov: float = 0.001
    var_eps: float = VAR_EPS
    lr: float = 3e-4
    weight_decay: float = 1e-4
    patience: int = 50
    epochs: int = 60
    steps: int = 20
    batch: int = 16
    decoder_lr: float = 1e-3
    decoder_patience: int = 20
    decoder_epochs: int = 80
    decoder_batch: int = 64

    @classmethod
    def from_run(cls, run: RunConfig, n_features: int) -> "JepaConfig":
        return cls(
            n_features=n_features,
            d_model=run.jepa_d_model,
            n_heads=run.jepa_heads,
            n_layers=run.jepa_layers,
            seq_len=run.jepa_seq_len,
            mask_max=run.jepa_mask_max,
            ema_decay=run.ema_decay,
            lambda_var=run.lambda_var,
            lambda_cov=run.lambda_cov,
            lr=run.jepa_lr,
            weight_decay=run.jepa_weight_decay,
            patience=run.jepa_patience,
            epochs=run.jepa_epochs,
            steps=run.jepa_steps,
            batch=run.jepa_batch,
            decoder_lr=run.decoder_lr,
            decoder_patience=run.decoder_patience,
            decoder_epochs=run.decoder_epochs,
            decoder_batch=run.decoder_batch,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "JepaConfig":
        data = dict(data)
        data["encoder_hidden"] = tuple(data["encoder_hidden"])
        data["decoder_hidden"] = tuple(data["decoder_hidden"])
        return cls(**data)


# ==================== Modules ====================


class DayEncoder(Module):
    """Flattened day (24*d) -> MLP -> repr_dim."""

    def __init__(self, config: JepaConfig, rng: np.random.Generator):
        dims = [HOURS_PER_DAY * config.n_features, *config.encoder_hidden, config.repr_dim]
        self.mlp = MLP(dims, rng)

    def forward(self, days: Tensor) -> Tensor:
        *lead, hours, d = days.shape
        return self.mlp(days.reshape((*lead, hours * d)))


class MaskedPredictor(Module):
    """Transformer over a day sequence with hidden days replaced by a learned token."""

    def __init__(self, config: JepaConfig, rng: np.random.Generator):
        self.in_proj = Linear(config.repr_dim, config.d_model, rng)
        self.mask_token = Parameter(0.02 * rng.standard_normal(config.d_model))
        self.pos = Parameter(0.02 * rng.standard_normal((config.seq_len, config.d_model)))
        self.encoder = TransformerEncoder(config.d_model, config.n_heads, config.n_layers, rng)
        self.out_proj = Linear(config.d_model, config.repr_dim, rng)

    def forward(self, z: Tensor, mask: np.ndarray) -> Tensor:
        """z: (B, L, repr_dim); mask: (B, L) bool, True on hidden days."""
        batch, length, _ = z.shape
        if length > self.pos.shape[0]:
            raise DimensionError(
                f"sequence of {length} days exceeds predictor length {self.pos.shape[0]}"
            )
        hidden = mask[..., None].astype(np.float64)
        h = self.in_proj(z) * (1.0 - hidden) + Tensor(hidden) * self.mask_token
        h = h + self.pos[:length]
        # no query may attend to a hidden day
        attn_mask = np.broadcast_to(mask[:, None, :], (batch, length, length))
        return self.out_proj(self.encoder(h, attn_mask))


class DailyDecoder(Module):
    """repr_dim -> MLP -> 24 x d."""

    def __init__(self, config: JepaConfig, rng: np.random.Generator):
        dims = [config.repr_dim, *config.decoder_hidden, HOURS_PER_DAY * config.n_features]
        self.mlp = MLP(dims, rng)
        self.n_features = config.n_features

    def forward(self, z: Tensor) -> Tensor:
        *lead, _ = z.shape
        return self.mlp(z).reshape((*lead, HOURS_PER_DAY, self.n_features))


class JepaModel(Module):
    def __init__(self, config: JepaConfig, rng: np.random.Generator):
        self.config = config
        self.encoder = DayEncoder(config, rng)
        self.target_encoder = self.encoder.clone().freeze()
        self.predictor = MaskedPredictor(config, rng)
        self.decoder = DailyDecoder(config, rng)


# ==================== Operations ====================


def encode(days: np.ndarray, model: JepaModel, feature_names: Optional[Sequence[str]] = None) -> np.ndarray:
    """Embed normalised days of shape (..., 24, d) to (..., repr_dim).

    Raises:
        EncodingError: If the input holds NaN; names the first bad feature.
    """
    days = np.asarray(days, dtype=np.float64)
    if days.shape[-2:] != (HOURS_PER_DAY, model.config.n_features):
        raise DimensionError(
            f"expected days of shape (..., {HOURS_PER_DAY}, {model.config.n_features}), "
            f"got {days.shape}"
        )
    bad = np.isnan(days).reshape(-1, days.shape[-1]).any(axis=0)
    if bad.any():
        names = feature_names or (FEATURE_COLUMNS if len(FEATURE_COLUMNS) == len(bad) else None)
        j = int(np.flatnonzero(bad)[0])
        raise EncodingError(f"NaN in feature {names[j] if names else j}")
    single = days.ndim == 2
    with no_grad():
        z = model.encoder(Tensor(days[None] if single else days)).data
    return z[0] if single else z


def _check_mask(mask: np.ndarray) -> None:
    if not mask.any(axis=-1).all():
        raise PredictionError("no masked positions to predict")
    if mask.all(axis=-1).any():
        raise PredictionError("every position is masked; nothing to condition on")


def predict_masked(model: JepaModel, z: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Predict the embeddings of the masked days of one sequence.

    Args:
        z: (L, repr_dim) embeddings; values at masked positions are ignored.
        mask: (L,) bool, True on days to predict.

    Returns:
        (n_masked, repr_dim) predictions in day order.
    """
    z = np.asarray(z, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != z.shape[:1]:
        raise DimensionError(f"mask {mask.shape} does not match sequence {z.shape}")
    _check_mask(mask)
    with no_grad():
        out = model.predictor(Tensor(z[None]), mask[None]).data[0]
    return out[mask]


@dataclass
class JepaLossParts:
    cosine: float
    variance: float
    covariance: float
    total: float
    tensor: Optional[Tensor] = field(default=None, repr=False)


def _variance_covariance(z: Tensor, eps: float) -> tuple[Tensor, Tensor]:
    n, p = z.shape
    centred = z - z.mean(axis=0, keepdims=True)
    var = (centred * centred).sum(axis=0) * (1.0 / (n - 1))
    variance = relu(1.0 - (var + eps).sqrt()).sum()
    cov = (centred.transpose((1, 0)) @ centred) * (1.0 / (n - 1))
    off_diag = Tensor(1.0 - np.eye(p))
    covariance = (cov * cov * off_diag).sum() * (1.0 / (p * p))
    return variance, covariance


def jepa_loss(
    predicted: Tensor,
    targets,
    batch_embeddings: Tensor,
    lambda_var: float = 0.05,
    lambda_cov: float = 0.001,
    eps: float = VAR_EPS,
) -> JepaLossParts:
    """Cosine prediction term + variance hinge + off-diagonal covariance.

    Args:
        predicted: (N, p) predictor outputs at masked days.
        targets: (N, p) EMA-target embeddings of the same days (no gradient).
        batch_embeddings: (B, p) online embeddings of the whole batch, B >= 2.
    """
    predicted = predicted if isinstance(predicted, Tensor) else Tensor(predicted)
    batch_embeddings = (
        batch_embeddings if isinstance(batch_embeddings, Tensor) else Tensor(batch_embeddings)
    )
    targets = Tensor(targets.data if isinstance(targets, Tensor) else targets)
    if batch_embeddings.shape[0] < 2:
        raise ConfigurationError("variance and covariance terms need a batch of at least 2")
    if predicted.shape != targets.shape:
        raise DimensionError(f"predicted {predicted.shape} vs targets {targets.shape}")

    dot = (predicted * targets).sum(axis=-1)
    norm_p = (predicted * predicted).sum(axis=-1).sqrt()
    norm_t = (targets * targets).sum(axis=-1).sqrt()
    cosine = (1.0 - dot / (norm_p * norm_t + COSINE_EPS)).mean()
    variance, covariance = _variance_covariance(batch_embeddings, eps)

    total = cosine + lambda_var * variance + lambda_cov * covariance
    return JepaLossParts(
        cosine=float(cosine.data),
        variance=float(variance.data),
        covariance=float(covariance.data),
        total=float(total.data),
        tensor=total,
    )


def ema_update(target: Module, online: Module, decay: float) -> Module:
    """target <- decay * target + (1 - decay) * online, in place."""
    if not 0.0 <= decay <= 1.0:
        raise ConfigurationError(f"EMA decay must lie in [0, 1], got {decay}")
    online_params = online.parameters()
    for name, p in target.named_parameters():
        source = online_params.get(name)
        if source is None or source.shape != p.shape:
            raise DimensionError(f"EMA target parameter {name} has no matching online tensor")
        p.data = decay * p.data + (1.0 - decay) * source.data
    return target


# ==================== Training ====================


def _sample_masks(rng: np.random.Generator, batch: int, length: int, mask_max: int) -> np.ndarray:
    """One contiguous block of 1..mask_max hidden days per sequence."""
    masks = np.zeros((batch, length), dtype=bool)
    longest = min(mask_max, length - 1)
    for b in range(batch):
        k = int(rng.integers(1, longest + 1))
        start = int(rng.integers(0, length - k + 1))
        masks[b, start : start + k] = True
    return masks


def _sample_sequences(rng: np.random.Generator, days: np.ndarray, batch: int, length: int) -> np.ndarray:
    starts = rng.integers(0, len(days) - length + 1, size=batch)
    return np.stack([days[s : s + length] for s in starts])


def _jepa_step_loss(model: JepaModel, seqs: np.ndarray, masks: np.ndarray) -> JepaLossParts:
    config = model.config
    batch, length = masks.shape
    z = model.encoder(Tensor(seqs))
    with no_grad():
        targets = model.target_encoder(Tensor(seqs)).data
    predicted = model.predictor(z, masks)
    idx = np.nonzero(masks)
    return jepa_loss(
        predicted[idx],
        targets[idx],
        z.reshape((batch * length, config.repr_dim)),
        config.lambda_var,
        config.lambda_cov,
        config.var_eps,
    )


@dataclass
class JepaTrainResult:
    model: JepaModel
    history: list[dict]
    initial_val_loss: float
    best_val_loss: float
    embedding_std: float
    collapsed: bool


def embedding_spread(model: JepaModel, days: np.ndarray) -> float:
    """Mean per-dimension std of the embeddings of ``days``."""
    z = encode(days, model)
    return float(np.mean(np.std(z, axis=0, ddof=1)))


def train_jepa(data: PreparedData, config: JepaConfig, seed: int) -> JepaTrainResult:
    """Pre-train encoder and predictor on the training split.

    Returns:
        The early-stopped model with its loss curve and embedding spread.
    """
    init_seq, sample_seq, val_seq = np.random.SeedSequence(seed).spawn(3)
    model = JepaModel(config, np.random.default_rng(init_seq))
    model.decoder.freeze()
    rng = np.random.default_rng(sample_seq)

    train_days = data.train_days
    val_days = data.days[data.n_train :]
    if len(train_days) < config.seq_len:
        raise ConfigurationError(
            f"training split of {len(train_days)} days is shorter than seq_len {config.seq_len}"
        )
    if len(val_days) < config.seq_len:
        logger.warning("Validation split shorter than seq_len; validating on training days")
        val_days = train_days
    val_rng = np.random.default_rng(val_seq)
    val_seqs = _sample_sequences(val_rng, val_days, config.batch, config.seq_len)
    val_masks = _sample_masks(val_rng, config.batch, config.seq_len, config.mask_max)

    def validate() -> float:
        with no_grad():
            return _jepa_step_loss(model, val_seqs, val_masks).total

    initial_val = validate()
    state = AdamState(lr=config.lr, weight_decay=config.weight_decay)
    stopper = EarlyStopping(config.patience)
    total_steps = config.epochs * config.steps
    history = []

    logger.info(
        f"JEPA: {model.encoder.num_parameters() + model.predictor.num_parameters()} "
        f"trainable parameters, initial val loss {initial_val:.4f}"
    )
    for epoch in range(config.epochs):
        sums = np.zeros(4)
        for step in range(config.steps):
            state.lr = cosine_lr(epoch * config.steps + step, total_steps, config.lr, 0.0)
            seqs = _sample_sequences(rng, train_days, config.batch, config.seq_len)
            masks = _sample_masks(rng, config.batch, config.seq_len, config.mask_max)
            parts = _jepa_step_loss(model, seqs, masks)
            if not math.isfinite(parts.total):
                raise TrainingError(f"JEPA loss diverged at epoch {epoch}", stage="jepa")
            parts.tensor.backward()
            module_step(model, state)
            ema_update(model.target_encoder, model.encoder, config.ema_decay)
            sums += (parts.total, parts.cosine, parts.variance, parts.covariance)

        mean = sums / config.steps
        val_loss = validate()
        history.append(
            {
                "epoch": epoch,
                "total": mean[0],
                "cosine": mean[1],
                "variance": mean[2],
                "covariance": mean[3],
                "val_loss": val_loss,
            }
        )
        logger.info(
            f"JEPA epoch {epoch}: total={mean[0]:.4f} cos={mean[1]:.4f} "
            f"var={mean[2]:.4f} cov={mean[3]:.5f} val={val_loss:.4f} lr={state.lr:.2e}"
        )
        stopper.update(val_loss, model, epoch)
        if stopper.should_stop:
            logger.info(f"JEPA early stop at epoch {epoch}")
            break

    stopper.restore(model)
    spread = embedding_spread(model, train_days)
    collapsed = spread < COLLAPSE_STD
    if collapsed:
        logger.warning(f"JEPA embeddings collapsed: mean per-dim std {spread:.4f}")
    return JepaTrainResult(
        model=model,
        history=history,
        initial_val_loss=initial_val,
        best_val_loss=stopper.best_loss,
        embedding_std=spread,
        collapsed=collapsed,
    )


def train_daily_decoder(model: JepaModel, data: PreparedData, seed: int) -> list[dict]:
    """Fit the daily decoder on frozen embeddings of the training split."""
    config = model.config
    rng = np.random.default_rng(seed)
    model.encoder.freeze()
    model.predictor.freeze()
    model.decoder.unfreeze()

    z_train = encode(data.train_days, model)
    z_val = encode(data.days[data.n_train :], model)
    y_train = data.train_days
    y_val = data.days[data.n_train :]

    def loss_on(z: np.ndarray, y: np.ndarray) -> Tensor:
        diff = model.decoder(Tensor(z)) - Tensor(y)
        return (diff * diff).mean()

    state = AdamState(lr=config.decoder_lr)
    stopper = EarlyStopping(config.decoder_patience)
    n_batches = max(1, math.ceil(len(z_train) / config.decoder_batch))
    total_steps = config.decoder_epochs * n_batches
    history = []
    for epoch in range(config.decoder_epochs):
        order = rng.permutation(len(z_train))
        train_loss = 0.0
        for b in range(n_batches):
            state.lr = cosine_lr(epoch * n_batches + b, total_steps, config.decoder_lr, 0.0)
            idx = order[b * config.decoder_batch : (b + 1) * config.decoder_batch]
            loss = loss_on(z_train[idx], y_train[idx])
            loss.backward()
            module_step(model.decoder, state)
            train_loss += float(loss.data) / n_batches
        with no_grad():
            val_loss = float(loss_on(z_val, y_val).data)
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        logger.debug(f"Daily decoder epoch {epoch}: train={train_loss:.5f} val={val_loss:.5f}")
        stopper.update(val_loss, model.decoder, epoch)
        if stopper.should_stop:
            break
    stopper.restore(model.decoder)
    model.decoder.freeze()
    logger.info(f"Daily decoder trained: best val MSE {stopper.best_loss:.5f}")
    return history


def daily_decode(z: np.ndarray, model: JepaModel) -> np.ndarray:
    """(..., repr_dim) embeddings -> (..., 24, d) normalised days."""
    with no_grad():
        return model.decoder(Tensor(np.asarray(z, dtype=np.float64))).data


def jepa_rollout(model: JepaModel, context: np.ndarray, gap_len: int) -> np.ndarray:
    """Fill ``gap_len`` days after ``context`` embeddings block by block.

    Each block of at most mask_max days is predicted from the most recent
    days that fit the predictor's sequence length; predictions become
    context for the next block.
    """
    config = model.config
    known = [row for row in np.asarray(context, dtype=np.float64)]
    out = []
    remaining = gap_len
    while remaining > 0:
        k = min(config.mask_max, remaining, config.seq_len - 1)
        window = np.stack(known[-(config.seq_len - k) :])
        seq = np.concatenate([window, np.zeros((k, config.repr_dim))])
        mask = np.zeros(len(seq), dtype=bool)
        mask[-k:] = True
        block = predict_masked(model, seq, mask)
        out.append(block)
        known.extend(block)
        remaining -= k
    return np.concatenate(out)


# ==================== Persistence ====================


def save_jepa(path: Path, model: JepaModel, extra: Optional[dict] = None) -> Path:
    metadata = {"kind": "jepa", "config": model.config.to_dict(), **(extra or {})}
    return save_checkpoint(path, model.state_dict(), metadata)


def load_jepa(path: Path) -> JepaModel:
    tensors, metadata = load_checkpoint(path)
    if metadata.get("kind") != "jepa":
        raise ConfigurationError(f"{path} is not a JEPA checkpoint")
    model = JepaModel(JepaConfig.from_dict(metadata["config"]), np.random.default_rng(0))
    model.load_state_dict(tensors)
    model.freeze()
    return model
