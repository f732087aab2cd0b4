"""
Conditional latent bridge over JEPA embeddings.

Four ways to fill the gap embeddings from the context:
    deterministic  masked Transformer regression
    perturb        deterministic prediction + Gaussian noise ensemble
    ddim           v-prediction diffusion, deterministic DDIM sampling
    fm-a / fm-c    flow matching from noise / from the bridge prediction
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

import sys

sys.path.insert(0, str(Path(__file__).parent.parent))
from config import BRIDGE_D_MODEL, GUIDANCE_SCALES, REPR_DIM, RunConfig
from core.backbone import LatentTransformer, VelocityNet
from core.diffusion import DiffusionSchedule, cosine_schedule, ddim_sample, diffusion_loss
from core.flow import fm_loss, fm_sample_euler
from core.jepa import JepaModel, encode
from data.dataset import PreparedData
from errors import ConfigurationError, DimensionError, ProtocolError, TrainingError
from numcore import (
    AdamState,
    EarlyStopping,
    Module,
    Tensor,
    cosine_lr,
    load_checkpoint,
    module_step,
    no_grad,
    save_checkpoint,
)

logger = logging.getLogger(__name__)

VAL_WINDOWS = 16
SAMPLERS = ("perturb", "ddim", "fm-a", "fm-c")


@dataclass
class BridgeConfig:
    context_len: int
    gap_len: int
    repr_dim: int = REPR_DIM
    d_model: int = BRIDGE_D_MODEL
    n_heads: int = 4
    n_layers: int = 6
    lr: float = 2e-4
    weight_decay: float = 1e-4
    patience: int = 40
    epochs: int = 60
    steps: int = 8
    batch: int = 4
    p_uncond: float = 0.15
    timesteps: int = 1000
    ddim_steps: int = 50
    min_snr_gamma: float = 5.0
    fm_steps: int = 5
    fm_c_sigma: float = 0.15
    guidance: float = 1.0
    val_windows: int = VAL_WINDOWS

    @property
    def max_len(self) -> int:
        return self.context_len + self.gap_len

    @classmethod
    def from_run(cls, run: RunConfig) -> "BridgeConfig":
        return cls(
            context_len=run.context_len,
            gap_len=run.gap_len,
            d_model=run.bridge_d_model,
            n_heads=run.bridge_heads,
            n_layers=run.bridge_layers,
            lr=run.bridge_lr,
            weight_decay=run.jepa_weight_decay,
            patience=run.bridge_patience,
            epochs=run.bridge_epochs,
            steps=run.bridge_steps,
            batch=run.bridge_batch,
            p_uncond=run.p_uncond,
            timesteps=run.timesteps,
            ddim_steps=run.ddim_steps,
            min_snr_gamma=run.min_snr_gamma,
            fm_steps=run.fm_steps,
            fm_c_sigma=run.fm_c_sigma,
            guidance=run.guidance,
        )

    def to_dict(self) -> dict:
        return asdict(self)


# ==================== Deterministic bridge ====================


def new_bridge(config: BridgeConfig, rng: np.random.Generator) -> LatentTransformer:
    return LatentTransformer(
        config.repr_dim, config.d_model, config.n_heads, config.n_layers, config.max_len, rng
    )


def new_velocity_net(config: BridgeConfig, rng: np.random.Generator) -> VelocityNet:
    return VelocityNet(
        config.repr_dim, config.d_model, config.n_heads, config.n_layers, config.max_len, rng
    )


def bridge_predict(bridge: LatentTransformer, context: np.ndarray, day_mask: np.ndarray) -> np.ndarray:
    """Deterministic gap embeddings for the masked days.

    Args:
        context: (C, p) context-day embeddings.
        day_mask: (C + G,) bool, True on the final G gap days.

    Returns:
        (G, p) predictions.

    Raises:
        DimensionError: If the mask length disagrees with the context or the
            masked days are not the final block.
    """
    context = np.asarray(context, dtype=np.float64)
    day_mask = np.asarray(day_mask, dtype=bool)
    gap_len = int(day_mask.sum())
    if day_mask.ndim != 1 or len(day_mask) != len(context) + gap_len:
        raise DimensionError(
            f"mask of {len(day_mask)} days does not match {len(context)} context + {gap_len} gap days"
        )
    if gap_len == 0 or not day_mask[len(context) :].all():
        raise DimensionError("gap mask must mark the final block of days")
    with no_grad():
        return bridge(Tensor(context[None]), gap_len).data[0]


def perturb_ensemble(z_hat: np.ndarray, sigma: float, m: int, rng: np.random.Generator) -> np.ndarray:
    """(M, G, p) members z_hat + sigma * eps_m."""
    if sigma < 0:
        raise ConfigurationError(f"perturbation sigma must be non-negative, got {sigma}")
    if m < 1:
        raise ConfigurationError(f"ensemble size must be >= 1, got {m}")
    z_hat = np.asarray(z_hat, dtype=np.float64)
    return z_hat[None] + sigma * rng.standard_normal((m, *z_hat.shape))


# ==================== Training data ====================


@dataclass
class BridgeDataset:
    """Context/gap embedding pairs cut from the training split."""

    embeddings: np.ndarray  # (n_train, p)
    train_starts: np.ndarray
    val_starts: np.ndarray
    context_len: int
    gap_len: int

    def pairs(self, starts: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        c, g = self.context_len, self.gap_len
        ctx = np.stack([self.embeddings[s : s + c] for s in starts])
        gap = np.stack([self.embeddings[s + c : s + c + g] for s in starts])
        return ctx, gap

    @classmethod
    def build(cls, embeddings: np.ndarray, context_len: int, gap_len: int, val_windows: int = VAL_WINDOWS) -> "BridgeDataset":
        n = len(embeddings)
        n_starts = n - context_len - gap_len + 1
        if n_starts < 2:
            raise ProtocolError(
                f"training split of {n} days holds no {context_len}+{gap_len} day window"
            )
        n_val = min(val_windows, max(1, n_starts // 4))
        starts = np.arange(n_starts)
        return cls(
            embeddings=embeddings,
            train_starts=starts[: n_starts - n_val],
            val_starts=starts[n_starts - n_val :],
            context_len=context_len,
            gap_len=gap_len,
        )


def bridge_dataset(data: PreparedData, jepa: JepaModel, config: BridgeConfig) -> BridgeDataset:
    z = encode(data.train_days, jepa)
    return BridgeDataset.build(z, config.context_len, config.gap_len, config.val_windows)


# ==================== Training ====================


def _train_loop(
    module: Module,
    loss_fn: Callable[[np.ndarray, np.random.Generator], Tensor],
    val_fn: Callable[[], float],
    dataset: BridgeDataset,
    config: BridgeConfig,
    rng: np.random.Generator,
    stage: str,
) -> list[dict]:
    state = AdamState(lr=config.lr, weight_decay=config.weight_decay)
    stopper = EarlyStopping(config.patience)
    total_steps = config.epochs * config.steps
    history = [{"epoch": -1, "train_loss": math.nan, "val_loss": val_fn()}]
    logger.info(
        f"{stage}: {module.num_parameters()} parameters, "
        f"{len(dataset.train_starts)} train / {len(dataset.val_starts)} val windows, "
        f"initial val {history[0]['val_loss']:.5f}"
    )

    for epoch in range(config.epochs):
        train_loss = 0.0
        for step in range(config.steps):
            state.lr = cosine_lr(epoch * config.steps + step, total_steps, config.lr, 0.0)
            starts = rng.choice(dataset.train_starts, size=config.batch)
            loss = loss_fn(starts, rng)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"{stage} loss diverged at epoch {epoch}", stage=stage)
            loss.backward()
            module_step(module, state)
            train_loss += value / config.steps
        val_loss = val_fn()
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        logger.info(f"{stage} epoch {epoch}: train={train_loss:.5f} val={val_loss:.5f} lr={state.lr:.2e}")
        stopper.update(val_loss, module, epoch)
        if stopper.should_stop:
            logger.info(f"{stage} early stop at epoch {epoch}")
            break
    stopper.restore(module)
    return history


def bridge_loss(bridge: LatentTransformer, context: np.ndarray, gap: np.ndarray) -> Tensor:
    """Mean squared error between predicted and target gap embeddings."""
    diff = bridge(Tensor(context), gap.shape[-2]) - Tensor(gap)
    return (diff * diff).mean()


def train_bridge(dataset: BridgeDataset, config: BridgeConfig, seed: int) -> tuple[LatentTransformer, list[dict]]:
    """Fit the deterministic bridge with gap-embedding MSE."""
    init_seq, sample_seq = np.random.SeedSequence(seed).spawn(2)
    bridge = new_bridge(config, np.random.default_rng(init_seq))
    val_ctx, val_gap = dataset.pairs(dataset.val_starts)

    def loss_fn(starts, rng):
        ctx, gap = dataset.pairs(starts)
        return bridge_loss(bridge, ctx, gap)

    def val_fn():
        with no_grad():
            pred = bridge(Tensor(val_ctx), config.gap_len).data
        return float(np.mean((pred - val_gap) ** 2))

    history = _train_loop(bridge, loss_fn, val_fn, dataset, config, np.random.default_rng(sample_seq), "bridge")
    return bridge, history


def _generative_val(loss: Callable, dataset: BridgeDataset, seed: int) -> Callable[[], float]:
    val_ctx, val_gap = dataset.pairs(dataset.val_starts)

    def val_fn():
        # fixed noise so epochs are comparable
        with no_grad():
            return float(loss(val_gap, val_ctx, np.random.default_rng(seed)).data)

    return val_fn


def train_diffusion(dataset: BridgeDataset, config: BridgeConfig, seed: int) -> tuple[VelocityNet, list[dict]]:
    """Fit the v-prediction network with Min-SNR weighting and context dropout."""
    init_seq, sample_seq, val_seq = np.random.SeedSequence(seed).spawn(3)
    net = new_velocity_net(config, np.random.default_rng(init_seq))
    schedule = cosine_schedule(config.timesteps)

    def loss(gap, ctx, rng, p_uncond=config.p_uncond):
        return diffusion_loss(net, gap, ctx, schedule, rng, p_uncond, config.min_snr_gamma)

    def loss_fn(starts, rng):
        ctx, gap = dataset.pairs(starts)
        return loss(gap, ctx, rng)

    val_fn = _generative_val(lambda g, c, r: loss(g, c, r, 0.0), dataset, int(val_seq.generate_state(1)[0]))
    history = _train_loop(net, loss_fn, val_fn, dataset, config, np.random.default_rng(sample_seq), "diffusion")
    return net, history


def train_fm(dataset: BridgeDataset, config: BridgeConfig, seed: int) -> tuple[VelocityNet, list[dict]]:
    """Fit the flow-matching velocity field with context dropout."""
    init_seq, sample_seq, val_seq = np.random.SeedSequence(seed).spawn(3)
    net = new_velocity_net(config, np.random.default_rng(init_seq))

    def loss_fn(starts, rng):
        ctx, gap = dataset.pairs(starts)
        return fm_loss(net, gap, ctx, rng, config.p_uncond)

    val_fn = _generative_val(lambda g, c, r: fm_loss(net, g, c, r, 0.0), dataset, int(val_seq.generate_state(1)[0]))
    history = _train_loop(net, loss_fn, val_fn, dataset, config, np.random.default_rng(sample_seq), "fm")
    return net, history


# ==================== Sampling ====================


@dataclass
class BridgeBundle:
    """Trained bridge models and the settings needed to sample from them."""

    config: BridgeConfig
    deterministic: LatentTransformer
    diffusion: Optional[VelocityNet] = None
    fm: Optional[VelocityNet] = None
    schedule: DiffusionSchedule = field(default=None)

    def __post_init__(self):
        if self.schedule is None:
            self.schedule = cosine_schedule(self.config.timesteps)

    def predict(self, context: np.ndarray) -> np.ndarray:
        mask = np.zeros(len(context) + self.config.gap_len, dtype=bool)
        mask[len(context) :] = True
        return bridge_predict(self.deterministic, context, mask)

    def sample(
        self,
        mode: str,
        context: np.ndarray,
        n_samples: int,
        rng: np.random.Generator,
        sigma: float = 0.15,
        guidance: Optional[float] = None,
    ) -> np.ndarray:
        """(n_samples, G, p) gap embeddings from one of the stochastic modes."""
        guidance = self.config.guidance if guidance is None else guidance
        gap_len = self.config.gap_len
        if mode == "perturb":
            return perturb_ensemble(self.predict(context), sigma, n_samples, rng)
        batch_ctx = np.broadcast_to(context, (n_samples, *np.shape(context)))
        if mode == "ddim":
            if self.diffusion is None:
                raise ConfigurationError("no diffusion head was trained")
            return ddim_sample(
                self.diffusion,
                batch_ctx,
                gap_len,
                self.schedule,
                rng,
                steps=self.config.ddim_steps,
                guidance=guidance,
            )
        if mode in ("fm-a", "fm-c"):
            if self.fm is None:
                raise ConfigurationError("no flow-matching head was trained")
            bridge_pred = self.predict(context) if mode == "fm-c" else None
            return fm_sample_euler(
                self.fm,
                batch_ctx,
                gap_len,
                rng,
                n_steps=self.config.fm_steps,
                guidance=guidance,
                init=mode,
                bridge_pred=bridge_pred,
                sigma=self.config.fm_c_sigma,
            )
        raise ConfigurationError(f"unknown sampler {mode!r}; choose from {SAMPLERS}")


def guidance_sweep(
    bundle: BridgeBundle,
    dataset: BridgeDataset,
    mode: str,
    seed: int,
    scales: Sequence[float] = GUIDANCE_SCALES,
) -> dict[float, float]:
    """Validation gap-embedding MSE of one-sample draws at each guidance scale."""
    val_ctx, val_gap = dataset.pairs(dataset.val_starts)
    results = {}
    for w in scales:
        rng = np.random.default_rng(seed)
        errors = [
            np.mean((bundle.sample(mode, ctx, 1, rng, guidance=w)[0] - gap) ** 2)
            for ctx, gap in zip(val_ctx, val_gap)
        ]
        results[float(w)] = float(np.mean(errors))
        logger.info(f"Guidance sweep {mode} w={w}: val MSE {results[float(w)]:.5f}")
    return results


# ==================== Persistence ====================


def save_bridge(path: Path, module: Module, config: BridgeConfig, kind: str) -> Path:
    return save_checkpoint(path, module.state_dict(), {"kind": kind, "config": config.to_dict()})


def load_bridge(path: Path) -> tuple[Module, BridgeConfig, str]:
    tensors, metadata = load_checkpoint(path)
    kind = metadata.get("kind")
    if kind not in ("bridge", "diffusion", "fm"):
        raise ConfigurationError(f"{path} is not a bridge checkpoint")
    config = BridgeConfig(**metadata["config"])
    rng = np.random.default_rng(0)
    module = new_bridge(config, rng) if kind == "bridge" else new_velocity_net(config, rng)
    module.load_state_dict(tensors)
    module.freeze()
    return module, config, kind
