"""Shared fixtures: a short synthetic series and a run directory of small untrained models."""

import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from config import RunConfig
from core.bridge import BridgeConfig, new_bridge, new_velocity_net, save_bridge
from core.decoder import DecoderConfig, HourlyDecoder, save_decoder
from core.jepa import JepaConfig, JepaModel, save_jepa
from core.pipeline import Pipeline
from data.dataset import prepare_dataset

TINY_REPR = 8

# 500 days, 21-day context, 7-day gap: 69 protocol windows
TINY_SETTINGS = dict(
    dataset="synth:stable-commercial",
    n_days=500,
    context_len=21,
    gap_len=7,
    jepa_d_model=16,
    jepa_heads=2,
    jepa_layers=1,
    jepa_seq_len=14,
    jepa_mask_max=3,
    jepa_epochs=1,
    jepa_steps=2,
    jepa_batch=4,
    decoder_epochs=1,
    decoder_batch=128,
    bridge_d_model=16,
    bridge_heads=2,
    bridge_layers=1,
    bridge_epochs=1,
    bridge_steps=1,
    bridge_batch=2,
    timesteps=20,
    ddim_steps=4,
    fm_steps=2,
    ensemble_m=4,
    s_cal=4,
    s_inf=4,
    workers=2,
)


@pytest.fixture(scope="session")
def tiny_config() -> RunConfig:
    return RunConfig(**TINY_SETTINGS)


@pytest.fixture(scope="session")
def prepared(tiny_config):
    return prepare_dataset(tiny_config)


def write_untrained_checkpoints(pipeline: Pipeline, seed: int = 0) -> None:
    """Save freshly initialised models so inference paths run without training."""
    data, config = pipeline.data, pipeline.config
    rng = np.random.default_rng(seed)
    jepa_config = JepaConfig(
        n_features=data.n_features,
        repr_dim=TINY_REPR,
        encoder_hidden=(16,),
        d_model=8,
        n_heads=2,
        n_layers=1,
        seq_len=14,
        mask_max=3,
        decoder_hidden=(16,),
    )
    save_jepa(pipeline.paths.jepa, JepaModel(jepa_config, rng))
    for name in ("base", "enhanced"):
        decoder_config = DecoderConfig(
            name=name,
            n_features=data.n_features,
            cond_dim=data.cond_dim,
            load_index=data.load_index,
            repr_dim=TINY_REPR,
            proj_dim=8,
            hidden=(16,),
        )
        save_decoder(pipeline.paths.decoder(name), HourlyDecoder(decoder_config, rng), data.cond_names, data.feature_names)
    bridge_config = BridgeConfig(
        context_len=config.context_len,
        gap_len=config.gap_len,
        repr_dim=TINY_REPR,
        d_model=8,
        n_heads=2,
        n_layers=1,
        timesteps=config.timesteps,
        ddim_steps=config.ddim_steps,
        fm_steps=config.fm_steps,
        val_windows=4,
    )
    save_bridge(pipeline.paths.bridge, new_bridge(bridge_config, rng), bridge_config, "bridge")
    save_bridge(pipeline.paths.diffusion, new_velocity_net(bridge_config, rng), bridge_config, "diffusion")
    save_bridge(pipeline.paths.fm, new_velocity_net(bridge_config, rng), bridge_config, "fm")


@pytest.fixture
def untrained_pipeline(tiny_config, prepared, tmp_path) -> Pipeline:
    pipeline = Pipeline(tiny_config, prepared, tmp_path / "runs")
    write_untrained_checkpoints(pipeline)
    return pipeline


@pytest.fixture
def pipeline_factory(prepared, tmp_path):
    """Build a pipeline over the shared series with config overrides and untrained checkpoints."""

    def build(config: RunConfig, **overrides) -> Pipeline:
        pipeline = Pipeline(replace(config, **overrides), prepared, tmp_path / "runs")
        write_untrained_checkpoints(pipeline)
        return pipeline

    return build
