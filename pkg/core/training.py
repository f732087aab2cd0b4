"""
Four-stage training: JEPA pre-training (with its daily decoder), hourly
decoder on frozen embeddings, then the latent bridge and its generative
heads. Each stage writes its checkpoint into the run directory and records
its loss curve and wall time in the run manifest.
"""

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

import sys

sys.path.insert(0, str(Path(__file__).parent.parent))
from core.bridge import (
    BridgeConfig,
    bridge_dataset,
    save_bridge,
    train_bridge,
    train_diffusion,
    train_fm,
)
from core.decoder import DecoderConfig, save_decoder, train_decoder
from core.jepa import JepaConfig, save_jepa, train_daily_decoder, train_jepa
from core.pipeline import Pipeline, RunManifest
from errors import ConfigurationError, StageError

logger = logging.getLogger(__name__)

STAGES = ("jepa", "decoder", "bridge")


def stage_seeds(seed: int) -> dict[str, int]:
    """Independent integer seeds per stage, derived from the run seed."""
    children = np.random.SeedSequence(seed).spawn(len(STAGES) + 1)
    seeds = {stage: int(child.generate_state(1)[0]) for stage, child in zip(STAGES, children)}
    seeds["daily"] = int(children[-1].generate_state(1)[0])
    return seeds


def train_stage_jepa(pipeline: Pipeline, manifest: RunManifest) -> None:
    config, data = pipeline.config, pipeline.data
    seeds = stage_seeds(config.seed)
    result = train_jepa(data, JepaConfig.from_run(config, data.n_features), seeds["jepa"])
    daily_history = train_daily_decoder(result.model, data, seeds["daily"])
    save_jepa(
        pipeline.paths.jepa,
        result.model,
        {"feature_names": data.feature_names, "embedding_std": result.embedding_std},
    )
    manifest.checkpoints["jepa"] = str(pipeline.paths.jepa)
    manifest.history["jepa"] = {
        "loss": result.history,
        "daily_decoder": daily_history,
        "initial_val_loss": result.initial_val_loss,
        "best_val_loss": result.best_val_loss,
        "embedding_std": result.embedding_std,
        "collapsed": result.collapsed,
    }
    pipeline.attach(jepa=result.model)


def train_stage_decoder(pipeline: Pipeline, manifest: RunManifest, name: Optional[str] = None) -> None:
    """Hourly decoder on frozen JEPA embeddings.

    Raises:
        StageError: If stage 1 has not produced a JEPA checkpoint.
    """
    config, data = pipeline.config, pipeline.data
    if not pipeline.paths.jepa.exists():
        raise StageError("decoder needs a JEPA checkpoint; train the jepa stage first", "decoder")
    name = name or config.decoder
    if name != config.decoder:
        config = replace(config, decoder=name)
    decoder_config = DecoderConfig.from_run(config, data.n_features, data.cond_dim, data.load_index)
    result = train_decoder(data, pipeline.jepa, decoder_config, stage_seeds(config.seed)["decoder"])
    path = pipeline.paths.decoder(name)
    save_decoder(path, result.decoder, data.cond_names, data.feature_names)
    manifest.checkpoints[f"decoder_{name}"] = str(path)
    manifest.history[f"decoder_{name}"] = {"loss": result.history, "best_val_loss": result.best_val_loss}
    pipeline.attach(decoders={name: result.decoder})


def train_stage_bridge(pipeline: Pipeline, manifest: RunManifest, force: bool = False) -> None:
    """Deterministic bridge plus every requested generative head still missing."""
    config, data = pipeline.config, pipeline.data
    if not pipeline.paths.jepa.exists():
        raise StageError("bridge needs a JEPA checkpoint; train the jepa stage first", "bridge")
    bridge_config = BridgeConfig.from_run(config)
    dataset = bridge_dataset(data, pipeline.jepa, bridge_config)
    seeds = np.random.SeedSequence(stage_seeds(config.seed)["bridge"]).spawn(3)
    bridge_seed, ddim_seed, fm_seed = (int(s.generate_state(1)[0]) for s in seeds)

    jobs = [("bridge", pipeline.paths.bridge, train_bridge, bridge_seed)]
    if "ddim" in config.heads():
        jobs.append(("diffusion", pipeline.paths.diffusion, train_diffusion, ddim_seed))
    if "fm" in config.heads():
        jobs.append(("fm", pipeline.paths.fm, train_fm, fm_seed))

    for kind, path, trainer, seed in jobs:
        if path.exists() and not force:
            logger.info(f"Stage bridge/{kind}: checkpoint present, skipping")
            continue
        began = time.perf_counter()
        module, history = trainer(dataset, bridge_config, seed)
        save_bridge(path, module, bridge_config, kind)
        manifest.checkpoints[kind] = str(path)
        manifest.history[kind] = history
        manifest.timings[kind] = time.perf_counter() - began
    pipeline.attach()


def bridge_paths(pipeline: Pipeline) -> list[Path]:
    paths = [pipeline.paths.bridge]
    if "ddim" in pipeline.config.heads():
        paths.append(pipeline.paths.diffusion)
    if "fm" in pipeline.config.heads():
        paths.append(pipeline.paths.fm)
    return paths


@dataclass
class TrainSummary:
    run_dir: Path
    manifest: RunManifest
    trained: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)


def train_all(
    pipeline: Pipeline,
    stages: Optional[Sequence[str]] = None,
    decoders: Optional[Sequence[str]] = None,
    force: bool = False,
) -> TrainSummary:
    """Run the training stages in order, skipping those already checkpointed.

    Args:
        stages: Subset of STAGES; all by default. Order is always enforced.
        decoders: Decoder configs to train in stage 2; the run's by default.
        force: Retrain stages whose checkpoints exist.

    Raises:
        StageError: If a stage's prerequisite checkpoint is missing.
        TrainingError: If a stage diverges.
    """
    stages = list(STAGES) if stages is None else list(stages)
    unknown = set(stages) - set(STAGES)
    if unknown:
        raise ConfigurationError(f"unknown stages {sorted(unknown)}; choose from {STAGES}")
    decoders = [pipeline.config.decoder] if decoders is None else list(decoders)
    manifest = pipeline.manifest()
    summary = TrainSummary(run_dir=pipeline.paths.root, manifest=manifest)

    logger.info(f"Run directory: {pipeline.paths.root}")
    for stage in STAGES:
        if stage not in stages:
            continue
        logger.info(f"----- stage {stage} -----")
        began = time.perf_counter()
        if stage == "jepa":
            if pipeline.paths.jepa.exists() and not force:
                summary.skipped.append(stage)
                continue
            train_stage_jepa(pipeline, manifest)
        elif stage == "decoder":
            todo = [d for d in decoders if force or not pipeline.paths.decoder(d).exists()]
            if not todo:
                summary.skipped.append(stage)
                continue
            for name in todo:
                train_stage_decoder(pipeline, manifest, name)
        else:
            if not force and all(p.exists() for p in bridge_paths(pipeline)):
                summary.skipped.append(stage)
                continue
            train_stage_bridge(pipeline, manifest, force)
        manifest.timings[stage] = time.perf_counter() - began
        manifest.write(pipeline.paths.manifest)
        summary.trained.append(stage)
        logger.info(f"Stage {stage} finished in {manifest.timings[stage]:.1f}s")

    manifest.write(pipeline.paths.manifest)
    return summary
