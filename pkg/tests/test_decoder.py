"""Conditioned hourly decoder."""

from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from core.decoder import (
    DecoderConfig,
    HourlyDecoder,
    decode_hourly,
    feature_weights,
    load_decoder,
    load_weighted_mse,
    noise_augment,
    save_decoder,
    train_decoder,
)
from core.jepa import JepaConfig, JepaModel
from errors import ConfigurationError, DimensionError
from numcore import Tensor, grad_check


@pytest.fixture
def decoder():
    config = DecoderConfig(name="enhanced", n_features=5, cond_dim=3, load_index=0, repr_dim=6, proj_dim=4, hidden=(8,))
    return HourlyDecoder(config, np.random.default_rng(0))


def test_decode_hourly_shapes(decoder):
    rng = np.random.default_rng(1)
    assert decode_hourly(rng.standard_normal((7, 6)), rng.standard_normal((7, 24, 3)), decoder).shape == (7, 24, 5)
    batched = decode_hourly(rng.standard_normal((2, 7, 6)), rng.standard_normal((2, 7, 24, 3)), decoder)
    assert batched.shape == (2, 7, 24, 5)


def test_decode_hourly_matches_per_day(decoder):
    rng = np.random.default_rng(2)
    z, cond = rng.standard_normal((3, 6)), rng.standard_normal((3, 24, 3))
    together = decode_hourly(z, cond, decoder)
    for i in range(3):
        assert_allclose(decode_hourly(z[i : i + 1], cond[i : i + 1], decoder)[0], together[i])


def test_hours_differ_through_conditioning(decoder):
    rng = np.random.default_rng(3)
    out = decode_hourly(rng.standard_normal((1, 6)), rng.standard_normal((1, 24, 3)), decoder)
    assert not np.allclose(out[0, 0], out[0, 12])


@pytest.mark.parametrize(
    "z_shape,cond_shape",
    [((7, 6), (7, 23, 3)), ((7, 6), (7, 24, 2)), ((6, 6), (7, 24, 3))],
)
def test_decode_hourly_rejects_bad_shapes(decoder, z_shape, cond_shape):
    with pytest.raises(DimensionError):
        decode_hourly(np.zeros(z_shape), np.zeros(cond_shape), decoder)


def test_feature_weights():
    assert feature_weights(4, 2, 5.0).tolist() == [1.0, 1.0, 5.0, 1.0]
    with pytest.raises(ConfigurationError):
        feature_weights(4, None, 5.0)
    with pytest.raises(ConfigurationError):
        feature_weights(4, 4, 5.0)


def test_load_weighted_mse_value():
    pred = np.zeros((1, 2, 3))
    target = np.zeros((1, 2, 3))
    target[..., 0] = 1.0  # error only on Load
    loss = load_weighted_mse(pred, target, load_index=0, w_load=5.0)
    assert float(loss.data) == pytest.approx(5.0 / 7.0)
    plain = load_weighted_mse(pred, target, load_index=0, w_load=1.0)
    assert float(plain.data) == pytest.approx(np.mean((pred - target) ** 2))
    with pytest.raises(DimensionError):
        load_weighted_mse(pred, target[..., :2], load_index=0)


def test_load_weighted_mse_gradient(decoder):
    rng = np.random.default_rng(4)
    z = Tensor(rng.standard_normal((2, 6)))
    cond = rng.standard_normal((2, 24, 3))
    target = rng.standard_normal((2, 24, 5))
    w = decoder.proj.weight

    def f():
        return load_weighted_mse(decoder(z, Tensor(cond)), target, 0, 5.0)

    assert grad_check(f, [z, w]) < 1e-4


def test_noise_augment_probability():
    z = np.zeros((4, 6))
    same, applied = noise_augment(z, 0.3, 0.0, np.random.default_rng(0))
    assert not applied and same is z
    noisy, applied = noise_augment(z, 0.3, 1.0, np.random.default_rng(0))
    assert applied and noisy.shape == z.shape and not np.allclose(noisy, 0.0)
    rng = np.random.default_rng(5)
    rate = np.mean([noise_augment(z, 0.3, 0.5, rng)[1] for _ in range(2000)])
    assert rate == pytest.approx(0.5, abs=0.05)


def test_decoder_config_variants(tiny_config):
    enhanced = DecoderConfig.from_run(tiny_config, 11, 10, 0)
    assert enhanced.name == "enhanced"
    assert enhanced.load_weight == tiny_config.load_weight
    assert enhanced.noise_p == tiny_config.noise_p

    base = DecoderConfig.from_run(replace(tiny_config, decoder="base"), 11, 10, 0)
    assert base.name == "base"
    assert (base.load_weight, base.noise_sigma, base.noise_p) == (1.0, 0.0, 0.0)
    assert base.hidden != enhanced.hidden

    with pytest.raises(ConfigurationError):
        DecoderConfig.from_run(replace(tiny_config, decoder="wide"), 11, 10, 0)


def test_checkpoint_keeps_names(decoder, tmp_path):
    path = save_decoder(tmp_path / "decoder_enhanced.ckpt", decoder, ["a", "b", "c"], list("vwxyz"))
    restored, metadata = load_decoder(path)
    assert metadata["cond_names"] == ["a", "b", "c"]
    assert restored.config == decoder.config
    rng = np.random.default_rng(6)
    z, cond = rng.standard_normal((2, 6)), rng.standard_normal((2, 24, 3))
    assert_allclose(decode_hourly(z, cond, restored), decode_hourly(z, cond, decoder))


@pytest.mark.slow
def test_training_on_frozen_embeddings(prepared, tiny_config):
    jepa = JepaModel(
        JepaConfig(n_features=prepared.n_features, repr_dim=8, encoder_hidden=(16,), d_model=8, n_heads=2, n_layers=1, seq_len=14, mask_max=3),
        np.random.default_rng(0),
    )
    config = replace(
        DecoderConfig.from_run(tiny_config, prepared.n_features, prepared.cond_dim, prepared.load_index),
        repr_dim=8,
        proj_dim=8,
        hidden=(16,),
        epochs=2,
    )
    result = train_decoder(prepared, jepa, config, seed=0)
    assert len(result.history) == 2
    assert np.isfinite(result.best_val_loss)
    assert all(not p.requires_grad for _, p in result.decoder.named_parameters())
