"""Day encoder, masked predictor, JEPA loss and rollout."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from core.decoder import DecoderConfig, HourlyDecoder, save_decoder
from core.jepa import (
    JepaConfig,
    JepaModel,
    _sample_masks,
    ema_update,
    encode,
    jepa_loss,
    jepa_rollout,
    load_jepa,
    predict_masked,
    save_jepa,
    train_jepa,
)
from errors import ConfigurationError, DimensionError, EncodingError, PredictionError
from numcore import Tensor, grad_check

N_FEATURES = 3


@pytest.fixture
def model():
    config = JepaConfig(
        n_features=N_FEATURES,
        repr_dim=6,
        encoder_hidden=(12,),
        d_model=8,
        n_heads=2,
        n_layers=1,
        seq_len=10,
        mask_max=3,
        decoder_hidden=(12,),
    )
    return JepaModel(config, np.random.default_rng(0))


def test_encode_shapes(model):
    days = np.random.default_rng(1).standard_normal((2, 5, 24, N_FEATURES))
    assert encode(days, model).shape == (2, 5, 6)
    single = encode(days[0, 0], model)
    assert single.shape == (6,)
    np.testing.assert_allclose(single, encode(days, model)[0, 0])


def test_encode_names_nan_feature(model):
    days = np.zeros((4, 24, N_FEATURES))
    days[2, 7, 1] = np.nan
    with pytest.raises(EncodingError, match="Temp"):
        encode(days, model, ["Load", "Temp", "Wind"])


def test_encode_rejects_wrong_day_shape(model):
    with pytest.raises(DimensionError):
        encode(np.zeros((4, 23, N_FEATURES)), model)


def test_target_encoder_starts_as_copy(model):
    days = np.random.default_rng(2).standard_normal((3, 24, N_FEATURES))
    online = model.encoder(Tensor(days)).data
    target = model.target_encoder(Tensor(days)).data
    assert_allclose(online, target)
    assert all(not p.requires_grad for _, p in model.target_encoder.named_parameters())


def test_predict_masked_ignores_hidden_values(model):
    rng = np.random.default_rng(3)
    z = rng.standard_normal((10, 6))
    mask = np.zeros(10, dtype=bool)
    mask[4:7] = True
    out = predict_masked(model, z, mask)
    assert out.shape == (3, 6)
    z_changed = z.copy()
    z_changed[mask] = 1e3
    assert_allclose(predict_masked(model, z_changed, mask), out)


@pytest.mark.parametrize("hidden", [0, 10])
def test_predict_masked_needs_some_hidden_and_some_visible(model, hidden):
    mask = np.zeros(10, dtype=bool)
    mask[:hidden] = True
    with pytest.raises(PredictionError):
        predict_masked(model, np.zeros((10, 6)), mask)


def test_predict_masked_rejects_mismatched_mask(model):
    with pytest.raises(DimensionError):
        predict_masked(model, np.zeros((10, 6)), np.ones(9, dtype=bool))


def test_sampled_masks_are_contiguous_blocks():
    masks = _sample_masks(np.random.default_rng(4), batch=200, length=10, mask_max=3)
    sizes = masks.sum(axis=1)
    assert sizes.min() >= 1 and sizes.max() <= 3
    assert set(sizes.tolist()) == {1, 2, 3}
    for row in masks:
        idx = np.flatnonzero(row)
        assert np.all(np.diff(idx) == 1)


def test_loss_terms_on_collapsed_batch():
    p = 4
    predicted = np.ones((3, p))
    parts = jepa_loss(predicted, predicted.copy(), np.zeros((5, p)), lambda_var=0.05, lambda_cov=0.001, eps=1e-4)
    assert parts.cosine == pytest.approx(0.0, abs=1e-6)
    assert parts.variance == pytest.approx(p * (1.0 - np.sqrt(1e-4)))
    assert parts.covariance == pytest.approx(0.0)
    assert parts.total == pytest.approx(0.05 * parts.variance, abs=1e-6)


def test_loss_variance_hinge_inactive_for_spread_batch():
    batch = 5.0 * np.random.default_rng(5).standard_normal((64, 4))
    parts = jepa_loss(np.ones((2, 4)), -np.ones((2, 4)), batch)
    assert parts.variance == 0.0
    assert parts.cosine == pytest.approx(2.0, abs=1e-6)


def test_loss_needs_two_embeddings():
    with pytest.raises(ConfigurationError):
        jepa_loss(np.ones((1, 4)), np.ones((1, 4)), np.ones((1, 4)))


def test_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(6)
    predicted = Tensor(rng.standard_normal((3, 4)))
    targets = rng.standard_normal((3, 4))
    batch = Tensor(0.3 * rng.standard_normal((6, 4)))

    def f():
        return jepa_loss(predicted, targets, batch, lambda_var=0.5, lambda_cov=0.1).tensor

    assert grad_check(f, [predicted, batch]) < 1e-5


def test_ema_update_moves_target(model):
    online, target = model.encoder, model.target_encoder
    for _, p in online.named_parameters():
        p.data = p.data + 1.0
    before = {n: p.data.copy() for n, p in target.named_parameters()}
    ema_update(target, online, decay=0.75)
    for name, p in target.named_parameters():
        assert_allclose(p.data, before[name] + 0.25)
    with pytest.raises(ConfigurationError):
        ema_update(target, online, decay=1.5)


def test_rollout_fills_whole_gap(model):
    context = np.random.default_rng(7).standard_normal((12, 6))
    gap = jepa_rollout(model, context, gap_len=7)
    assert gap.shape == (7, 6)
    assert_allclose(jepa_rollout(model, context, gap_len=7), gap)


def test_checkpoint_restores_encoder(model, tmp_path):
    days = np.random.default_rng(8).standard_normal((3, 24, N_FEATURES))
    path = save_jepa(tmp_path / "jepa.ckpt", model)
    assert_allclose(encode(days, load_jepa(path)), encode(days, model))

    decoder = HourlyDecoder(DecoderConfig(name="base", n_features=3, cond_dim=2, load_index=0), np.random.default_rng(0))
    other = save_decoder(tmp_path / "decoder.ckpt", decoder, ["a", "b"], ["x", "y", "z"])
    with pytest.raises(ConfigurationError):
        load_jepa(other)


@pytest.mark.slow
def test_training_produces_finite_history(prepared, tiny_config):
    config = JepaConfig.from_run(tiny_config, prepared.n_features)
    result = train_jepa(prepared, config, seed=1)
    assert len(result.history) == tiny_config.jepa_epochs
    assert np.isfinite(result.best_val_loss)
    assert result.embedding_std > 0.0
    z = encode(prepared.days[:5], result.model)
    assert z.shape == (5, config.repr_dim)
