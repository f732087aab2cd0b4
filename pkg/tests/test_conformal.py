"""Ensemble bands, CQR calibration and adaptive conformal inference."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from core.conformal import (
    ACIState,
    EnsembleBand,
    ScorePool,
    aci_run,
    aci_update,
    coverage_bound_check,
    cqr_band,
    cqr_holdout,
    cqr_quantile,
    ensemble_quantiles,
    nonconformity,
    symmetric_band,
    symmetric_scores,
)
from errors import CalibrationError, ProtocolError

HOURS = 24


def noise_truths(n: int, seed: int = 0) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [rng.standard_normal(HOURS) for _ in range(n)]


def noise_sampler(i, n_samples, rng):
    return rng.standard_normal((n_samples, HOURS))


def exact_sampler(truths):
    def sample(i, n_samples, rng):
        return np.tile(truths[i], (n_samples, 1))

    return sample


# ==================== Bands and scores ====================


def test_ensemble_quantiles_order():
    samples = np.random.default_rng(1).standard_normal((200, HOURS))
    band = ensemble_quantiles(samples, 0.1)
    assert np.all(band.lo <= band.center) and np.all(band.center <= band.hi)
    assert_allclose(band.lo, np.quantile(samples, 0.05, axis=0))
    with pytest.raises(CalibrationError):
        ensemble_quantiles(samples[:1], 0.1)


def test_nonconformity_sign():
    band = EnsembleBand(lo=np.array([0.0, 0.0, 0.0]), hi=np.array([2.0, 2.0, 2.0]), center=np.ones(3))
    y = np.array([1.5, -1.0, 3.0])
    assert_allclose(nonconformity(band, y), [-0.5, 1.0, 1.0])
    assert_allclose(nonconformity(band, y, clamp_zero=True), [0.0, 1.0, 1.0])
    assert_allclose(symmetric_scores(band, y), [0.5, 2.0, 2.0])


@pytest.mark.parametrize(
    "alpha,expected",
    [(0.1, 10.0), (0.2, 9.0), (0.5, 6.0)],
)
def test_cqr_quantile_rank(alpha, expected):
    scores = np.arange(10.0, 0.0, -1.0)
    assert cqr_quantile(scores, alpha) == expected


def test_cqr_quantile_exact_product_is_not_rounded_up():
    # (3 + 1) * 0.5 == 2 exactly
    assert cqr_quantile([5.0, 1.0, 3.0], 0.5) == 3.0


def test_cqr_quantile_unbounded_and_empty():
    assert math.isinf(cqr_quantile(np.ones(5), 0.1))
    with pytest.raises(CalibrationError):
        cqr_quantile([], 0.1)


def test_score_pool_matches_quantile():
    scores = np.random.default_rng(2).standard_normal(137)
    pool = ScorePool(scores)
    for alpha in (0.01, 0.05, 0.1, 0.3):
        assert pool.quantile(alpha) == cqr_quantile(scores, alpha)
    assert pool.max == scores.max()
    assert len(pool) == 137


def test_bands_widen_by_quantile():
    band = EnsembleBand(lo=np.zeros(2), hi=np.ones(2), center=np.full(2, 0.5))
    cqr = cqr_band(band, 0.25, 0.1)
    assert_allclose(cqr.lo, -0.25)
    assert_allclose(cqr.width, 1.5)
    sym = symmetric_band(band, 0.25, 0.1)
    assert_allclose(sym.width, 0.5)
    assert cqr.covers(np.array([-0.2, 1.3])).tolist() == [True, False]
    with pytest.raises(CalibrationError):
        cqr_band(band, math.inf)


# ==================== ACI ====================


def test_aci_update_steps():
    state = ACIState(alpha_t=0.1, gamma=0.01)
    aci_update(state, 1, 0.1)
    assert state.alpha_t == pytest.approx(0.1 - 0.009)
    aci_update(state, 0, 0.1)
    assert state.alpha_t == pytest.approx(0.091 + 0.001)
    assert state.errs == [1, 0]
    assert len(state.alphas) == 3
    assert not state.clamped


def test_aci_update_clamps():
    state = ACIState(alpha_t=0.002, gamma=0.5, clamp=(0.001, 0.999))
    aci_update(state, 1, 0.05)
    assert state.alpha_t == 0.001
    assert state.clamped


def test_bound_identity_holds_for_unclamped_trace():
    rng = np.random.default_rng(3)
    state = ACIState(alpha_t=0.1, gamma=0.005)
    for err in (rng.random(200) < 0.12).astype(int):
        aci_update(state, err, 0.1)
    assert not state.clamped
    report = coverage_bound_check(state.errs, state.alphas, 0.005, 0.001, 0.1, state.clamped)
    assert report.T == 200
    assert report.identity_holds
    assert report.deviation == pytest.approx(report.identity_rhs, abs=1e-12)
    assert report.within_bound
    assert report.bound == pytest.approx((1 - 0.002) / (0.005 * 200))


def test_bound_identity_holds_over_ten_thousand_steps():
    rng = np.random.default_rng(13)
    state = ACIState(alpha_t=0.5, gamma=0.001)
    for err in rng.integers(0, 2, 10_000):
        aci_update(state, err, 0.5)
    assert not state.clamped
    report = coverage_bound_check(state.errs, state.alphas, 0.001, 0.001, 0.5)
    assert report.T == 10_000
    assert abs(report.deviation - report.identity_rhs) <= 1e-12
    assert report.identity_holds
    assert report.within_bound


def test_bound_holds_for_clamped_trace():
    state = ACIState(alpha_t=0.5, gamma=0.3)
    for _ in range(4):
        aci_update(state, 0, 0.5)
    assert state.clamped
    assert state.alphas[-1] == 0.999
    report = coverage_bound_check(state.errs, state.alphas, 0.3, 0.001, 0.5, state.clamped)
    assert report.identity_holds is None
    assert report.deviation == pytest.approx(-0.5)
    assert report.bound == pytest.approx(0.998 / 1.2)
    assert report.within_bound


def test_bound_check_skips_identity_when_clamped():
    report = coverage_bound_check([1, 1], [0.1, 0.05, 0.001], 0.1, 0.001, 0.1, clamped=True)
    assert report.identity_holds is None
    with pytest.raises(CalibrationError):
        coverage_bound_check([1, 1], [0.1, 0.05], 0.1, 0.001, 0.1)


def test_aci_run_on_calibrated_noise():
    truths = noise_truths(20)
    report = aci_run(noise_sampler, truths, alpha=0.1, gamma=0.005, s_cal=100, s_inf=100, seed=4)
    assert (report.n_cal, report.n_online) == (10, 10)
    assert len(report.trace) == 10 * HOURS
    assert [row["t"] for row in report.trace[:3]] == [0, 1, 2]
    assert len(report.window_coverage) == 10
    assert 0.6 <= report.aci_coverage <= 1.0
    assert 0.6 <= report.cqr_coverage <= 1.0
    assert report.bound.identity_holds is not False
    last = report.trace[-1]
    assert report.alpha_T == pytest.approx(last["alpha_t"] + 0.005 * (0.1 - last["err"]))
    assert set(report.summary()) == {"cqr_cov", "cqr_width", "aci_cov", "aci_width", "alpha_T", "n_cal", "n_online", "saturated"}


def shifted_sampler(shift_from: int, shift: float):
    """Ensemble centre moves by ``shift`` from window ``shift_from`` on."""

    def sample(i, n_samples, rng):
        return rng.standard_normal((n_samples, HOURS)) + (shift if i >= shift_from else 0.0)

    return sample


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_aci_tracks_target_under_drift_where_static_cqr_does_not(seed):
    truths = noise_truths(80, seed=seed)
    report = aci_run(
        shifted_sampler(40, 1.0),
        truths,
        alpha=0.05,
        gamma=0.005,
        s_cal=200,
        s_inf=200,
        cal_fraction=0.25,
        seed=seed,
    )
    assert (report.n_cal, report.n_online) == (20, 60)
    assert 0.93 <= report.aci_coverage <= 0.97
    assert abs(report.cqr_coverage - 0.95) >= abs(report.aci_coverage - 0.95) + 0.02


def test_aci_run_is_reproducible():
    truths = noise_truths(8, seed=5)
    a = aci_run(noise_sampler, truths, s_cal=10, s_inf=10, seed=6)
    b = aci_run(noise_sampler, truths, s_cal=10, s_inf=10, seed=6)
    assert a.summary() == b.summary()


def test_aci_run_caps_unbounded_quantile():
    truths = noise_truths(4, seed=7)
    # one calibration window gives 24 scores; alpha = 0.01 needs rank 25
    report = aci_run(noise_sampler, truths, alpha=0.01, s_cal=5, s_inf=5, cal_fraction=0.25, seed=8)
    assert report.n_scores == HOURS
    assert report.saturated > 0
    assert all(math.isfinite(row["lo"]) for row in report.trace)


def test_aci_run_needs_online_windows():
    with pytest.raises(ProtocolError):
        aci_run(noise_sampler, noise_truths(2), s_cal=5, s_inf=5)


# ==================== Holdout ====================


def test_holdout_with_exact_sampler_has_zero_width():
    truths = noise_truths(6, seed=9)
    report = cqr_holdout(exact_sampler(truths), truths, alpha=0.1, s_cal=3, s_inf=3)
    assert report.n_cal == 5
    assert report.q_hat == 0.0
    assert report.coverage == 1.0
    assert report.width == 0.0
    assert_allclose(report.band.lo, truths[-1])


def test_holdout_symmetric_mode():
    truths = noise_truths(10, seed=10)
    report = cqr_holdout(noise_sampler, truths, alpha=0.1, s_cal=30, s_inf=30, symmetric=True)
    assert report.q_hat > 0.0
    assert_allclose(report.band.hi - report.band.lo, 2.0 * report.q_hat)
    with pytest.raises(ProtocolError):
        cqr_holdout(noise_sampler, truths[:1])


def test_holdout_coverage_is_valid_on_exchangeable_windows():
    def narrow_sampler(i, n_samples, rng):
        return 0.5 * rng.standard_normal((n_samples, HOURS))

    coverages, n_scores = [], None
    for trial in range(200):
        report = cqr_holdout(narrow_sampler, noise_truths(5, seed=100 + trial), alpha=0.05, s_cal=50, s_inf=50, seed=trial)
        assert not report.unbounded
        coverages.append(report.coverage)
        n_scores = report.n_cal * HOURS
    assert np.mean(coverages) >= 0.95 - 1 / (n_scores + 1) - 0.02
