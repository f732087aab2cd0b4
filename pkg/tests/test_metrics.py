"""Point, probabilistic and paired-test metrics."""

import itertools
import json
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import ndtr
from scipy.stats import rankdata

from core.metrics import (
    MetricsReport,
    WindowMetrics,
    boundary_discontinuity,
    coverage_and_width,
    crps_energy,
    crps_integral_oracle,
    gap_mse_allfeat,
    load_mse_minmax,
    mae_from_rmse,
    mape,
    rmse_physical,
    seed_summary,
    wilcoxon_one_sided,
)
from data.frames import FeatureRange
from errors import ConfigurationError, DimensionError


def sign_flip_p(a, b) -> float:
    """P(W+ <= observed) by enumerating every sign assignment."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    d = d[d != 0]
    ranks = rankdata(np.abs(d))
    observed = ranks[d > 0].sum()
    hits = total = 0
    for signs in itertools.product((0, 1), repeat=d.size):
        total += 1
        hits += ranks[np.array(signs, dtype=bool)].sum() <= observed + 1e-9
    return hits / total


def row(start, degenerate=False, **values):
    base = dict(
        window_start=start,
        variant="full",
        seed=42,
        all_feature_mse=0.1,
        load_mse_minmax=0.2,
        mape_pct=5.0,
        mape_excluded=0,
        rmse_physical=1.0,
        mae_physical=0.8,
        boundary_d=0.05,
        degenerate=degenerate,
    )
    base.update(values)
    return WindowMetrics(**base)


# ==================== Point metrics ====================


def test_gap_mse_with_feature_range():
    pred = np.array([[0.0, 10.0], [2.0, 20.0]])
    truth = np.array([[1.0, 10.0], [2.0, 30.0]])
    assert gap_mse_allfeat(pred, truth) == pytest.approx((1.0 + 100.0) / 4)
    scaled = FeatureRange(low=np.array([0.0, 10.0]), high=np.array([2.0, 30.0]))
    assert gap_mse_allfeat(pred, truth, scaled) == pytest.approx((0.25 + 0.25) / 4)
    with pytest.raises(DimensionError):
        gap_mse_allfeat(pred, truth[:1])


def test_load_mse_minmax_flags_constant_truth():
    assert load_mse_minmax(np.array([1.0, 2.0]), np.array([3.0, 3.0])) == (None, True)
    value, degenerate = load_mse_minmax(np.array([2.0, 6.0]), np.array([2.0, 4.0]))
    assert not degenerate
    assert value == pytest.approx(0.5)


def test_mape_skips_zero_truth():
    result = mape(np.array([1.0, 3.0, 2.0]), np.array([0.0, 2.0, 4.0]))
    assert result.excluded == 1
    assert result.value == pytest.approx(50.0)
    empty = mape(np.ones(3), np.zeros(3))
    assert math.isnan(empty.value) and empty.excluded == 3


def test_physical_errors():
    assert rmse_physical(0.04, 10.0) == pytest.approx(2.0)
    assert mae_from_rmse(2.0) == pytest.approx(2.0 * math.sqrt(2.0 / math.pi))


def test_boundary_discontinuity():
    assert boundary_discontinuity(1.0, 2.0, 3.0, 2.0) == (0.0, False)
    assert boundary_discontinuity(1.0, 2.0, 5.0, 2.0) == (1.0, False)
    assert boundary_discontinuity(1.0, 2.0, 5.0, 0.0) == (None, True)


def test_coverage_and_width():
    cov, width = coverage_and_width(np.zeros(4), np.ones(4), np.array([0.5, 1.0, 1.5, -0.1]))
    assert cov == 0.5 and width == 1.0
    with pytest.raises(DimensionError):
        coverage_and_width(np.zeros(4), np.ones(3), np.zeros(4))


# ==================== CRPS ====================


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_crps_energy_matches_integral(seed):
    rng = np.random.default_rng(seed)
    members = rng.standard_normal(9)
    y = float(rng.standard_normal())
    assert float(crps_energy(members, y)) == pytest.approx(crps_integral_oracle(members, y), abs=1e-12)


def test_crps_energy_matches_integral_over_many_ensembles():
    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(1000):
        m = int(rng.integers(1, 31))
        members = rng.normal(0.0, rng.uniform(0.1, 3.0), m)
        y = float(rng.normal(0.0, 2.0))
        worst = max(worst, abs(float(crps_energy(members, y)) - crps_integral_oracle(members, y)))
    assert worst < 1e-10


def test_crps_of_point_ensemble_is_absolute_error():
    assert float(crps_energy(np.full(5, 2.0), 3.5)) == pytest.approx(1.5)


def test_crps_of_single_member_is_absolute_error():
    rng = np.random.default_rng(11)
    x, y = rng.standard_normal((2, 50))
    assert_allclose(crps_energy(x[None], y), np.abs(x - y), rtol=0, atol=0)


def test_crps_is_computed_per_hour():
    ens = np.random.default_rng(3).standard_normal((6, 24))
    y = np.zeros(24)
    out = crps_energy(ens, y)
    assert out.shape == (24,)
    assert out[7] == pytest.approx(crps_integral_oracle(ens[:, 7], 0.0), abs=1e-12)


# ==================== Wilcoxon ====================


def test_wilcoxon_all_smaller():
    result = wilcoxon_one_sided([1, 2, 3, 4, 5], [2, 4, 6, 8, 10])
    assert result.method == "exact"
    assert result.statistic == 0.0
    assert result.p_value == pytest.approx(1 / 32)


def test_wilcoxon_exact_matches_enumeration():
    rng = np.random.default_rng(4)
    a = rng.standard_normal(10)
    b = a + rng.normal(0.3, 1.0, 10)
    assert wilcoxon_one_sided(a, b).p_value == pytest.approx(sign_flip_p(a, b))


def test_wilcoxon_exact_matches_enumeration_over_many_samples():
    rng = np.random.default_rng(12)
    for trial in range(100):
        n = int(rng.integers(5, 13))
        a = rng.standard_normal(n)
        b = a + rng.normal(0.2, 1.0, n)
        if trial % 2:
            # coarse values give tied magnitudes and dropped zeros
            a, b = np.round(a, 1), np.round(b, 1)
        result = wilcoxon_one_sided(a, b)
        if result.undefined:
            continue
        assert result.method == "exact"
        assert result.p_value == pytest.approx(sign_flip_p(a, b), abs=1e-12)


def test_wilcoxon_exact_with_tied_magnitudes():
    a = np.array([0.0, 0.0, 3.0, 0.0, 0.0, 5.0, 1.0])
    b = np.array([1.0, 1.0, 1.0, 4.0, 2.0, 5.0, 0.0])
    result = wilcoxon_one_sided(a, b)
    assert result.n == 6
    assert result.p_value == pytest.approx(sign_flip_p(a, b))


def test_wilcoxon_normal_approximation():
    rng = np.random.default_rng(5)
    a = rng.standard_normal(30)
    b = a + rng.normal(0.2, 1.0, 30)
    result = wilcoxon_one_sided(a, b)
    assert result.method == "normal"
    n = 30
    d = a - b
    w_plus = rankdata(np.abs(d))[d > 0].sum()
    z = (w_plus - n * (n + 1) / 4 + 0.5) / math.sqrt(n * (n + 1) * (2 * n + 1) / 24)
    assert result.p_value == pytest.approx(float(ndtr(z)))


def test_wilcoxon_edge_cases():
    tied = wilcoxon_one_sided(np.ones(6), np.ones(6))
    assert tied.undefined and math.isnan(tied.p_value)
    with pytest.raises(ConfigurationError):
        wilcoxon_one_sided([1, 2, 3, 4], [2, 3, 4, 5])
    with pytest.raises(DimensionError):
        wilcoxon_one_sided([1, 2, 3, 4, 5], [1, 2, 3, 4, 5, 6])


# ==================== Reports ====================


def test_aggregate_skips_degenerate_and_missing():
    report = MetricsReport(
        dataset="synth:stable-commercial",
        variant="full",
        gap_len=7,
        rows=[row(0, all_feature_mse=0.1), row(1, all_feature_mse=0.3), row(2, degenerate=True, all_feature_mse=9.0)],
    )
    summary = report.aggregate()
    assert summary["n_windows"] == 3
    assert summary["n_degenerate"] == 1
    assert summary["all_feature_mse"] == pytest.approx(0.2)
    assert summary["crps"] is None


def test_seed_summary_mean_and_std(tmp_path):
    reports = [
        MetricsReport("d", "full", 7, [row(0, crps=value)]) for value in (0.1, 0.3)
    ]
    summary = seed_summary(reports)
    assert summary["n_seeds"] == 2
    assert summary["crps_mean"] == pytest.approx(0.2)
    assert summary["crps_std"] == pytest.approx(np.std([0.1, 0.3], ddof=1))
    assert summary["coverage_mean"] is None

    csv_path, json_path = reports[0].write(tmp_path, "full_seed42")
    assert csv_path.exists()
    assert json.loads(json_path.read_text(encoding="utf-8"))["variant"] == "full"
