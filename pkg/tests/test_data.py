"""Ingestion, synthetic presets, daily frames and the window protocol."""

from datetime import date, timedelta

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from config import CSV_HEADER, FEATURE_COLUMNS, WINDOW_THRESHOLD
from data.dataset import prepare_from_frame
from data.frames import build_daily_frames, zscore_apply, zscore_fit, zscore_invert
from data.ingest import load_csv, records_to_frame, write_csv
from data.synth import get_preset, synth_frame, synth_generate
from data.units import convert_raw_export, humidex
from data.windows import (
    make_window,
    minmax_truth_range,
    seasonal_naive,
    sliding_windows,
    train_val_split,
    window_manifest,
)
from errors import ConfigurationError, IngestionError, ParseError, ProtocolError


def csv_lines(n_days: int, skip: tuple = ()) -> list[str]:
    """Canonical CSV rows with Load = hour index, omitting the hour indices in ``skip``."""
    lines = [CSV_HEADER]
    start = date(2022, 3, 1)
    for i in range(n_days * 24):
        if i in skip:
            continue
        day = start + timedelta(days=i // 24)
        lines.append(f"{day.isoformat()};{i % 24};50.0;48.5;1;7.5;{float(i)}")
    return lines


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# ==================== Ingestion ====================


def test_load_csv_reads_canonical_rows(tmp_path):
    records = load_csv(write_lines(tmp_path / "ok.csv", csv_lines(2)))
    assert len(records) == 48
    assert records[0].date == date(2022, 3, 1)
    assert records[25].hour == 1
    assert records[25].load == 25.0
    assert records[0].weather_code == 1
    assert not any(r.interpolated for r in records)


def test_written_csv_loads_back(tmp_path):
    records = synth_generate(get_preset("stable-commercial", n_days=500), seed=1)
    path = write_csv(records, tmp_path / "synth.csv")
    assert path.read_text(encoding="utf-8").splitlines()[0] == CSV_HEADER
    loaded = load_csv(path)
    assert len(loaded) == len(records)
    assert_allclose([r.load for r in loaded[:100]], [r.load for r in records[:100]])


def test_comma_delimited_file_is_rejected(tmp_path):
    lines = csv_lines(1)
    lines[0] = CSV_HEADER.replace(";", ",")
    with pytest.raises(ParseError) as info:
        load_csv(write_lines(tmp_path / "comma.csv", lines))
    assert info.value.line == 1


def test_malformed_row_reports_line(tmp_path):
    lines = csv_lines(1)
    lines[5] = lines[5].replace("50.0", "warm")
    with pytest.raises(ParseError) as info:
        load_csv(write_lines(tmp_path / "bad.csv", lines))
    assert info.value.line == 6


def test_single_missing_hour_is_interpolated_and_flagged(tmp_path):
    records = load_csv(write_lines(tmp_path / "hole.csv", csv_lines(5, skip=(29,))))
    assert len(records) == 120
    assert records[29].interpolated
    assert records[29].load == pytest.approx(29.0)
    assert sum(r.interpolated for r in records) == 1


def test_long_missing_runs_are_rejected(tmp_path):
    skip = tuple(range(100, 148))  # 48 of 720 hours
    with pytest.raises(IngestionError):
        load_csv(write_lines(tmp_path / "holes.csv", csv_lines(30, skip=skip)))


def test_scattered_missing_hours_count_toward_the_limit(tmp_path):
    skip = (20, 50, 90, 130, 170)  # isolated, 5 of 240 hours
    with pytest.raises(IngestionError, match="5 of 240"):
        load_csv(write_lines(tmp_path / "scattered.csv", csv_lines(10, skip=skip)))
    # 2 of 240 stays under 1%
    records = load_csv(write_lines(tmp_path / "few.csv", csv_lines(10, skip=skip[:2])))
    assert sum(r.interpolated for r in records) == 2


def test_non_utf8_file_is_a_parse_error(tmp_path):
    path = tmp_path / "latin1.csv"
    path.write_bytes("\n".join(csv_lines(1)).replace("Heure", "Heure\xe9").encode("latin-1"))
    with pytest.raises(ParseError) as info:
        load_csv(path)
    assert info.value.line == 1


def test_non_increasing_timestamps_are_rejected(tmp_path):
    lines = csv_lines(1)
    lines[4], lines[5] = lines[5], lines[4]
    with pytest.raises(IngestionError):
        load_csv(write_lines(tmp_path / "order.csv", lines))


def test_missing_file_is_an_ingestion_error(tmp_path):
    with pytest.raises(IngestionError):
        load_csv(tmp_path / "nope.csv")


# ==================== Raw exports ====================


def test_humidex_reference_value():
    assert float(humidex(30.0, 15.0)) == pytest.approx(33.97, abs=0.05)


def test_convert_raw_export_units(tmp_path):
    raw = pd.DataFrame(
        {
            "time": pd.date_range("2022-01-01", periods=3, freq="h").astype(str),
            "temperature_c": [0.0, 100.0, -40.0],
            "dew_point_c": [-5.0, -5.0, -45.0],
            "weather_code": [0, 1, 2],
            "wind_kmh": [0.0, 1.609344, 16.09344],
            "load": [1.0, 2.0, 3.0],
        }
    )
    path = tmp_path / "raw.csv"
    raw.to_csv(path, index=False)
    records = convert_raw_export(path)
    assert [r.temperature for r in records] == pytest.approx([32.0, 212.0, -40.0])
    assert [r.wind for r in records] == pytest.approx([0.0, 1.0, 10.0])
    assert [r.weather_code for r in records] == [0, 1, 2]


def test_convert_raw_export_requires_columns(tmp_path):
    path = tmp_path / "raw.csv"
    pd.DataFrame({"time": ["2022-01-01 00:00"], "load": [1.0]}).to_csv(path, index=False)
    with pytest.raises(IngestionError):
        convert_raw_export(path)


# ==================== Synthetic presets ====================


def test_synth_is_a_pure_function_of_seed():
    preset = get_preset("volatile-mixed", n_days=500)
    a, b = synth_frame(preset, 11), synth_frame(preset, 11)
    pd.testing.assert_frame_equal(a, b)
    assert not np.allclose(a["Load"], synth_frame(preset, 12)["Load"])


def test_synth_needs_enough_days():
    with pytest.raises(ConfigurationError):
        synth_frame(get_preset("stable-commercial", n_days=100), 0)
    with pytest.raises(ConfigurationError):
        get_preset("no-such-preset")


def test_lighting_preset_is_dark_by_day():
    frame = synth_frame(get_preset("zero-inflated-lighting", n_days=500), 3)
    daytime = (frame.index.hour >= 6) & (frame.index.hour < 18)
    assert (frame["Load"][daytime] == 0.0).all()
    assert (frame["Load"] >= 0.0).all()
    assert (frame["Load"][~daytime] > 0.0).mean() > 0.5


def test_periodic_preset_repeats_weekly():
    load = synth_frame(get_preset("periodic-check", n_days=500), 5)["Load"].to_numpy()
    assert_allclose(load[168:], load[:-168], atol=1e-9)


# ==================== Frames and normalisation ====================


def test_daily_frames_drop_partial_days():
    index = pd.date_range("2022-01-01 05:00", periods=24 * 4 + 10, freq="h")
    hourly = pd.DataFrame(
        {c: np.arange(len(index), dtype=float) for c in ["Load", "Temperature", "Humidex", "Weather", "Wind"]},
        index=index,
    )
    frames = build_daily_frames(hourly)
    assert frames.n_days == 3
    assert frames.values.shape == (3, 24, len(FEATURE_COLUMNS))
    assert frames.dates[0] == pd.Timestamp("2022-01-02")
    assert frames.values[0, 0, 0] == 19.0  # first midnight is the 20th hour


def test_constant_feature_gets_unit_std():
    values = np.stack([np.arange(10.0), np.full(10, 3.0)], axis=-1)
    stats = zscore_fit(values, ["x", "flat"])
    assert stats.degenerate.tolist() == [False, True]
    assert stats.std[1] == 1.0
    z = zscore_apply(values, stats)
    assert_allclose(z[:, 1], 0.0)
    assert_allclose(zscore_invert(z, stats), values)


def test_prepared_split_and_scales(prepared):
    assert prepared.n_days == 500
    assert (prepared.n_train, prepared.n_val) == (425, 75)
    li = prepared.load_index
    train_load = prepared.train_days[..., li]
    assert abs(train_load.mean()) < 1e-9
    unit = prepared.load_unit(train_load)
    assert unit.min() == pytest.approx(0.0)
    assert unit.max() == pytest.approx(1.0)
    assert_allclose(prepared.load_from_unit(unit), train_load)
    assert_allclose(prepared.load_physical(prepared.days[..., li]), prepared.raw[..., li])


def test_validation_days_cannot_move_training_statistics():
    frame = synth_frame(get_preset("volatile-mixed", n_days=500), seed=3)
    clean = prepare_from_frame(frame, "clean", "a")
    poisoned_frame = frame.copy()
    cut = clean.n_train * 24
    poisoned_frame.iloc[cut:] = 1e6
    poisoned = prepare_from_frame(poisoned_frame, "poisoned", "b")

    assert poisoned.n_train == clean.n_train
    for attr in ("norm", "cond_norm"):
        assert_allclose(getattr(poisoned, attr).mean, getattr(clean, attr).mean)
        assert_allclose(getattr(poisoned, attr).std, getattr(clean, attr).std)
    assert_allclose(poisoned.feature_range.low, clean.feature_range.low)
    assert_allclose(poisoned.feature_range.high, clean.feature_range.high)
    assert_allclose(poisoned.train_days, clean.train_days)
    assert not np.allclose(poisoned.days[clean.n_train :], clean.days[clean.n_train :])


def test_prepare_from_hourly_frame():
    frame = records_to_frame(synth_generate(get_preset("periodic-check", n_days=500), 0))
    data = prepare_from_frame(frame, "periodic", "abc")
    assert data.content_hash == "abc"
    assert data.cond.shape == (500, 24, data.cond_dim)


# ==================== Windows ====================


def test_split_holds_out_ceiling_fraction():
    train, val = train_val_split(100)
    assert (len(train), len(val)) == (85, 15)
    train, val = train_val_split(501)
    assert len(val) == 76
    assert train[-1] + 1 == val[0]
    with pytest.raises(ConfigurationError):
        train_val_split(10)


def test_sliding_windows_respect_threshold():
    starts = sliding_windows(500, gap_len=7, context_len=21)
    assert starts[0] == 404
    assert starts[-1] == 472
    assert len(starts) == 69
    assert starts == list(range(404, 473))


@pytest.mark.parametrize("gap_len", [7, 30, 91])
def test_sliding_windows_match_the_start_inequality(gap_len):
    assert WINDOW_THRESHOLD == 0.85
    rng = np.random.default_rng(gap_len)
    for n_days in rng.integers(480, 2000, size=40):
        n_days = int(n_days)
        try:
            starts = sliding_windows(n_days, gap_len)
        except ProtocolError:
            starts = []
        expected = [
            s
            for s in range(n_days)
            if (s + 365) * 20 >= 17 * n_days and s + 365 + gap_len <= n_days
        ]
        assert starts == expected


def test_sliding_windows_reference_cases():
    assert sliding_windows(700, gap_len=91) == list(range(230, 245))
    with pytest.raises(ProtocolError):
        sliding_windows(600, gap_len=91)
    with pytest.raises(ProtocolError):
        sliding_windows(365 + 91, gap_len=91)


def test_sliding_windows_too_short_series():
    with pytest.raises(ProtocolError):
        sliding_windows(100, gap_len=91, context_len=365)


def test_window_geometry():
    days = np.arange(40 * 24 * 2, dtype=float).reshape(40, 24, 2)
    window = make_window(days, 5, 10, 3)
    assert window.gap_range == (15, 18)
    assert window.day_mask.tolist() == [False] * 10 + [True] * 3
    assert_allclose(window.gap, days[15:18])
    with pytest.raises(ProtocolError):
        make_window(days, 30, 10, 3)


def test_seasonal_naive_copies_lagged_days():
    days = np.random.default_rng(0).standard_normal((400, 24, 2))
    result = seasonal_naive(make_window(days, 360, 10, 5), days)
    assert result.available
    assert_allclose(result.imputed, days[370 - 364 : 375 - 364])
    early = seasonal_naive(make_window(days, 0, 10, 5), days)
    assert not early.available and early.imputed is None


def test_truth_range_flags_constant_truth():
    scaled = minmax_truth_range(np.array([1.0, 2.0]), np.array([3.0, 3.0]))
    assert scaled.degenerate and scaled.pred is None
    scaled = minmax_truth_range(np.array([2.0, 4.0]), np.array([2.0, 6.0]))
    assert_allclose(scaled.truth, [0.0, 1.0])
    assert_allclose(scaled.pred, [0.0, 0.5])


def test_window_manifest_hash_is_stable():
    days = np.zeros((50, 24, 1))
    windows = [make_window(days, s, 10, 5) for s in range(3)]
    first = window_manifest(windows, [False, True, False])
    assert first == window_manifest(windows, [False, True, False])
    assert first["windows"][1] == {"window_start": 1, "gap_start": 11, "gap_end": 16, "degenerate": True}
