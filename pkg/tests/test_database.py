"""SQLite result store."""

from concurrent.futures import ThreadPoolExecutor

import pytest

from core.metrics import WindowMetrics
from database import (
    ResultWriter,
    get_calibrations,
    get_runs,
    get_window_metrics,
    init_database,
)


def metrics(start, variant="bridge", mse=0.1, seed=42):
    return WindowMetrics(
        window_start=start,
        variant=variant,
        seed=seed,
        all_feature_mse=mse,
        load_mse_minmax=0.2,
        mape_pct=4.0,
        mape_excluded=0,
        rmse_physical=1.0,
        mae_physical=0.8,
        boundary_d=0.1,
        degenerate=False,
        crps=0.05,
    )


@pytest.fixture
def db_path(tmp_path):
    path = tmp_path / "db" / "results.db"
    init_database(path)
    return path


def test_record_run_replaces_existing(db_path):
    with ResultWriter(db_path) as writer:
        writer.record_run("abc", "synth:stable-commercial", 42, 7, {"seed": 42})
        writer.record_run("abc", "synth:stable-commercial", 42, 7, {"seed": 42, "workers": 2})
    runs = get_runs(db_path)
    assert len(runs) == 1
    assert runs[0].config == {"seed": 42, "workers": 2}
    assert runs[0].gap_len == 7


def test_window_metrics_round_trip(db_path):
    with ResultWriter(db_path) as writer:
        assert writer.add_window_metrics("abc", [metrics(3), metrics(1), metrics(2, variant="jepa-only")]) == 3
        writer.add_window_metrics("abc", [metrics(1, mse=0.9)])
    rows = get_window_metrics("abc", "bridge", path=db_path)
    assert [r.window_start for r in rows] == [1, 3]
    assert rows[0].all_feature_mse == pytest.approx(0.9)
    assert rows[0].coverage is None
    assert not rows[0].degenerate
    assert len(get_window_metrics("abc", path=db_path)) == 3
    assert get_window_metrics("other", path=db_path) == []


def test_concurrent_writers_share_one_connection(db_path):
    with ResultWriter(db_path) as writer:
        with ThreadPoolExecutor(max_workers=4) as pool:
            list(pool.map(lambda s: writer.add_window_metrics("abc", [metrics(s)]), range(40)))
    assert len(get_window_metrics("abc", path=db_path)) == 40


def test_calibrations_keep_insert_order(db_path):
    with ResultWriter(db_path) as writer:
        first = writer.add_calibration("abc", "holdout", 0.05, 0.93, 0.4)
        writer.add_calibration("abc", "online", 0.05, 0.95, 0.5, 0.9, 0.45, 0.048, saturated=2)
    records = get_calibrations("abc", path=db_path)
    assert [r.protocol for r in records] == ["holdout", "online"]
    assert records[0].id == first
    assert records[0].alpha_T is None
    assert records[1].saturated == 2
    assert records[1].cqr_width == pytest.approx(0.45)
