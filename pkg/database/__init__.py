"""Result store for gapbridge runs."""

from database.models import (
    init_database,
    get_connection,
    get_runs,
    get_window_metrics,
    get_calibrations,
    ResultWriter,
    RunRecord,
    WindowRecord,
    CalibrationRecord,
)

__all__ = [
    "init_database",
    "get_connection",
    "get_runs",
    "get_window_metrics",
    "get_calibrations",
    "ResultWriter",
    "RunRecord",
    "WindowRecord",
    "CalibrationRecord",
]
