"""
Report module.
Collects evaluation, calibration, sweep and ablation outputs from a results
directory into table-shaped CSVs and one HTML summary.
"""

import json
import logging
import math
from pathlib import Path
from typing import Optional

import markdown
import pandas as pd
from premailer import transform

logger = logging.getLogger(__name__)

DEGENERATE_MARK = "‡"

ACCURACY_COLUMNS = ["dataset", "variant", "gap_len", "n_seeds", "mse", "load_mse", "mape_pct", "flag"]
VARIANT_COLUMNS = ["dataset", "variant", "all_feature_mse", "delta_vs_jepa_only_pct"]
CRPS_COLUMNS = ["dataset", "variant", "mae", "crps", "crps_gain_pct"]
ACI_COLUMNS = ["dataset", "cqr_cov", "cqr_width", "aci_cov", "aci_width", "alpha_T"]
PHYSICAL_COLUMNS = ["dataset", "variant", "rmse_physical", "mae_physical"]
TRACE_COLUMNS = ["t", "alpha_t", "lo", "hi", "y", "err"]

REPORT_STYLES = """
<style>
body {
    font-family: -apple-system, BlinkMacSystemFont, 'Segoe UI', Roboto, 'Helvetica Neue', Arial, sans-serif;
    line-height: 1.5;
    color: #333;
    max-width: 960px;
    margin: 0 auto;
    padding: 20px;
}
h1 {
    color: #1a73e8;
    border-bottom: 2px solid #1a73e8;
    padding-bottom: 10px;
}
h2 {
    color: #34a853;
    margin-top: 30px;
}
table {
    border-collapse: collapse;
    margin: 12px 0;
    font-size: 13px;
}
th {
    background-color: #f1f3f4;
    text-align: left;
}
th, td {
    border: 1px solid #e8eaed;
    padding: 4px 10px;
}
.footer {
    margin-top: 30px;
    color: #5f6368;
    font-size: 12px;
}
</style>
"""


def _fmt(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    if isinstance(value, float):
        return f"{value:.4g}"
    return str(value)


def _pm(mean, std) -> str:
    if mean is None:
        return "-"
    return f"{mean:.4f} ± {std:.4f}" if std is not None else f"{mean:.4f}"


def markdown_table(frame: pd.DataFrame) -> str:
    """Pipe table for the markdown ``tables`` extension."""
    if frame.empty:
        return "_no rows_"
    header = "| " + " | ".join(str(c) for c in frame.columns) + " |"
    rule = "| " + " | ".join("---" for _ in frame.columns) + " |"
    body = ["| " + " | ".join(_fmt(v) for v in row) + " |" for row in frame.itertuples(index=False)]
    return "\n".join([header, rule, *body])


def _read_json(path: Path):
    return json.loads(path.read_text(encoding="utf-8"))


# ==================== Tables ====================


def accuracy_table(evaluations: list[dict]) -> pd.DataFrame:
    """Mean ± std over seeds per dataset and variant; degenerate windows flagged."""
    rows = []
    for ev in evaluations:
        for s in ev["variants"]:
            rows.append(
                {
                    "dataset": s["dataset"],
                    "variant": s["variant"],
                    "gap_len": s["gap_len"],
                    "n_seeds": s["n_seeds"],
                    "mse": _pm(s["all_feature_mse_mean"], s["all_feature_mse_std"]),
                    "load_mse": _pm(s["load_mse_minmax_mean"], s["load_mse_minmax_std"]),
                    "mape_pct": _pm(s["mape_pct_mean"], s["mape_pct_std"]),
                    "flag": DEGENERATE_MARK if s.get("n_degenerate") else "",
                }
            )
    return pd.DataFrame(rows, columns=ACCURACY_COLUMNS)


def variant_table(evaluations: list[dict]) -> pd.DataFrame:
    """All-feature MSE per pipeline variant relative to JEPA-only."""
    rows = []
    for ev in evaluations:
        by_variant = {s["variant"]: s for s in ev["variants"]}
        ref = by_variant.get("jepa-only", {}).get("all_feature_mse_mean")
        for variant, s in by_variant.items():
            mse = s["all_feature_mse_mean"]
            delta = 100.0 * (mse - ref) / ref if ref and mse is not None else None
            rows.append({"dataset": s["dataset"], "variant": variant, "all_feature_mse": mse, "delta_vs_jepa_only_pct": delta})
    return pd.DataFrame(rows, columns=VARIANT_COLUMNS)


def crps_table(evaluations: list[dict]) -> pd.DataFrame:
    """Point MAE against ensemble CRPS on the [0, 1] Load scale."""
    rows = []
    for ev in evaluations:
        for s in ev["variants"]:
            crps, mae = s.get("crps_mean"), s.get("load_mae_unit_mean")
            if crps is None:
                continue
            gain = 100.0 * (mae - crps) / mae if mae else None
            rows.append({"dataset": s["dataset"], "variant": s["variant"], "mae": mae, "crps": crps, "crps_gain_pct": gain})
    return pd.DataFrame(rows, columns=CRPS_COLUMNS)


def aci_table(calibrations: list[dict]) -> pd.DataFrame:
    rows = [
        {"dataset": c["dataset"], **{k: c["summary"][k] for k in ACI_COLUMNS[1:]}}
        for c in calibrations
        if c.get("protocol") == "online"
    ]
    return pd.DataFrame(rows, columns=ACI_COLUMNS)


def physical_table(evaluations: list[dict]) -> pd.DataFrame:
    rows = [
        {
            "dataset": s["dataset"],
            "variant": s["variant"],
            "rmse_physical": s["rmse_physical_mean"],
            "mae_physical": s["mae_physical_mean"],
        }
        for ev in evaluations
        for s in ev["variants"]
    ]
    return pd.DataFrame(rows, columns=PHYSICAL_COLUMNS)


# ==================== Bundle ====================


def collect(results_dir: Path) -> dict:
    """Load every result file under ``results_dir`` in a stable order."""
    results_dir = Path(results_dir)
    found = {"evaluations": [], "calibrations": [], "sweeps": [], "ablations": []}
    for path in sorted(results_dir.rglob("*.json")):
        if "report" in path.relative_to(results_dir).parts:
            continue
        name = path.name
        if name == "evaluation.json":
            found["evaluations"].append(_read_json(path))
        elif name.startswith("calibration_"):
            found["calibrations"].append(_read_json(path))
        elif name == "sweep_guidance.json":
            found["sweeps"].append(_read_json(path))
        elif name.startswith("ablation_"):
            found["ablations"].append(_read_json(path))
    return found


def render_report_html(sections: list[tuple[str, pd.DataFrame]], title: str = "gapbridge report") -> str:
    """Render titled tables as one CSS-inlined HTML page."""
    parts = [f"# {title}"]
    for heading, frame in sections:
        parts.append(f"## {heading}")
        parts.append(markdown_table(frame))
    body = markdown.markdown("\n\n".join(parts), extensions=["tables"])
    html = f"""
<!DOCTYPE html>
<html>
<head>
    <meta charset="UTF-8">
    {REPORT_STYLES}
</head>
<body>
{body}
<div class="footer">{DEGENERATE_MARK} means and win counts exclude windows with constant Load truth.</div>
</body>
</html>
"""
    return transform(html)


def write_report(results_dir: Path, out_dir: Optional[Path] = None) -> dict[str, Path]:
    """Write table CSVs and report.html; rerunning on the same inputs rewrites identical files.

    Returns:
        Mapping of table name to written path.
    """
    results_dir = Path(results_dir)
    out_dir = Path(out_dir) if out_dir is not None else results_dir / "report"
    out_dir.mkdir(parents=True, exist_ok=True)
    found = collect(results_dir)

    tables: dict[str, pd.DataFrame] = {}
    if found["evaluations"]:
        tables["accuracy"] = accuracy_table(found["evaluations"])
        tables["pipeline_variants"] = variant_table(found["evaluations"])
        tables["crps_vs_mae"] = crps_table(found["evaluations"])
        tables["physical_units"] = physical_table(found["evaluations"])
    if found["calibrations"]:
        tables["aci_vs_cqr"] = aci_table(found["calibrations"])
    for sweep in found["sweeps"]:
        tables[f"guidance_{sweep['mode']}"] = pd.DataFrame(sweep["rows"])
    for ablation in found["ablations"]:
        suite = ablation["suite"]
        tables[f"ablation_{suite}"] = pd.DataFrame(ablation["rows"])
        tables[f"ablation_{suite}_ranks"] = pd.DataFrame(ablation["summary"], columns=["row", "wins", "mean_rank"])
        if ablation.get("accuracy_diversity"):
            tables["accuracy_diversity"] = pd.DataFrame([ablation["accuracy_diversity"]])

    written = {}
    for name, frame in tables.items():
        path = out_dir / f"{name}.csv"
        frame.to_csv(path, index=False)
        written[name] = path

    html = render_report_html([(name.replace("_", " "), frame) for name, frame in tables.items()])
    written["html"] = out_dir / "report.html"
    written["html"].write_text(html, encoding="utf-8")
    logger.info(f"Report: {len(tables)} tables written to {out_dir}")
    return written


def write_band_trace(path: Path, trace: list[dict]) -> Path:
    """Per-step ACI trace as plot-ready CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(trace, columns=TRACE_COLUMNS).to_csv(path, index=False)
    return path
