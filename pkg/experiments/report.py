"""
Comparison tables across run directories.

Each run directory holds ``summary.json`` and ``metrics*.csv``; ``build_report``
merges them into ``runs.csv`` (one row per run), ``epochs.csv`` (per-epoch
curves, long format) and, when robustness runs are present, ``robustness.csv``.
"""

import json
import logging
from pathlib import Path

import pandas as pd

from experiments.runner import SUMMARY_NAME

logger = logging.getLogger(__name__)

RUN_COLUMNS = ["run", "name", "protocol", "seed", "test_error", "train_error", "epochs"]


def find_runs(paths):
    """Run directories under ``paths`` (a run directory itself, or a parent of several)."""
    found = []
    for path in map(Path, paths):
        if not path.exists():
            raise FileNotFoundError(f"run directory not found: {path}")
        if (path / SUMMARY_NAME).exists():
            found.append(path)
            continue
        found.extend(sorted(p.parent for p in path.glob(f"*/{SUMMARY_NAME}")))
    return found


def read_summary(run_dir):
    return json.loads((Path(run_dir) / SUMMARY_NAME).read_text(encoding="utf-8"))


def run_row(run_dir, summary):
    row = {column: summary.get(column) for column in RUN_COLUMNS[1:]}
    row["run"] = Path(run_dir).name
    # Protocol-specific scalars go in flattened columns (shots.1, readout.0, ...).
    for key in ("shots", "readout"):
        for sub, value in (summary.get(key) or {}).items():
            row[f"{key}.{sub}"] = value
    for key in ("self_consistency", "step_one_accuracy", "auc", "threshold", "mean_score"):
        if key in summary:
            row[key] = summary[key]
    return row


def epoch_frame(run_dir):
    frames = []
    for path in sorted(Path(run_dir).glob("metrics*.csv")):
        frame = pd.read_csv(path)
        series = path.stem.removeprefix("metrics").lstrip("_") or "main"
        frame.insert(0, "series", series)
        frame.insert(0, "run", Path(run_dir).name)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True) if frames else None


def robustness_frame(run_dir):
    path = Path(run_dir) / "robustness.csv"
    if not path.exists():
        return None
    frame = pd.read_csv(path)
    frame.insert(0, "run", Path(run_dir).name)
    return frame


def build_report(paths, out):
    """Write the comparison tables into ``out``; returns ``{table name: path}``."""
    runs = find_runs(paths)
    if not runs:
        raise FileNotFoundError(f"no runs with {SUMMARY_NAME} under {', '.join(map(str, paths))}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    rows = [run_row(run, read_summary(run)) for run in runs]
    tables = {"runs": pd.DataFrame(rows).reindex(columns=_ordered_columns(rows))}
    epochs = [frame for frame in map(epoch_frame, runs) if frame is not None]
    if epochs:
        tables["epochs"] = pd.concat(epochs, ignore_index=True)
    robustness = [frame for frame in map(robustness_frame, runs) if frame is not None]
    if robustness:
        merged = pd.concat(robustness, ignore_index=True)
        tables["robustness"] = merged.pivot_table(
            index=["disturbance", "level"], columns="run", values="error"
        ).reset_index()

    written = {}
    for name, frame in tables.items():
        path = out / f"{name}.csv"
        frame.to_csv(path, index=False, float_format="%.6f", lineterminator="\n")
        written[name] = path
    logger.info("Report over %d runs written to %s", len(runs), out)
    return written


def _ordered_columns(rows):
    extra = sorted({key for row in rows for key in row} - set(RUN_COLUMNS))
    return RUN_COLUMNS + extra
