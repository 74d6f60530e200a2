"""Delimited-text series for tracking error, reward history and fuel deltas."""

import json
import logging
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import MissingArtifactError
from ..models import EvaluationReport, TrainingHistoryEntry
from .persistence import read_json, read_jsonl

logger = logging.getLogger(__name__)


def _save_csv(path: Path, columns: Sequence[str], rows: np.ndarray) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.atleast_2d(rows), delimiter=",", header=",".join(columns), comments="", fmt="%.10g")
    logger.info(f"Exported {len(rows)} rows to {path}")
    return path


def export_tracking(records: Sequence[dict], path: Path) -> Path:
    """One row per sensor sample: time and each MU's tracking error (m)."""
    if not records:
        raise ValueError("no tracking samples to export")
    mus = len(records[0]["errors"])
    rows = np.array([[r["time"], *r["errors"]] for r in records], dtype=float)
    return _save_csv(path, ["time"] + [f"mu{m + 1}" for m in range(mus)], rows)


def export_rewards(history: Sequence[TrainingHistoryEntry], path: Path) -> Path:
    """One row per training iteration."""
    if not history:
        raise ValueError("no training history to export")
    rows = np.array(
        [[h.iteration, h.episodes, h.mean_reward, h.trailing_mean_reward, h.success_rate] for h in history],
        dtype=float,
    )
    return _save_csv(path, ["iteration", "episodes", "mean_reward", "trailing_mean_reward", "success_rate"], rows)


def export_fuel_deltas(report: EvaluationReport, path: Path) -> Path:
    """One row per paired scenario: nominal fuel, policy fuel and their difference (kg)."""
    if not report.episodes:
        raise ValueError("evaluation report has no episodes")
    rows = np.column_stack([
        np.arange(report.episodes),
        report.fuel_nominal,
        report.fuel_rl,
        report.fuel_delta,
    ])
    return _save_csv(path, ["episode", "fuel_nominal", "fuel_rl", "fuel_delta"], rows)


def export_run(run_dir: Path, out_dir: Path) -> list[Path]:
    """
    Export every recognised log in ``run_dir``.

    Tracking logs become ``tracking_error.csv``, training histories
    ``reward_history.csv`` and evaluation reports ``fuel_delta.csv``
    (prefixed with the source file stem when there are several).

    Raises:
        MissingArtifactError: If the directory holds nothing to export
    """
    run_dir, out_dir = Path(run_dir), Path(out_dir)
    if not run_dir.is_dir():
        raise MissingArtifactError(f"Run directory not found: {run_dir}")

    written: list[Path] = []
    for path in sorted(run_dir.glob("*.jsonl")):
        header, records = read_jsonl(path)
        kind = header.get("format")
        if kind == "tracking":
            written.append(export_tracking(records, out_dir / _name(path, "tracking", "tracking_error.csv")))
        elif kind == "training-history":
            history = [TrainingHistoryEntry.model_validate(r) for r in records]
            written.append(export_rewards(history, out_dir / _name(path, "history", "reward_history.csv")))

    for path in sorted(run_dir.glob("*.json")):
        if "pairs" not in json.loads(path.read_text()):
            continue
        report = read_json(path, EvaluationReport)
        written.append(export_fuel_deltas(report, out_dir / _name(path, "report", "fuel_delta.csv")))

    if not written:
        raise MissingArtifactError(f"No tracking, history or evaluation files in {run_dir}")
    return written


def _name(source: Path, plain_stem: str, filename: str) -> str:
    stem = source.name.split(".")[0]
    return filename if stem == plain_stem else f"{stem}_{filename}"
