"""
sigpricer/services/results.py – CSV result tables plus JSON metadata sidecars.

CSV files hold only deterministic columns so that identical configurations
produce byte-identical tables; timings and provenance go to `<name>.meta.json`.
"""
from __future__ import annotations

import json
import logging
import subprocess
from collections.abc import Sequence
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional

import pandas as pd
from pydantic import BaseModel

from sigpricer import __version__
from sigpricer.models import ExperimentConfig

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"


def version_string() -> str:
    """`sigpricer <version>` plus the short commit hash when run from a git checkout."""
    try:
        commit = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True,
            text=True,
            timeout=5,
            cwd=Path(__file__).resolve().parent,
            check=True,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        commit = ""
    return f"sigpricer {__version__}" + (f"+g{commit}" if commit else "")


def rows_frame(rows: Sequence[BaseModel]) -> pd.DataFrame:
    return pd.DataFrame([row.model_dump(mode="json") for row in rows])


def write_frame(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def write_metadata(path: Path, config: Optional[ExperimentConfig], extra: Optional[dict[str, Any]] = None) -> Path:
    meta: dict[str, Any] = {
        "version": version_string(),
        "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    if config is not None:
        meta["seed"] = config.run.seed
        meta["config"] = config.model_dump(mode="json")
    meta.update(extra or {})
    path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=str), encoding="utf-8")
    return path


def results_write(
    rows: Sequence[BaseModel],
    out_dir: str | Path,
    name: str,
    config: Optional[ExperimentConfig] = None,
    runtimes: Optional[dict[str, float]] = None,
) -> Path:
    """Write `<out_dir>/<name>.csv` and its `<name>.meta.json` sidecar; returns the CSV path."""
    out_dir = Path(out_dir)
    csv_path = write_frame(rows_frame(rows), out_dir / f"{name}.csv")
    write_metadata(
        out_dir / f"{name}.meta.json",
        config,
        {"rows": len(rows), "runtimes_s": runtimes or {}},
    )
    logger.info("Wrote results", extra={"path": str(csv_path), "rows": len(rows)})
    return csv_path
