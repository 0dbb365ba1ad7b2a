"""JSON summaries and CSV tables of experiment runs.

JSON goes through pydantic with non-finite floats written as constants; CSV
goes through pandas with a header row and no index column. Column layouts are
listed in docs/formats.md.
"""
import logging
from enum import Enum
from pathlib import Path
from typing import Any, List, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel

from models.schemas import IntervalValue, MeasureEstimate, SurveyReport

logger = logging.getLogger(__name__)

SURVEY_COLUMNS = ["index", "center_x", "center_y", "side", "ratio", "lo", "hi", "status"]


def plain(value: Any) -> Any:
    """Numpy scalars and arrays turned into plain Python values, recursively"""
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [plain(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, BaseModel):
        return plain(value.model_dump(mode="python"))
    if isinstance(value, Enum):
        return value.value
    return value


def output_paths(output_dir: str, operation: str, sweep: bool = False) -> Tuple[Path, Path]:
    stem = f"{operation}_sweep" if sweep else operation
    base = Path(output_dir)
    return base / f"{stem}.json", base / f"{stem}.csv"


def write_json(model: BaseModel, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(model.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.info(f"Wrote {path}")


def write_csv(table: pd.DataFrame, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
    logger.info(f"Wrote {path} ({len(table)} rows)")


def interval_summary(value: IntervalValue) -> dict:
    return {"lo": value.lo, "hi": value.hi, "mid": value.mid, "status": value.status.value}


def estimate_summary(estimate: MeasureEstimate, timings: bool = False) -> dict:
    summary = interval_summary(estimate.value)
    summary.update({"cells_used": estimate.cells_used, "tolerance": estimate.tolerance_requested,
                    "band_width": estimate.band_width})
    if timings:
        summary["seconds"] = estimate.seconds
    return summary


def survey_frame(report: SurveyReport) -> pd.DataFrame:
    rows = [{**record.model_dump(), "status": record.status.value} for record in report.records]
    return pd.DataFrame(rows, columns=SURVEY_COLUMNS)


def survey_summary(report: SurveyReport) -> dict:
    summary = plain(report.model_dump(mode="python"))
    summary["quantiles"] = {f"q{q:g}": v for q, v in report.quantiles}
    return summary


def intervals_frame(keys: List[dict], values: List[IntervalValue]) -> pd.DataFrame:
    """One row per interval, prefixed by the key columns"""
    rows = []
    for key, value in zip(keys, values):
        rows.append({**key, "lo": value.lo, "hi": value.hi, "mid": value.mid, "status": value.status.value})
    return pd.DataFrame(rows)
