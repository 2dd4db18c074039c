"""
Evaluation harness
Absolute percentage errors against simulator labels, aggregated per model and size bucket
"""
import logging
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field
from sklearn.metrics import mean_absolute_percentage_error

from ..models.schemas import PathMetrics, Sample

logger = logging.getLogger(__name__)

LOW_PERCENTILE = 15
HIGH_PERCENTILE = 85


class EvaluationReport(BaseModel):
    mape: float = Field(..., ge=0, description="Mean absolute percentage error")
    p15: float = Field(..., ge=0, description="15th percentile of per-path absolute percentage error")
    p85: float = Field(..., ge=0, description="85th percentile of per-path absolute percentage error")
    paths: int = Field(..., ge=0, description="Paths scored")


def usable_label_mask(label: PathMetrics) -> np.ndarray:
    return label.measured & (label.delays > 0)


def score_predictions(pred: np.ndarray, label: PathMetrics) -> np.ndarray:
    """Per-path absolute percentage error over paths with a positive measured delay"""
    mask = usable_label_mask(label)
    truth = label.delays[mask]
    return np.abs(np.asarray(pred)[mask] - truth) / truth


def summarize(pred: np.ndarray, truth: np.ndarray) -> EvaluationReport:
    if len(truth) == 0:
        return EvaluationReport(mape=0.0, p15=0.0, p85=0.0, paths=0)
    errors = np.abs(pred - truth) / truth
    return EvaluationReport(
        mape=float(mean_absolute_percentage_error(truth, pred)),
        p15=float(np.percentile(errors, LOW_PERCENTILE)),
        p85=float(np.percentile(errors, HIGH_PERCENTILE)),
        paths=int(len(truth)),
    )


def prediction_frame(model_name: str, samples: Sequence[Sample], predictions: Sequence[np.ndarray]) -> pd.DataFrame:
    """One row per scored path: model,sample,src,dst,pred_s,label_s,ape"""
    rows: List[Dict] = []
    for sample, pred in zip(samples, predictions):
        mask = usable_label_mask(sample.label)
        errors = iter(score_predictions(pred, sample.label))
        for i, (path, ok) in enumerate(zip(sample.label.paths, mask)):
            if not ok:
                continue
            rows.append(
                {
                    "model": model_name,
                    "sample": sample.index,
                    "src": path.src,
                    "dst": path.dst,
                    "pred_s": float(pred[i]),
                    "label_s": path.mean_delay,
                    "ape": float(next(errors)),
                }
            )
    return pd.DataFrame(rows, columns=["model", "sample", "src", "dst", "pred_s", "label_s", "ape"])


def report_from_frame(frame: pd.DataFrame) -> EvaluationReport:
    return summarize(frame["pred_s"].to_numpy(), frame["label_s"].to_numpy())


def size_bucket_table(frames: Dict[tuple, pd.DataFrame]) -> pd.DataFrame:
    """Rows model,size_bucket,mape,p15,p85 keyed by (model, size_bucket)"""
    rows = []
    for (model_name, bucket), frame in frames.items():
        report = report_from_frame(frame)
        rows.append({"model": model_name, "size_bucket": bucket, "mape": report.mape, "p15": report.p15, "p85": report.p85})
    return pd.DataFrame(rows, columns=["model", "size_bucket", "mape", "p15", "p85"])
