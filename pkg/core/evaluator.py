"""ACC/AUC overall and per sequence-length bucket, plus the practice-number similarity diagnostic."""

import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from core.console import log_info, log_warning
from core.errors import DataError
from core.models import BucketMetrics, EvalReport
from core.network import SfktModel

ACC_THRESHOLD = 0.5
EVAL_BATCH_SIZE = 256


@dataclass(frozen=True)
class Prediction:
    student: int
    step: int
    total_length: int
    score: float
    label: int


def auc(scores, labels) -> Optional[float]:
    """
    Rank-based (Mann-Whitney) AUC with half credit for ties.

    Returns None when only one class is present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = pd.Series(scores).rank(method="average").to_numpy()
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def acc(scores, labels, threshold: float = ACC_THRESHOLD) -> Optional[float]:
    """Fraction of records where (score >= threshold) equals the label."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.size == 0:
        return None
    return float(((scores >= threshold).astype(np.int64) == labels).mean())


def bucket_bins(edges: Sequence[int]) -> List[float]:
    return [0] + [int(e) for e in edges] + [math.inf]


def bucket_label(lower: int, upper: Optional[int]) -> str:
    return f"({lower},inf)" if upper is None else f"({lower},{upper}]"


def _metrics(label: str, lower, upper, scores, labels) -> BucketMetrics:
    return BucketMetrics(
        label=label,
        lower=lower,
        upper=upper,
        count=int(len(scores)),
        acc=acc(scores, labels),
        auc=auc(scores, labels),
    )


def bucketed_report(
    predictions: Sequence[Prediction],
    edges: Sequence[int] = (10, 50, 100, 200),
    split: str = "test",
    config: Optional[dict] = None,
    version: Optional[dict] = None,
) -> EvalReport:
    """
    Overall and per-length-bucket metrics.

    Each prediction falls in exactly one right-closed bucket chosen by the
    student's total sequence length; every bucket is reported, empty or not.
    """
    df = pd.DataFrame([asdict(p) for p in predictions], columns=["student", "step", "total_length", "score", "label"])
    bins = bucket_bins(edges)
    df["bucket"] = pd.cut(df["total_length"].astype(np.int64), bins=bins, right=True, labels=False)

    buckets = []
    for i, (lower, upper) in enumerate(zip(bins[:-1], bins[1:])):
        upper = None if math.isinf(upper) else int(upper)
        part = df[df["bucket"] == i]
        buckets.append(_metrics(bucket_label(int(lower), upper), int(lower), upper, part["score"], part["label"]))

    return EvalReport(
        split=split,
        overall=_metrics("overall", None, None, df["score"], df["label"]),
        buckets=buckets,
        config=config or {},
        version=version or {},
    )


def predict_records(model: SfktModel, dataset, records, batch_size: int = EVAL_BATCH_SIZE) -> List[Prediction]:
    """Evaluation-mode scores for records (no dropout, no auxiliary views)."""
    predictions = []
    for lo in range(0, len(records), batch_size):
        batch = records[lo:lo + batch_size]
        scores = model.forward_batch(dataset, batch, train=False).predictions.data
        for record, score in zip(batch, scores):
            predictions.append(Prediction(
                student=dataset.windows[record.window].student,
                step=dataset.global_step(record),
                total_length=dataset.total_length(record),
                score=float(score),
                label=dataset.label(record),
            ))
    return predictions


def evaluate_split(
    model: SfktModel,
    dataset,
    split: str = "test",
    edges: Sequence[int] = (10, 50, 100, 200),
    config: Optional[dict] = None,
    version: Optional[dict] = None,
) -> EvalReport:
    records = dataset.records(split)
    if not records:
        raise DataError(f"the {split} split is empty")
    report = bucketed_report(predict_records(model, dataset, records), edges, split, config, version)
    log_info("Eval", f"{split}: {report.overall.count} records, AUC {report.overall.auc}, ACC {report.overall.acc}")
    return report


def _mean(values: List[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def average_reports(reports: Sequence[EvalReport]) -> EvalReport:
    """Mean ACC/AUC across seeds (absent values are skipped, counts come from the first run)."""
    if not reports:
        raise DataError("no reports to average")

    def merge(items: List[BucketMetrics]) -> BucketMetrics:
        first = items[0]
        return BucketMetrics(
            label=first.label, lower=first.lower, upper=first.upper, count=first.count,
            acc=_mean([m.acc for m in items]), auc=_mean([m.auc for m in items]),
        )

    return EvalReport(
        split=reports[0].split,
        overall=merge([r.overall for r in reports]),
        buckets=[merge(list(group)) for group in zip(*(r.buckets for r in reports))],
        config=reports[0].config,
        version=reports[0].version,
    )


# ---------------------------------------------------------------------------
# Practice-number similarity
# ---------------------------------------------------------------------------

@dataclass
class SimilarityMatrix:
    counts: np.ndarray
    matrix: np.ndarray
    zero_norm: List[int]
    spearman: Optional[float]


def practice_number_similarity(model: SfktModel, side: str = "success", max_count: int = 50) -> SimilarityMatrix:
    """Cosine similarity between the learning-gain vectors of counts 0..max_count."""
    counts = np.arange(max_count + 1)
    vectors = model.total_term.projector(side).project(counts, model.stats).data.astype(np.float64)
    norms = np.linalg.norm(vectors, axis=1)
    zero = norms == 0
    if zero.any():
        log_warning("Eval", f"{int(zero.sum())} zero-norm gain vector(s); their similarities are recorded as 0")
    unit = np.divide(vectors, norms[:, None], out=np.zeros_like(vectors), where=~zero[:, None])
    matrix = unit @ unit.T
    matrix = (matrix + matrix.T) / 2.0
    return SimilarityMatrix(counts, matrix, np.flatnonzero(zero).tolist(), distance_spearman(matrix))


def distance_spearman(matrix: np.ndarray) -> Optional[float]:
    """Spearman correlation between |i - j| and similarity over the upper triangle."""
    i, j = np.triu_indices(len(matrix), k=1)
    if i.size < 2:
        return None
    distance = pd.Series(np.abs(i - j)).rank().to_numpy()
    similarity = pd.Series(matrix[i, j]).rank().to_numpy()
    if distance.std() == 0 or similarity.std() == 0:
        return None
    return float(np.corrcoef(distance, similarity)[0, 1])


def write_similarity_csv(result: SimilarityMatrix, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    labels = [int(c) for c in result.counts]
    pd.DataFrame(result.matrix, index=labels, columns=labels).to_csv(path, index_label="count")
    return path
