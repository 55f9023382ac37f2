"""Pydantic models for validated input rows and machine-readable outputs."""

from typing import Dict, List, Optional, Tuple

import pandas as pd
from pydantic import BaseModel, Field, field_validator


class InteractionRow(BaseModel):
    """One CSV row after validation."""
    student_id: str = Field(..., min_length=1)
    question_id: str = Field(..., min_length=1)
    concept_ids: Tuple[str, ...]
    correct: int
    order: int

    @field_validator("concept_ids", mode="before")
    @classmethod
    def split_concepts(cls, value):
        if isinstance(value, str):
            value = value.split(";")
        # Ordered set: first occurrence wins
        concepts = tuple(dict.fromkeys(c.strip() for c in value if c and c.strip()))
        if not concepts:
            raise ValueError("concept_ids must name at least one concept")
        return concepts

    @field_validator("correct", mode="before")
    @classmethod
    def binary_response(cls, value):
        text = str(value).strip()
        if text not in ("0", "1"):
            raise ValueError(f"correct must be 0 or 1, got {value!r}")
        return int(text)

    @field_validator("order", mode="before")
    @classmethod
    def order_key(cls, value):
        text = str(value).strip()
        try:
            return int(text)
        except ValueError:
            pass
        # Timestamps order by their nanosecond value
        stamp = pd.to_datetime(text, errors="coerce")
        if pd.isna(stamp):
            raise ValueError(f"order must be an integer or timestamp, got {value!r}")
        return int(stamp.value)


class BucketMetrics(BaseModel):
    """ACC/AUC over one sequence-length bucket (or overall)."""
    label: str
    lower: Optional[int] = None
    upper: Optional[int] = None
    count: int = 0
    acc: Optional[float] = None
    auc: Optional[float] = None


class EvalReport(BaseModel):
    """Overall and per-bucket metrics for one evaluated split."""
    split: str = "test"
    overall: BucketMetrics
    buckets: List[BucketMetrics]
    config: Dict = Field(default_factory=dict)
    version: Dict = Field(default_factory=dict)

    def bucket_count_total(self) -> int:
        return sum(b.count for b in self.buckets)


class CheckResult(BaseModel):
    """Outcome of one verification check."""
    name: str
    passed: bool
    value: Optional[float] = None
    threshold: Optional[float] = None
    detail: str = ""
    seconds: float = 0.0


class VerificationReport(BaseModel):
    checks: List[CheckResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)
